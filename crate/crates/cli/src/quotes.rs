//! Smile quote files.
//!
//! ```text
//! # AUDUSD overnight
//! spot,0.7512
//! maturity,0.00274
//! delta,vol
//! 0.10,0.1931
//! 0.25,0.1802
//! ```
//!
//! Optional `spot`, `rate` and `maturity` rows precede a header naming the
//! quoting coordinate (`delta`, `x` or `strike`) and `vol`. Blank lines and
//! `#` comments are ignored.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use volsmile_core::bs::strike_to_x;
use volsmile_core::{MarketEnv, VolQuote};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Delta,
    X,
    Strike,
}

impl Coordinate {
    pub fn as_str(self) -> &'static str {
        match self {
            Coordinate::Delta => "delta",
            Coordinate::X => "x",
            Coordinate::Strike => "strike",
        }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Coordinate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "delta" => Ok(Coordinate::Delta),
            "x" => Ok(Coordinate::X),
            "strike" => Ok(Coordinate::Strike),
            other => Err(format!("unknown coordinate `{other}` (expected delta, x or strike)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteFile {
    pub coordinate: Coordinate,
    /// `(coordinate, vol)` in file order.
    pub rows: Vec<(f64, f64)>,
    pub spot: Option<f64>,
    pub rate: Option<f64>,
    pub maturity: Option<f64>,
}

struct Diagnostics<'a> {
    path: &'a Path,
}

impl Diagnostics<'_> {
    fn at(&self, line: u64, message: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn number(&self, line: u64, what: &str, field: &str) -> CliResult<f64> {
        let v: f64 = field
            .parse()
            .map_err(|_| self.at(line, format!("{what}: `{field}` is not a number")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.at(line, format!("{what}: `{field}` is not finite")))
        }
    }
}

impl QuoteFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses file contents; `path` is used only in diagnostics.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let diag = Diagnostics { path };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());

        let mut coordinate = None;
        let (mut spot, mut rate, mut maturity) = (None, None, None);
        let mut rows: Vec<(f64, f64)> = Vec::new();
        let mut seen: Vec<(f64, u64)> = Vec::new();

        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                diag.at(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() != 2 {
                return Err(diag.at(line, format!("expected 2 fields, found {}", record.len())));
            }
            let (key, value) = (&record[0], &record[1]);

            let Some(coord) = coordinate else {
                let slot = match key.to_ascii_lowercase().as_str() {
                    "spot" => Some(&mut spot),
                    "rate" => Some(&mut rate),
                    "maturity" => Some(&mut maturity),
                    _ => None,
                };
                if let Some(slot) = slot {
                    if slot.is_some() {
                        return Err(diag.at(line, format!("duplicate `{key}` row")));
                    }
                    *slot = Some(diag.number(line, key, value)?);
                    continue;
                }
                let c: Coordinate = key.parse().map_err(|m: String| diag.at(line, m))?;
                if !value.eq_ignore_ascii_case("vol") {
                    return Err(diag.at(line, format!("second header column must be `vol`, found `{value}`")));
                }
                coordinate = Some(c);
                continue;
            };

            let at = diag.number(line, coord.as_str(), key)?;
            let vol = diag.number(line, "vol", value)?;
            if vol <= 0.0 {
                return Err(diag.at(line, format!("vol must be positive, found {vol}")));
            }
            match coord {
                Coordinate::Delta if !(at > 0.0 && at < 1.0) => {
                    return Err(diag.at(line, format!("delta must lie in (0, 1), found {at}")))
                }
                Coordinate::Strike if at <= 0.0 => {
                    return Err(diag.at(line, format!("strike must be positive, found {at}")))
                }
                _ => {}
            }
            if let Some(&(_, first)) = seen.iter().find(|(c, _)| *c == at) {
                return Err(diag.at(line, format!("duplicate {coord} {at} (first seen on line {first})")));
            }
            seen.push((at, line));
            rows.push((at, vol));
        }

        let coordinate = coordinate.ok_or_else(|| diag.at(0, "missing `delta|x|strike,vol` header"))?;
        if rows.is_empty() {
            return Err(diag.at(0, "no quote rows"));
        }
        for (name, v) in [("spot", spot), ("maturity", maturity)] {
            if v.is_some_and(|v| v <= 0.0) {
                return Err(diag.at(0, format!("{name} must be positive")));
            }
        }
        Ok(Self {
            coordinate,
            rows,
            spot,
            rate,
            maturity,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (name, v) in [("spot", self.spot), ("rate", self.rate), ("maturity", self.maturity)] {
            if let Some(v) = v {
                writeln!(w, "{name},{v}")?;
            }
        }
        writeln!(w, "{},vol", self.coordinate)?;
        for (c, v) in &self.rows {
            writeln!(w, "{c},{v}")?;
        }
        Ok(())
    }

    /// Quotes in the core's coordinates; strike rows need `env`.
    pub fn vol_quotes(&self, env: Option<&MarketEnv>) -> CliResult<Vec<VolQuote>> {
        self.rows
            .iter()
            .map(|&(c, vol)| match self.coordinate {
                Coordinate::Delta => Ok(VolQuote::at_delta(c, vol)),
                Coordinate::X => Ok(VolQuote::at_x(c, vol)),
                Coordinate::Strike => {
                    let env = env.ok_or_else(|| CliError::Input("strike quotes need a spot price".into()))?;
                    Ok(VolQuote::at_x(strike_to_x(env, c)?.value(), vol))
                }
            })
            .collect()
    }
}
