//! `key=value` reports and typed CSV tables.

use std::io::Write;
use std::path::Path;

use volsmile_core::{RowStatus, SmileFitResult, SmileParams, SweepRow};

use crate::error::{CliError, CliResult};

/// Shortest round-trip text, in exponent form outside `[1e-4, 1e15)`.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Values that can appear on the right of `key=`.
pub trait KvValue {
    fn render(&self) -> String;
}

impl KvValue for f64 {
    fn render(&self) -> String {
        fmt_num(*self)
    }
}

macro_rules! kv_display {
    ($($t:ty),*) => {
        $(impl KvValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        })*
    };
}

kv_display!(
    usize,
    bool,
    &str,
    String,
    volsmile_core::CheckMode,
    std::path::Display<'_>
);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl KvValue) -> &mut Self {
        self.entries.push((key.to_string(), value.render()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn number(&self, key: &str, path: &Path) -> CliResult<f64> {
        let raw = self.get(key).ok_or_else(|| CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("missing key `{key}`"),
        })?;
        raw.parse().map_err(|_| CliError::Parse {
            path: path.to_path_buf(),
            line: self.line_of(key),
            message: format!("`{key}` = `{raw}` is not a number"),
        })
    }

    fn line_of(&self, key: &str) -> u64 {
        self.entries
            .iter()
            .position(|(k, _)| k == key)
            .map_or(0, |i| i as u64 + 1)
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let mut out = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("expected key=value, found `{line}`"),
            })?;
            out.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.render()).map_err(|e| CliError::io(path, e))
    }
}

pub fn push_params(kv: &mut KeyValues, p: &SmileParams) {
    kv.push("g", p.g)
        .push("chi", p.chi)
        .push("n", p.n)
        .push("maturity", p.maturity);
}

pub fn fit_report(fit: &SmileFitResult) -> KeyValues {
    let mut kv = KeyValues::new();
    push_params(&mut kv, &fit.params);
    kv.push("residual_rms", fit.residual_rms)
        .push("converged", fit.converged)
        .push("constrained", fit.constrained)
        .push("iterations", fit.iterations);
    kv
}

/// Reads `g`, `chi`, `n` and `maturity` from a report such as `fit.txt`.
pub fn params_from_report(path: &Path) -> CliResult<SmileParams> {
    let kv = KeyValues::read(path)?;
    Ok(SmileParams::new(
        kv.number("g", path)?,
        kv.number("chi", path)?,
        kv.number("n", path)?,
        kv.number("maturity", path)?,
    )?)
}

/// A CSV table of floats under a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_to<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|&v| fmt_num(v)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| csv_error(path, e))
    }

    pub fn read(path: &Path, expected: &[&str]) -> CliResult<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(String::from)
            .collect();
        if header != expected {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header `{}` does not match `{}`", header.join(","), expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| CliError::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("`{f}` is not a number"),
                    })
                })
                .collect::<CliResult<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub const DENSITY_HEADER: [&str; 3] = ["x", "sigma", "density"];
pub const RESIDUAL_HEADER: [&str; 5] = ["coordinate", "x", "vol", "fitted", "residual"];
pub const COMPARISON_HEADER: [&str; 5] = [
    "x",
    "sigma_free",
    "density_free",
    "sigma_constrained",
    "density_constrained",
];
pub const ORACLE_HEADER: [&str; 6] = ["x", "strike", "analytic", "oracle", "relative_error", "disagreement"];
pub const SWEEP_HEADER: [&str; 6] = ["g", "T", "n", "rho", "chi_c", "status"];

pub fn write_sweep<W: Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        out.write_record([
            fmt_num(r.g),
            fmt_num(r.maturity),
            fmt_num(r.n),
            fmt_num(r.rho),
            fmt_num(r.chi_c),
            r.status.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_sweep(rows: &[SweepRow], path: &Path) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_sweep(rows, std::io::BufWriter::new(file)).map_err(|e| csv_error(path, e))
}

pub fn read_sweep(path: &Path) -> CliResult<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != SWEEP_HEADER {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected sweep header `{}`", SWEEP_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != SWEEP_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                SWEEP_HEADER.len(),
                record.len()
            )));
        }
        let num = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("`{}` is not a number", &record[i])))
        };
        let status: RowStatus = record[5]
            .parse()
            .map_err(|_| bad(format!("unknown status `{}`", &record[5])))?;
        rows.push(SweepRow {
            g: num(0)?,
            maturity: num(1)?,
            n: num(2)?,
            rho: num(3)?,
            chi_c: num(4)?,
            status,
        });
    }
    Ok(rows)
}
