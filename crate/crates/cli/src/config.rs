//! Run settings: command-line flags override a TOML file, which overrides
//! the `VOLSMILE_OUT` environment variable, which overrides built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use volsmile_core::{AnalyzeOptions, CheckMode, ChiSearchOptions, GridSpec, OracleOptions};

use crate::error::{CliError, CliResult};

pub const OUT_ENV: &str = "VOLSMILE_OUT";

/// Every field optional; absent keys fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub grid: Option<usize>,
    pub span: Option<f64>,
    pub oracle_step: Option<f64>,
    pub chi_start: Option<f64>,
    pub chi_step: Option<f64>,
    pub chi_tolerance: Option<f64>,
    pub chi_max: Option<f64>,
    pub out: Option<PathBuf>,
    pub svg: Option<bool>,
    pub mode: Option<String>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1);
            CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: usize,
    pub span: f64,
    pub oracle_step: Option<f64>,
    pub chi_start: f64,
    pub chi_step: f64,
    pub chi_tolerance: f64,
    pub chi_max: f64,
    pub out: PathBuf,
    pub svg: bool,
    pub mode: CheckMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        let search = ChiSearchOptions::default();
        Self {
            grid: grid.points,
            span: grid.span,
            oracle_step: None,
            chi_start: search.chi_start,
            chi_step: search.scan_step,
            chi_tolerance: search.tolerance,
            chi_max: search.chi_max,
            out: PathBuf::from("."),
            svg: false,
            mode: CheckMode::Formula,
        }
    }
}

impl RunConfig {
    /// Layers `flags` over `file` over `env_out` over the defaults.
    pub fn resolve(flags: &ConfigFile, file: Option<&ConfigFile>, env_out: Option<PathBuf>) -> CliResult<Self> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        let d = Self::default();
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                flags
                    .$field
                    .clone()
                    .or_else(|| file.$field.clone())
                    .unwrap_or($default)
            };
        }
        let mode = match flags.mode.as_ref().or(file.mode.as_ref()) {
            Some(m) => m
                .parse()
                .map_err(|_| CliError::Input(format!("mode must be formula or numeric, got `{m}`")))?,
            None => d.mode,
        };
        let out = flags
            .out
            .clone()
            .or_else(|| file.out.clone())
            .or(env_out.filter(|p| !p.as_os_str().is_empty()))
            .unwrap_or(d.out);
        let cfg = Self {
            grid: pick!(grid, d.grid),
            span: pick!(span, d.span),
            oracle_step: flags.oracle_step.or(file.oracle_step),
            chi_start: pick!(chi_start, d.chi_start),
            chi_step: pick!(chi_step, d.chi_step),
            chi_tolerance: pick!(chi_tolerance, d.chi_tolerance),
            chi_max: pick!(chi_max, d.chi_max),
            out,
            svg: pick!(svg, d.svg),
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let positive = [
            ("span", self.span),
            ("oracle_step", self.oracle_step.unwrap_or(1.0)),
            ("chi_step", self.chi_step),
            ("chi_tolerance", self.chi_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Input(format!("{name} must be positive, got {v}")));
            }
        }
        if self.grid < 3 {
            return Err(CliError::Input(format!(
                "grid must have at least 3 points, got {}",
                self.grid
            )));
        }
        if !(self.chi_start > 1.0 && self.chi_max > self.chi_start && self.chi_max.is_finite()) {
            return Err(CliError::Input(format!(
                "chi search needs 1 < chi_start < chi_max, got {} and {}",
                self.chi_start, self.chi_max
            )));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            points: self.grid,
            span: self.span,
        }
    }

    pub fn search(&self) -> ChiSearchOptions {
        ChiSearchOptions {
            grid: self.grid_spec(),
            analyze: AnalyzeOptions::default(),
            chi_start: self.chi_start,
            scan_step: self.chi_step,
            tolerance: self.chi_tolerance,
            chi_max: self.chi_max,
            ..ChiSearchOptions::default()
        }
    }

    pub fn oracle(&self) -> OracleOptions {
        OracleOptions {
            step: self.oracle_step,
            ..OracleOptions::default()
        }
    }

    pub fn out_path(&self, name: &str) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(self.out.join(name))
    }
}
