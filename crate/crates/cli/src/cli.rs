use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ConfigFile;

#[derive(Debug, Parser)]
#[command(
    name = "volsmile",
    version,
    about = "Fit volatility smiles and test them for spurious density minima"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Formula,
    Numeric,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML settings file; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory [default: $VOLSMILE_OUT, else .].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Time to maturity in years; overrides a `maturity` row in the quote file.
    #[arg(long, global = true)]
    pub maturity: Option<f64>,
    #[arg(long, global = true)]
    pub spot: Option<f64>,
    #[arg(long, global = true)]
    pub rate: Option<f64>,
    /// Density grid points.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Grid half-width in units of gχ√T.
    #[arg(long, global = true)]
    pub span: Option<f64>,
    /// Upper end of the numeric χ_c search.
    #[arg(long = "chi-max", global = true)]
    pub chi_max: Option<f64>,
    /// Strike step of the finite-difference density.
    #[arg(long = "oracle-step", global = true)]
    pub oracle_step: Option<f64>,
    /// How χ_c is obtained.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub svg: bool,
}

impl GlobalArgs {
    pub fn overrides(&self) -> ConfigFile {
        ConfigFile {
            grid: self.grid,
            span: self.span,
            oracle_step: self.oracle_step,
            chi_max: self.chi_max,
            out: self.out.clone(),
            svg: self.svg.then_some(true),
            mode: self.mode.map(|m| match m {
                Mode::Formula => "formula".to_string(),
                Mode::Numeric => "numeric".to_string(),
            }),
            ..ConfigFile::default()
        }
    }
}

/// Where smile parameters come from: a quote file to fit, a prior
/// `fit.txt`, or explicit values.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamSource {
    /// Quote file to fit first.
    pub quotes: Option<PathBuf>,
    /// key=value report holding g, chi, n and maturity.
    #[arg(long, value_name = "FILE", conflicts_with = "quotes")]
    pub params: Option<PathBuf>,
    #[arg(long, requires_all = ["chi", "n"], conflicts_with_all = ["quotes", "params"])]
    pub g: Option<f64>,
    #[arg(long, requires_all = ["g", "n"])]
    pub chi: Option<f64>,
    #[arg(long, requires_all = ["g", "chi"])]
    pub n: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit (g, χ, n) to a quote file.
    Fit { quotes: PathBuf },
    /// Compare χ with χ_c and analyse the implied density.
    Check(ParamSource),
    /// Fit, check, and refit with χ ≤ χ_c when the free fit is not adiabatic.
    Refit { quotes: PathBuf },
    /// Write the implied return density.
    Density(ParamSource),
    /// Numeric χ_c over a (g, ρ, T) lattice.
    Sweep(SweepArgs),
    /// Fit the closed-form χ_c to a sweep file.
    Calibrate {
        sweep: PathBuf,
        /// Start from the reference constants rather than a rough guess.
        #[arg(long)]
        reference_start: bool,
    },
    /// Compare the closed-form density with second differences of call prices.
    BlOracle {
        #[command(flatten)]
        source: ParamSource,
        /// Number of evaluation points across the density.
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Values per axis.
    #[arg(long, default_value_t = 6)]
    pub count: usize,
    /// g range as MIN:MAX.
    #[arg(long = "g-range", value_parser = parse_range)]
    pub g_range: Option<(f64, f64)>,
    /// ρ = n/(g²T) range as MIN:MAX.
    #[arg(long = "rho-range", value_parser = parse_range)]
    pub rho_range: Option<(f64, f64)>,
    /// Maturity range in years as MIN:MAX.
    #[arg(long = "t-range", value_parser = parse_range)]
    pub t_range: Option<(f64, f64)>,
    /// Output file [default: <out>/sweep.csv].
    #[arg(long, value_name = "FILE")]
    pub file: Option<PathBuf>,
    /// Recompute every row even if the output file already has results.
    #[arg(long)]
    pub fresh: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("`{a}` is not a number"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("`{b}` is not a number"))?;
    if !(a > 0.0 && b >= a && b.is_finite()) {
        return Err(format!("need 0 < MIN <= MAX, got {a}:{b}"));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0.03:0.5"), Ok((0.03, 0.5)));
        assert!(parse_range("0.5:0.03").is_err());
        assert!(parse_range("1").is_err());
    }
}
