use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use volsmile_core::adiabatic::{chi_critical_numeric, sweep_point};
use volsmile_core::bs::x_to_strike;
use volsmile_core::density::bl_return_density;
use volsmile_core::{
    adiabatic_check, analyze, calibrate_critical_fit, constrained_fit_smile, fit_smile, return_density,
    AdiabaticVerdict, Axis, CheckMode, CriticalFitParams, DensityCurve, DensityReport, LogReturn, MarketEnv, RowStatus,
    SmileFitResult, SmileParams, SweepGrid, SweepRow, VolQuote,
};

use crate::cli::{Command, GlobalArgs, ParamSource, SweepArgs};
use crate::config::{ConfigFile, RunConfig, OUT_ENV};
use crate::error::{CliError, CliResult, Exit};
use crate::quotes::QuoteFile;
use crate::report::{
    fit_report, fmt_num, params_from_report, push_params, read_sweep, save_sweep, KeyValues, Table, COMPARISON_HEADER,
    DENSITY_HEADER, ORACLE_HEADER, RESIDUAL_HEADER,
};
use crate::svg::{Plot, Series};

/// Spot used when neither a flag nor the quote file gives one.
pub const DEFAULT_SPOT: f64 = 1.0;
/// Fit-improve-check rounds before a constrained refit is abandoned.
const REFIT_ROUNDS: usize = 8;
/// Share of sweep rows that must succeed for a zero exit.
const SWEEP_SUCCESS_SHARE: f64 = 0.9;
const SWEEP_CHUNK: usize = 64;

pub struct Session {
    pub global: GlobalArgs,
    pub config: RunConfig,
}

impl Session {
    pub fn new(global: GlobalArgs) -> CliResult<Self> {
        let file = global.config.as_deref().map(ConfigFile::read).transpose()?;
        let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
        let config = RunConfig::resolve(&global.overrides(), file.as_ref(), env_out)?;
        Ok(Self { global, config })
    }

    pub fn run(&self, command: &Command, out: &mut dyn Write) -> CliResult<Exit> {
        match command {
            Command::Fit { quotes } => self.fit(quotes, out),
            Command::Check(src) => self.check(src, out),
            Command::Refit { quotes } => self.refit(quotes, out),
            Command::Density(src) => self.density(src, out),
            Command::Sweep(args) => self.sweep(args, out),
            Command::Calibrate { sweep, reference_start } => self.calibrate(sweep, *reference_start, out),
            Command::BlOracle { source, points } => self.bl_oracle(source, *points, out),
        }
    }

    fn market(&self, file: Option<&QuoteFile>, maturity: f64) -> CliResult<MarketEnv> {
        let spot = self.global.spot.or(file.and_then(|f| f.spot)).unwrap_or(DEFAULT_SPOT);
        let rate = self.global.rate.or(file.and_then(|f| f.rate)).unwrap_or(0.0);
        Ok(MarketEnv::new(spot, rate, maturity)?)
    }

    fn load_quotes(&self, path: &Path) -> CliResult<Loaded> {
        let file = QuoteFile::read(path)?;
        let maturity = self.global.maturity.or(file.maturity).ok_or_else(|| {
            CliError::Input(format!(
                "{}: no maturity (add a `maturity` row or pass --maturity)",
                path.display()
            ))
        })?;
        let env = self.market(Some(&file), maturity)?;
        let quotes = file.vol_quotes(Some(&env))?;
        Ok(Loaded { file, quotes, maturity })
    }

    fn load_params(&self, src: &ParamSource) -> CliResult<(SmileParams, Option<Loaded>)> {
        if let Some(path) = &src.quotes {
            let loaded = self.load_quotes(path)?;
            let fit = fit_smile(&loaded.quotes, loaded.maturity, None)?;
            return Ok((fit.params, Some(loaded)));
        }
        if let Some(path) = &src.params {
            let p = params_from_report(path)?;
            let maturity = self.global.maturity.unwrap_or(p.maturity);
            return Ok((SmileParams::new(p.g, p.chi, p.n, maturity)?, None));
        }
        match (src.g, src.chi, src.n) {
            (Some(g), Some(chi), Some(n)) => {
                let maturity = self
                    .global
                    .maturity
                    .ok_or_else(|| CliError::Input("--g/--chi/--n need --maturity".into()))?;
                Ok((SmileParams::new(g, chi, n, maturity)?, None))
            }
            _ => Err(CliError::Input(
                "give a quote file, --params FILE, or --g --chi --n".into(),
            )),
        }
    }

    fn verdict(&self, params: &SmileParams) -> CliResult<AdiabaticVerdict> {
        Ok(adiabatic_check(
            params,
            &CriticalFitParams::REFERENCE,
            self.config.mode,
            &self.config.search(),
        )?)
    }

    fn density_report(&self, params: &SmileParams) -> CliResult<(DensityCurve, DensityReport)> {
        let curve = DensityCurve::for_smile(params, &self.config.grid_spec());
        let report = analyze(&curve, &Default::default())?;
        Ok((curve, report))
    }

    fn write_svg(&self, name: &str, plot: Plot) -> CliResult<Option<PathBuf>> {
        if !self.config.svg {
            return Ok(None);
        }
        let path = self.config.out_path(name)?;
        std::fs::write(&path, plot.render()).map_err(|e| CliError::io(&path, e))?;
        Ok(Some(path))
    }

    fn write_fit(&self, fit: &SmileFitResult, loaded: &Loaded, kv: &mut KeyValues) -> CliResult<()> {
        let p = fit.params;
        let mut table = Table::new(&RESIDUAL_HEADER);
        for (&(coord, vol), q) in loaded.file.rows.iter().zip(&loaded.quotes) {
            let x = q.x(p.maturity)?;
            let fitted = p.sigma(x);
            table.push(vec![coord, x, vol, fitted, fitted - vol]);
        }
        let residuals = self.config.out_path("fit_residuals.csv")?;
        table.write(&residuals)?;
        let report = self.config.out_path("fit.txt")?;
        kv.write(&report)?;

        let xs = table.column("x").unwrap_or_default();
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pad = 0.1 * (hi - lo).max(1e-6);
        let curve: Vec<(f64, f64)> = (0..=200)
            .map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 200.0)
            .map(|x| (x, p.sigma(x)))
            .collect();
        let quotes: Vec<(f64, f64)> = xs
            .iter()
            .copied()
            .zip(table.column("vol").unwrap_or_default())
            .collect();
        self.write_svg(
            "smile.svg",
            Plot {
                title: format!("g = {:.4}, chi = {:.4}, n = {:.3e}", p.g, p.chi, p.n),
                x_label: "x".into(),
                y_label: "implied vol".into(),
                series: vec![Series::markers("quotes", quotes), Series::line("fit", curve)],
            },
        )?;
        Ok(())
    }

    fn fit(&self, path: &Path, out: &mut dyn Write) -> CliResult<Exit> {
        let loaded = self.load_quotes(path)?;
        let fit = fit_smile(&loaded.quotes, loaded.maturity, None)?;
        let mut kv = fit_report(&fit);
        self.write_fit(&fit, &loaded, &mut kv)?;
        emit(out, &kv)?;
        Ok(Exit::Ok)
    }

    fn write_density(&self, params: &SmileParams, curve: &DensityCurve) -> CliResult<()> {
        let mut table = Table::new(&DENSITY_HEADER);
        for (&x, &p) in curve.xs.iter().zip(&curve.ps) {
            table.push(vec![x, params.sigma(x), p]);
        }
        table.write(&self.config.out_path("density.csv")?)?;
        self.write_svg(
            "density.svg",
            Plot {
                title: format!(
                    "g = {:.4}, chi = {:.4}, n = {:.3e}, T = {:.4}",
                    params.g, params.chi, params.n, params.maturity
                ),
                x_label: "x".into(),
                y_label: "P(x)".into(),
                series: vec![Series::line(
                    "density",
                    curve.xs.iter().copied().zip(curve.ps.iter().copied()).collect(),
                )],
            },
        )?;
        Ok(())
    }

    fn check(&self, src: &ParamSource, out: &mut dyn Write) -> CliResult<Exit> {
        let (params, _) = self.load_params(src)?;
        let verdict = self.verdict(&params)?;
        let (curve, report) = self.density_report(&params)?;
        self.write_density(&params, &curve)?;

        let exit = if !report.negative_regions.is_empty() {
            Exit::NegativeDensity
        } else if !verdict.adiabatic || !report.unimodal {
            Exit::NonAdiabatic
        } else {
            Exit::Ok
        };
        let mut kv = KeyValues::new();
        push_params(&mut kv, &params);
        kv.push("chi_opt", verdict.chi_opt)
            .push("chi_c", verdict.chi_c)
            .push("mode", verdict.source);
        kv.push("adiabatic", verdict.adiabatic);
        push_density(&mut kv, &report);
        kv.push(
            "verdict",
            match exit {
                Exit::NegativeDensity => "negative-density",
                Exit::NonAdiabatic => "non-adiabatic",
                _ => "adiabatic",
            },
        );
        emit(out, &kv)?;
        Ok(exit)
    }

    fn density(&self, src: &ParamSource, out: &mut dyn Write) -> CliResult<Exit> {
        let (params, _) = self.load_params(src)?;
        let (curve, report) = self.density_report(&params)?;
        self.write_density(&params, &curve)?;
        let mut kv = KeyValues::new();
        push_params(&mut kv, &params);
        push_density(&mut kv, &report);
        emit(out, &kv)?;
        Ok(Exit::Ok)
    }

    /// Largest χ that is still unimodal for the given `(g, n, T)`.
    fn numeric_bound(&self, params: &SmileParams) -> CliResult<f64> {
        let crit = chi_critical_numeric(params.g, params.n, params.maturity, &self.config.search())
            .map_err(|e| CliError::RefitFailed(format!("numeric chi_c search: {e}")))?;
        Ok(crit.last_unimodal)
    }

    fn refit(&self, path: &Path, out: &mut dyn Write) -> CliResult<Exit> {
        let loaded = self.load_quotes(path)?;
        let free = fit_smile(&loaded.quotes, loaded.maturity, None)?;
        let verdict = self.verdict(&free.params)?;
        let (_, free_report) = self.density_report(&free.params)?;
        let clean = |r: &DensityReport| r.unimodal && r.negative_regions.is_empty();

        if verdict.adiabatic && clean(&free_report) {
            let mut kv = fit_report(&free);
            self.write_fit(&free, &loaded, &mut kv)?;
            emit(out, &kv)?;
            return Ok(Exit::Ok);
        }

        let mut bound = match (verdict.adiabatic, self.config.mode) {
            (false, CheckMode::Formula) => verdict.chi_c,
            _ => self.numeric_bound(&free.params)?,
        };
        let mut retries = 0;
        let constrained = loop {
            let fit = constrained_fit_smile(&loaded.quotes, loaded.maturity, bound)
                .map_err(|e| CliError::RefitFailed(format!("chi <= {bound}: {e}")))?;
            let (_, report) = self.density_report(&fit.params)?;
            if clean(&report) {
                break fit;
            }
            retries += 1;
            if retries >= REFIT_ROUNDS {
                return Err(CliError::RefitFailed(format!(
                    "density still has spurious extrema after {retries} rounds (chi = {}, bound = {bound})",
                    fit.params.chi
                )));
            }
            // refitting moves (g, n) and with them chi_c, so step past the last move
            let next = self.numeric_bound(&fit.params)?;
            bound = if next < bound {
                (2.0 * next - bound).max(1.0)
            } else {
                next.min(bound)
            };
        };

        let mut kv = fit_report(&constrained);
        kv.push("chi_bound", bound)
            .push("chi_c", verdict.chi_c)
            .push("mode", verdict.source);
        kv.push("numeric_retries", retries);
        kv.push("free_g", free.params.g)
            .push("free_chi", free.params.chi)
            .push("free_n", free.params.n);
        kv.push("free_residual_rms", free.residual_rms);
        self.write_fit(&constrained, &loaded, &mut kv)?;
        self.write_comparison(&free.params, &constrained.params)?;
        emit(out, &kv)?;
        Ok(Exit::Ok)
    }

    fn write_comparison(&self, free: &SmileParams, constrained: &SmileParams) -> CliResult<()> {
        let centre = 0.5 * (free.x_min() + constrained.x_min());
        let half = self.config.span * free.width_scale().max(constrained.width_scale());
        let m = self.config.grid;
        let mut table = Table::new(&COMPARISON_HEADER);
        for i in 0..m {
            let x = centre - half + 2.0 * half * i as f64 / (m - 1) as f64;
            table.push(vec![
                x,
                free.sigma(x),
                return_density(free, x),
                constrained.sigma(x),
                return_density(constrained, x),
            ]);
        }
        table.write(&self.config.out_path("comparison.csv")?)?;
        let pick = |col: usize| table.rows.iter().map(|r| (r[0], r[col])).collect::<Vec<_>>();
        self.write_svg(
            "comparison.svg",
            Plot {
                title: format!("free chi = {:.4}, constrained chi = {:.4}", free.chi, constrained.chi),
                x_label: "x".into(),
                y_label: "P(x)".into(),
                series: vec![Series::line("free", pick(2)), Series::line("constrained", pick(4))],
            },
        )?;
        Ok(())
    }

    fn sweep(&self, args: &SweepArgs, out: &mut dyn Write) -> CliResult<Exit> {
        let axis = |range: Option<(f64, f64)>, default: (f64, f64)| -> CliResult<Axis> {
            let (lo, hi) = range.unwrap_or(default);
            let count = if lo == hi { 1 } else { args.count };
            Ok(Axis::new(lo, hi, count)?)
        };
        let grid = SweepGrid {
            g: axis(args.g_range, SweepGrid::G_RANGE)?,
            rho: axis(args.rho_range, SweepGrid::RHO_RANGE)?,
            maturity: axis(args.t_range, SweepGrid::MATURITY_RANGE)?,
        };
        let path = match &args.file {
            Some(p) => p.clone(),
            None => self.config.out_path("sweep.csv")?,
        };
        let partial = partial_path(&path);

        let mut done: HashMap<[u64; 3], SweepRow> = HashMap::new();
        if !args.fresh {
            for p in [&path, &partial] {
                if p.exists() {
                    for row in read_sweep(p)? {
                        if row.status == RowStatus::Ok {
                            done.insert(key(&row), row);
                        }
                    }
                }
            }
        }

        let search = self.config.search();
        let points = grid.points();
        let mut rows: Vec<SweepRow> = Vec::with_capacity(points.len());
        let mut reused = 0;
        for chunk in points.chunks(SWEEP_CHUNK) {
            let computed: Vec<(SweepRow, bool)> = chunk
                .par_iter()
                .map(|p| {
                    let probe = SweepRow {
                        g: p.g,
                        maturity: p.maturity,
                        n: p.n(),
                        rho: p.rho,
                        chi_c: f64::NAN,
                        status: RowStatus::Failed,
                    };
                    match done.get(&key(&probe)) {
                        Some(row) => (*row, true),
                        None => (sweep_point(p, &search), false),
                    }
                })
                .collect();
            reused += computed.iter().filter(|c| c.1).count();
            rows.extend(computed.into_iter().map(|c| c.0));
            save_sweep(&rows, &partial)?;
        }
        save_sweep(&rows, &path)?;
        std::fs::remove_file(&partial).map_err(|e| CliError::io(&partial, e))?;

        let ok = rows.iter().filter(|r| r.status == RowStatus::Ok).count();
        let count = |s: RowStatus| rows.iter().filter(|r| r.status == s).count();
        let mut kv = KeyValues::new();
        kv.push("file", path.display())
            .push("rows", rows.len())
            .push("ok", ok)
            .push("reused", reused)
            .push("no_transition", count(RowStatus::NoTransition))
            .push("non_monotone", count(RowStatus::NonMonotone))
            .push("failed", count(RowStatus::Failed));
        emit(out, &kv)?;

        let boundary: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.status == RowStatus::Ok)
            .map(|r| (r.rho, r.chi_c))
            .collect();
        self.write_svg(
            "boundary.svg",
            Plot {
                title: "numeric chi_c".into(),
                x_label: "rho = n / (g^2 T)".into(),
                y_label: "chi_c".into(),
                series: vec![Series::markers("sweep", boundary)],
            },
        )?;

        if ok as f64 >= SWEEP_SUCCESS_SHARE * rows.len() as f64 {
            Ok(Exit::Ok)
        } else {
            Ok(Exit::Convergence)
        }
    }

    fn calibrate(&self, path: &Path, reference_start: bool, out: &mut dyn Write) -> CliResult<Exit> {
        let rows = read_sweep(path)?;
        let init = if reference_start {
            CriticalFitParams::REFERENCE
        } else {
            CriticalFitParams::SCRATCH_START
        };
        let cal = calibrate_critical_fit(&rows, &init)?;
        let p = cal.params;
        let mut kv = KeyValues::new();
        for (name, v, se) in [
            ("alpha", p.alpha, cal.stderr[0]),
            ("beta", p.beta, cal.stderr[1]),
            ("gamma", p.gamma, cal.stderr[2]),
            ("delta", p.delta, cal.stderr[3]),
        ] {
            kv.push(name, v).push(&format!("{name}_stderr"), se);
        }
        kv.push("mse", cal.mse)
            .push("rows", cal.rows)
            .push("iterations", cal.iterations);
        kv.write(&self.config.out_path("calibration.txt")?)?;
        emit(out, &kv)?;
        for (name, v, se) in [
            ("alpha", p.alpha, 0),
            ("beta", p.beta, 1),
            ("gamma", p.gamma, 2),
            ("delta", p.delta, 3),
        ] {
            writeln!(out, "# {name} = {v:.4} ± {:.4}", cal.stderr[se]).map_err(stdout_error)?;
        }
        Ok(Exit::Ok)
    }

    fn bl_oracle(&self, src: &ParamSource, points: usize, out: &mut dyn Write) -> CliResult<Exit> {
        if points < 2 {
            return Err(CliError::Input("--points must be at least 2".into()));
        }
        let (params, loaded) = self.load_params(src)?;
        let env = self.market(loaded.as_ref().map(|l| &l.file), params.maturity)?;
        let half = 0.5 * self.config.span * params.width_scale();
        let opts = self.config.oracle();
        let mut table = Table::new(&ORACLE_HEADER);
        for i in 0..points {
            let x = params.x_min() - half + 2.0 * half * i as f64 / (points - 1) as f64;
            let analytic = return_density(&params, x);
            let est = bl_return_density(&env, &params, x, &opts)?;
            let rel = ((est.density - analytic) / analytic).abs();
            table.push(vec![
                x,
                x_to_strike(&env, LogReturn(x)),
                analytic,
                est.density,
                rel,
                est.disagreement,
            ]);
        }
        table.write(&self.config.out_path("oracle.csv")?)?;
        let peak = table.rows.iter().map(|r| r[2]).fold(0.0, f64::max);
        let worst = table
            .rows
            .iter()
            .filter(|r| r[2] > 1e-3 * peak)
            .map(|r| r[4])
            .fold(0.0, f64::max);
        let mut kv = KeyValues::new();
        push_params(&mut kv, &params);
        kv.push("spot", env.spot).push("rate", env.rate).push("points", points);
        kv.push("max_relative_error", worst);
        emit(out, &kv)?;
        Ok(Exit::Ok)
    }
}

struct Loaded {
    file: QuoteFile,
    quotes: Vec<VolQuote>,
    maturity: f64,
}

fn key(row: &SweepRow) -> [u64; 3] {
    [row.g.to_bits(), row.maturity.to_bits(), row.rho.to_bits()]
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

fn push_density(kv: &mut KeyValues, r: &DensityReport) {
    let xs = |v: &[volsmile_core::StationaryPoint]| v.iter().map(|s| fmt_num(s.x)).collect::<Vec<_>>().join(";");
    kv.push("unimodal", r.unimodal)
        .push("total_mass", r.total_mass)
        .push("martingale_gap", r.martingale_gap)
        .push("peak_x", r.peak.x)
        .push("peak_density", r.peak.p)
        .push("maxima", r.maxima.len())
        .push("minima", r.minima.len())
        .push("minima_x", xs(&r.minima))
        .push("plateaus", r.plateaus.len())
        .push("negative_regions", r.negative_regions.len())
        .push(
            "negative_x",
            r.negative_regions
                .iter()
                .map(|(a, b)| format!("{}:{}", fmt_num(*a), fmt_num(*b)))
                .collect::<Vec<_>>()
                .join(";"),
        );
}

fn stdout_error(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

fn emit(out: &mut dyn Write, kv: &KeyValues) -> CliResult<()> {
    out.write_all(kv.render().as_bytes()).map_err(stdout_error)
}
