//! Adiabaticity of the smile: how fast the vol may rise from `g` to `gχ`
//! before the implied density grows a spurious relative minimum.
//!
//! The critical plateau ratio `χ_c(g, n, T)` is located numerically by
//! continuation in `χ` on the unimodality predicate of
//! [`density::analyze`](crate::density::analyze), and approximated in closed
//! form by
//!
//! ```text
//! χ_c ≈ α ρ^β + γ g√T ρ^δ,   ρ = n / (g² T)
//! ```
//!
//! with `γ` carried as a signed constant (negative for the reference fit).

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::density::{self, AnalyzeOptions, GridSpec};
use crate::error::{positive, Error, Result};
use crate::lsq::{self, LeastSquares, LmOptions};
use crate::smile::SmileParams;

/// Two-level caricature of a smile: `σ1` inside `|x| < x1`, `σ2` outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareWellSmile {
    pub sigma1: f64,
    pub sigma2: f64,
    pub x1: f64,
}

impl SquareWellSmile {
    pub fn new(sigma1: f64, sigma2: f64, x1: f64) -> Result<Self> {
        positive("sigma1", sigma1)?;
        positive("x1", x1)?;
        if !(sigma2 > sigma1) || !sigma2.is_finite() {
            return Err(Error::Domain {
                name: "sigma2",
                value: sigma2,
            });
        }
        Ok(Self { sigma1, sigma2, x1 })
    }

    pub fn chi(&self) -> f64 {
        self.sigma2 / self.sigma1
    }

    pub fn sigma(&self, x: f64) -> f64 {
        if x.abs() < self.x1 {
            self.sigma1
        } else {
            self.sigma2
        }
    }

    /// Half-width at which the inner and outer Gaussians cross.
    pub fn critical_half_width(&self, maturity: f64) -> Result<f64> {
        square_well_critical_x(self.sigma1, self.chi(), maturity)
    }

    /// Sufficient condition for a density without spurious minima.
    pub fn avoids_minima(&self, maturity: f64) -> Result<bool> {
        Ok(self.x1 < self.critical_half_width(maturity)?)
    }
}

/// `σ1 √T √(2χ² ln χ / (χ² − 1))`, the crossing point of the centred
/// Gaussians `N(0, σ1²T)` and `N(0, χ²σ1²T)`. Equals `σ1√T` at `χ = 1`.
pub fn square_well_critical_x(sigma1: f64, chi: f64, maturity: f64) -> Result<f64> {
    positive("sigma1", sigma1)?;
    positive("maturity", maturity)?;
    if !(chi >= 1.0) || !chi.is_finite() {
        return Err(Error::Domain {
            name: "chi",
            value: chi,
        });
    }
    let scale = sigma1 * libm::sqrt(maturity);
    if chi == 1.0 {
        return Ok(scale);
    }
    let excess = chi - 1.0;
    let ratio = 2.0 * chi * chi * libm::log1p(excess) / (excess * (chi + 1.0));
    Ok(scale * libm::sqrt(ratio))
}

/// Constants of the closed-form `χ_c` approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalFitParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl CriticalFitParams {
    /// Reference constants.
    pub const REFERENCE: Self = Self {
        alpha: 1.4373,
        beta: 0.2787,
        gamma: -0.1738,
        delta: 0.4683,
    };

    /// Starting point for calibrations that should not lean on the reference.
    pub const SCRATCH_START: Self = Self {
        alpha: 1.4,
        beta: 0.28,
        gamma: -0.17,
        delta: 0.47,
    };

    /// `α ρ^β + γ s ρ^δ` with `s = g√T`.
    #[inline]
    pub fn evaluate(&self, rho: f64, g_sqrt_t: f64) -> f64 {
        self.alpha * libm::pow(rho, self.beta) + self.gamma * g_sqrt_t * libm::pow(rho, self.delta)
    }

    fn to_array(self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            alpha: a[0],
            beta: a[1],
            gamma: a[2],
            delta: a[3],
        }
    }
}

impl Default for CriticalFitParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

pub fn chi_critical_formula(g: f64, n: f64, maturity: f64, fit: &CriticalFitParams) -> f64 {
    let rho = n / (g * g * maturity);
    fit.evaluate(rho, g * libm::sqrt(maturity))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSearchOptions {
    pub grid: GridSpec,
    pub analyze: AnalyzeOptions,
    pub chi_start: f64,
    pub scan_step: f64,
    pub tolerance: f64,
    pub chi_max: f64,
    /// Extra predicate evaluations inside the scan bracket that must agree
    /// with the bisection result.
    pub monotonicity_probes: usize,
}

impl Default for ChiSearchOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            analyze: AnalyzeOptions::default(),
            chi_start: 1.01,
            scan_step: 0.05,
            tolerance: 1e-4,
            chi_max: 20.0,
            monotonicity_probes: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalChi {
    /// Smallest `χ` seen to produce a non-unimodal density.
    pub value: f64,
    /// Largest `χ` seen to produce a unimodal density; `value − last_unimodal`
    /// is below the search tolerance.
    pub last_unimodal: f64,
    pub evaluations: usize,
}

/// Whether the smile density `(g, χ, n, T)` is unimodal and non-negative.
pub fn is_unimodal(g: f64, chi: f64, n: f64, maturity: f64, opts: &ChiSearchOptions) -> Result<bool> {
    let params = SmileParams::new(g, chi, n, maturity)?;
    Ok(density::analyze_smile(&params, &opts.grid, &opts.analyze)?.unimodal)
}

/// Smallest `χ` at which the density loses unimodality: upward scan from
/// `chi_start`, then bisection of the first failing step.
pub fn chi_critical_numeric(g: f64, n: f64, maturity: f64, opts: &ChiSearchOptions) -> Result<CriticalChi> {
    SmileParams::new(g, 1.0, n, maturity)?;
    let mut evaluations = 0;
    let mut pred = |chi: f64| {
        evaluations += 1;
        is_unimodal(g, chi, n, maturity, opts)
    };

    let mut lo = 1.0;
    let mut chi = opts.chi_start;
    let hi = loop {
        if !pred(chi)? {
            break chi;
        }
        lo = chi;
        if chi >= opts.chi_max {
            return Err(Error::NoTransition { chi_max: opts.chi_max });
        }
        chi = (chi + opts.scan_step).min(opts.chi_max);
    };

    let (scan_lo, scan_hi) = (lo, hi);
    let mut hi = hi;
    while hi - lo > opts.tolerance {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let probes = opts.monotonicity_probes;
    for k in 1..=probes {
        let c = scan_lo + (scan_hi - scan_lo) * k as f64 / (probes + 1) as f64;
        if c > lo && c < hi {
            continue;
        }
        if pred(c)? != (c <= lo) {
            return Err(Error::NonMonotone { chi: c });
        }
    }

    Ok(CriticalChi {
        value: hi,
        last_unimodal: lo,
        evaluations,
    })
}

/// Log-spaced axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        positive("axis min", min)?;
        positive("axis max", max)?;
        if max < min || count == 0 || (count == 1 && max != min) {
            return Err(Error::Domain {
                name: "axis",
                value: count as f64,
            });
        }
        Ok(Self { min, max, count })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return alloc::vec![self.min];
        }
        let (a, b) = (libm::log(self.min), libm::log(self.max));
        (0..self.count)
            .map(|i| {
                if i == 0 {
                    self.min
                } else if i == self.count - 1 {
                    self.max
                } else {
                    libm::exp(a + (b - a) * i as f64 / (self.count - 1) as f64)
                }
            })
            .collect()
    }
}

/// Lattice over `(g, ρ, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepGrid {
    pub g: Axis,
    pub rho: Axis,
    pub maturity: Axis,
}

impl SweepGrid {
    pub const G_RANGE: (f64, f64) = (0.03, 0.5);
    pub const RHO_RANGE: (f64, f64) = (2.5, 10.0);
    pub const MATURITY_RANGE: (f64, f64) = (1.0 / 365.0, 4.0);

    /// `count` log-spaced values per axis over the reference ranges.
    pub fn reference(count: usize) -> Self {
        let axis = |(min, max): (f64, f64)| Axis { min, max, count };
        Self {
            g: axis(Self::G_RANGE),
            rho: axis(Self::RHO_RANGE),
            maturity: axis(Self::MATURITY_RANGE),
        }
    }

    /// Lattice points, `g` slowest and `T` fastest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let (gs, rhos, ts) = (self.g.values(), self.rho.values(), self.maturity.values());
        let mut out = Vec::with_capacity(gs.len() * rhos.len() * ts.len());
        for &g in &gs {
            for &rho in &rhos {
                for &maturity in &ts {
                    out.push(SweepPoint { g, rho, maturity });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub g: f64,
    pub rho: f64,
    pub maturity: f64,
}

impl SweepPoint {
    pub fn n(&self) -> f64 {
        self.rho * self.g * self.g * self.maturity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowStatus {
    Ok,
    NoTransition,
    NonMonotone,
    Failed,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::NoTransition => "no_transition",
            RowStatus::NonMonotone => "non_monotone",
            RowStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RowStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => RowStatus::Ok,
            "no_transition" => RowStatus::NoTransition,
            "non_monotone" => RowStatus::NonMonotone,
            "failed" => RowStatus::Failed,
            _ => {
                return Err(Error::Domain {
                    name: "row status",
                    value: f64::NAN,
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub g: f64,
    pub maturity: f64,
    pub n: f64,
    pub rho: f64,
    /// `NaN` unless `status` is [`RowStatus::Ok`].
    pub chi_c: f64,
    pub status: RowStatus,
}

impl SweepRow {
    pub fn point(&self) -> SweepPoint {
        SweepPoint {
            g: self.g,
            rho: self.rho,
            maturity: self.maturity,
        }
    }
}

pub fn sweep_point(point: &SweepPoint, opts: &ChiSearchOptions) -> SweepRow {
    let n = point.n();
    let (chi_c, status) = match chi_critical_numeric(point.g, n, point.maturity, opts) {
        Ok(c) => (c.value, RowStatus::Ok),
        Err(Error::NoTransition { .. }) => (f64::NAN, RowStatus::NoTransition),
        Err(Error::NonMonotone { .. }) => (f64::NAN, RowStatus::NonMonotone),
        Err(_) => (f64::NAN, RowStatus::Failed),
    };
    SweepRow {
        g: point.g,
        maturity: point.maturity,
        n,
        rho: point.rho,
        chi_c,
        status,
    }
}

/// Sequential sweep in lattice order.
pub fn sweep(grid: &SweepGrid, opts: &ChiSearchOptions) -> Vec<SweepRow> {
    grid.points().iter().map(|p| sweep_point(p, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalCalibration {
    pub params: CriticalFitParams,
    /// Asymptotic standard errors of `(α, β, γ, δ)`.
    pub stderr: [f64; 4],
    pub mse: f64,
    pub rows: usize,
    pub iterations: usize,
}

struct CriticalProblem {
    /// `(ρ, g√T, χ_c)`
    samples: Vec<(f64, f64, f64)>,
}

impl LeastSquares<4> for CriticalProblem {
    fn residual_count(&self) -> usize {
        self.samples.len()
    }

    fn evaluate(&self, p: &[f64; 4], r: &mut [f64], jac: Option<&mut [[f64; 4]]>) {
        let fit = CriticalFitParams::from_array(*p);
        for (i, &(rho, s, chi)) in self.samples.iter().enumerate() {
            r[i] = fit.evaluate(rho, s) - chi;
        }
        if let Some(jac) = jac {
            for (i, &(rho, s, _)) in self.samples.iter().enumerate() {
                let ln_rho = libm::log(rho);
                let a = libm::pow(rho, fit.beta);
                let d = libm::pow(rho, fit.delta);
                jac[i] = [a, fit.alpha * a * ln_rho, s * d, fit.gamma * s * d * ln_rho];
            }
        }
    }
}

const MIN_CALIBRATION_ROWS: usize = 20;

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    v.len()
}

/// Least-squares fit of the closed form to successful sweep rows.
pub fn calibrate_critical_fit(rows: &[SweepRow], init: &CriticalFitParams) -> Result<CriticalCalibration> {
    let samples: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok && r.chi_c.is_finite())
        .map(|r| (r.rho, r.g * libm::sqrt(r.maturity), r.chi_c))
        .collect();
    if distinct(samples.iter().map(|s| s.0)) < 2 {
        return Err(Error::RankDeficient(
            "rho takes fewer than two values; beta is unidentifiable",
        ));
    }
    if distinct(samples.iter().map(|s| s.1)) < 2 {
        return Err(Error::RankDeficient(
            "g*sqrt(T) takes fewer than two values; gamma and delta are unidentifiable",
        ));
    }
    if samples.len() < MIN_CALIBRATION_ROWS {
        return Err(Error::InsufficientData {
            need: MIN_CALIBRATION_ROWS,
            got: samples.len(),
        });
    }

    let m = samples.len();
    let problem = CriticalProblem { samples };
    let opts = LmOptions {
        max_iterations: 500,
        ..LmOptions::default()
    };
    let report = lsq::minimize::<4, _>(&problem, init.to_array(), &opts);
    if !report.converged {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
        });
    }
    let inv = report
        .jtj_inverse
        .ok_or(Error::RankDeficient("singular normal equations at the optimum"))?;
    let s2 = report.sum_squares / (m - 4) as f64;
    let stderr = core::array::from_fn(|i| libm::sqrt(s2 * inv[i][i].max(0.0)));
    Ok(CriticalCalibration {
        params: CriticalFitParams::from_array(report.params),
        stderr,
        mse: report.sum_squares / m as f64,
        rows: m,
        iterations: report.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    Formula,
    Numeric,
}

impl FromStr for CheckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "formula" => Ok(CheckMode::Formula),
            "numeric" => Ok(CheckMode::Numeric),
            _ => Err(Error::Domain {
                name: "check mode",
                value: f64::NAN,
            }),
        }
    }
}

impl fmt::Display for CheckMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckMode::Formula => "formula",
            CheckMode::Numeric => "numeric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdiabaticVerdict {
    pub chi_opt: f64,
    pub chi_c: f64,
    pub adiabatic: bool,
    pub source: CheckMode,
}

/// Compares a fitted plateau ratio with its critical value.
///
/// In numeric mode a smile with no transition below `chi_max` reports
/// `χ_c = +∞`. A flat smile (`χ = 1`) is always adiabatic.
pub fn adiabatic_check(
    params: &SmileParams,
    fit: &CriticalFitParams,
    mode: CheckMode,
    opts: &ChiSearchOptions,
) -> Result<AdiabaticVerdict> {
    let chi_c = match mode {
        CheckMode::Formula => chi_critical_formula(params.g, params.n, params.maturity, fit),
        CheckMode::Numeric => match chi_critical_numeric(params.g, params.n, params.maturity, opts) {
            Ok(c) => c.value,
            Err(Error::NoTransition { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        },
    };
    Ok(AdiabaticVerdict {
        chi_opt: params.chi,
        chi_c,
        adiabatic: params.chi == 1.0 || params.chi < chi_c,
        source: mode,
    })
}
