//! Three-parameter symmetric smile
//!
//! ```text
//! σ(x) = g [1 + (χ − 1) u² / (u² + n)],   u = x + g²T/2
//! ```
//!
//! `g` is the floor, reached at `x = −g²T/2` (the mean log-return of the
//! floor log-normal), `gχ` the wing plateau, and `√n` the half-width at
//! half-height.

use alloc::vec::Vec;

use crate::bs;
use crate::error::{positive, Error, Result};
use crate::lsq::{self, LeastSquares, LmOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmileParams {
    pub g: f64,
    pub chi: f64,
    pub n: f64,
    pub maturity: f64,
}

/// `σ`, `∂σ/∂x` and `∂²σ/∂x²` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaDerivatives {
    pub sigma: f64,
    pub first: f64,
    pub second: f64,
}

impl SmileParams {
    pub fn new(g: f64, chi: f64, n: f64, maturity: f64) -> Result<Self> {
        positive("g", g)?;
        positive("n", n)?;
        positive("maturity", maturity)?;
        if !(chi >= 1.0) || !chi.is_finite() {
            return Err(Error::Domain {
                name: "chi",
                value: chi,
            });
        }
        Ok(Self { g, chi, n, maturity })
    }

    /// Location of the smile minimum, `−g²T/2`.
    #[inline]
    pub fn x_min(&self) -> f64 {
        -0.5 * self.g * self.g * self.maturity
    }

    #[inline]
    pub fn plateau(&self) -> f64 {
        self.g * self.chi
    }

    /// `n / (g² T)`.
    #[inline]
    pub fn rho(&self) -> f64 {
        self.n / (self.g * self.g * self.maturity)
    }

    /// Width scale `gχ√T` of the widest Gaussian core.
    #[inline]
    pub fn width_scale(&self) -> f64 {
        self.plateau() * libm::sqrt(self.maturity)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        let u = x - self.x_min();
        let u2 = u * u;
        self.g * (1.0 + (self.chi - 1.0) * u2 / (u2 + self.n))
    }

    pub fn derivatives(&self, x: f64) -> SigmaDerivatives {
        let u = x - self.x_min();
        let u2 = u * u;
        let q = u2 + self.n;
        let amp = self.g * (self.chi - 1.0);
        SigmaDerivatives {
            sigma: self.g + amp * u2 / q,
            first: amp * 2.0 * u * self.n / (q * q),
            second: amp * 2.0 * self.n * (self.n - 3.0 * u2) / (q * q * q),
        }
    }
}

/// Where a market quote sits on the smile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuoteCoordinate {
    /// Call delta `N(d1)`.
    Delta(f64),
    /// Log-return `x`.
    LogReturn(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolQuote {
    pub coordinate: QuoteCoordinate,
    pub vol: f64,
}

impl VolQuote {
    pub fn at_delta(delta: f64, vol: f64) -> Self {
        Self {
            coordinate: QuoteCoordinate::Delta(delta),
            vol,
        }
    }

    pub fn at_x(x: f64, vol: f64) -> Self {
        Self {
            coordinate: QuoteCoordinate::LogReturn(x),
            vol,
        }
    }

    /// Log-return of the quote; delta quotes are converted with their own vol.
    pub fn x(&self, maturity: f64) -> Result<f64> {
        match self.coordinate {
            QuoteCoordinate::LogReturn(x) => crate::error::finite("x", x),
            QuoteCoordinate::Delta(d) => bs::delta_to_x(d, self.vol, maturity).map(|x| x.0),
        }
    }
}

/// Converts quotes to `(x, vol)` pairs sorted by `x`.
pub fn quotes_to_points(quotes: &[VolQuote], maturity: f64) -> Result<Vec<(f64, f64)>> {
    positive("maturity", maturity)?;
    let mut pts = quotes
        .iter()
        .map(|q| Ok((q.x(maturity)?, positive("vol", q.vol)?)))
        .collect::<Result<Vec<_>>>()?;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = pts.windows(2).find(|w| w[0].0 >= w[1].0) {
        return Err(Error::Domain {
            name: "duplicate coordinate",
            value: w[1].0,
        });
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmileFitResult {
    pub params: SmileParams,
    pub residual_rms: f64,
    pub converged: bool,
    /// `χ` was held at the supplied bound.
    pub constrained: bool,
    pub iterations: usize,
}

/// Guards `ln(χ − 1)` at a flat smile.
const CHI_EPS: f64 = 1e-12;
/// Bounds on `n`. A constrained fit with `χ` far below the data can
/// otherwise collapse the smile into a step or flatten it out entirely.
const N_FLOOR: f64 = 1e-14;
const N_CAP: f64 = 1e6;

fn clamp_n(ln_n: f64) -> (f64, f64) {
    let n = libm::exp(ln_n);
    if n > N_FLOOR && n < N_CAP {
        (n, n)
    } else {
        (n.clamp(N_FLOOR, N_CAP), 0.0)
    }
}
const MIN_QUOTES: usize = 4;

struct SmileProblem<'a> {
    points: &'a [(f64, f64)],
    maturity: f64,
    /// `Some(χ)` fixes the plateau ratio and fits `(ln g, ln n)` only.
    fixed_chi: Option<f64>,
}

impl SmileProblem<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, f64, f64) {
        let g = libm::exp(p[0]);
        match self.fixed_chi {
            Some(chi) => (g, chi, clamp_n(p[1]).0),
            None => (g, (1.0 - CHI_EPS + libm::exp(p[1])).max(1.0), clamp_n(p[2]).0),
        }
    }

    /// Residual and `(∂σ/∂g, ∂σ/∂χ, ∂σ/∂n)` at one point.
    fn point(&self, g: f64, chi: f64, n: f64, x: f64, vol: f64) -> (f64, [f64; 3]) {
        let t = self.maturity;
        let u = x + 0.5 * g * g * t;
        let u2 = u * u;
        let q = u2 + n;
        let w = u2 / q;
        let sigma = g * (1.0 + (chi - 1.0) * w);
        let d_g = 1.0 + (chi - 1.0) * w + g * (chi - 1.0) * 2.0 * u * n / (q * q) * g * t;
        let d_chi = g * w;
        let d_n = -g * (chi - 1.0) * u2 / (q * q);
        (sigma - vol, [d_g, d_chi, d_n])
    }
}

impl LeastSquares<3> for SmileProblem<'_> {
    fn residual_count(&self) -> usize {
        self.points.len()
    }

    fn evaluate(&self, p: &[f64; 3], r: &mut [f64], jac: Option<&mut [[f64; 3]]>) {
        let (g, chi, n) = self.unpack(p);
        let chi_excess = libm::exp(p[1]);
        let n_scale = clamp_n(p[2]).1;
        match jac {
            Some(jac) => {
                for (i, &(x, v)) in self.points.iter().enumerate() {
                    let (res, d) = self.point(g, chi, n, x, v);
                    r[i] = res;
                    jac[i] = [g * d[0], chi_excess * d[1], n_scale * d[2]];
                }
            }
            None => {
                for (i, &(x, v)) in self.points.iter().enumerate() {
                    r[i] = self.point(g, chi, n, x, v).0;
                }
            }
        }
    }
}

impl LeastSquares<2> for SmileProblem<'_> {
    fn residual_count(&self) -> usize {
        self.points.len()
    }

    fn evaluate(&self, p: &[f64; 2], r: &mut [f64], jac: Option<&mut [[f64; 2]]>) {
        let (g, chi, n) = self.unpack(p);
        let n_scale = clamp_n(p[1]).1;
        match jac {
            Some(jac) => {
                for (i, &(x, v)) in self.points.iter().enumerate() {
                    let (res, d) = self.point(g, chi, n, x, v);
                    r[i] = res;
                    jac[i] = [g * d[0], n_scale * d[2]];
                }
            }
            None => {
                for (i, &(x, v)) in self.points.iter().enumerate() {
                    r[i] = self.point(g, chi, n, x, v).0;
                }
            }
        }
    }
}

/// Moment-style start: floor at the lowest vol, plateau ratio max/min,
/// half-width a quarter of the quoted x range.
pub fn default_init(points: &[(f64, f64)], maturity: f64) -> SmileParams {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    let span = points.last().map_or(0.0, |p| p.0) - points.first().map_or(0.0, |p| p.0);
    let quarter = span / 4.0;
    SmileParams {
        g: lo,
        chi: hi / lo,
        n: if quarter > 0.0 { quarter * quarter } else { 1e-4 },
        maturity,
    }
}

fn rms(points: &[(f64, f64)], params: &SmileParams) -> f64 {
    let ss: f64 = points
        .iter()
        .map(|&(x, v)| (params.sigma(x) - v) * (params.sigma(x) - v))
        .sum();
    libm::sqrt(ss / points.len() as f64)
}

fn check_count(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < MIN_QUOTES {
        return Err(Error::InsufficientData {
            need: MIN_QUOTES,
            got: points.len(),
        });
    }
    Ok(())
}

fn flat_fit(points: &[(f64, f64)], maturity: f64, n: f64, constrained: bool) -> SmileFitResult {
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let params = SmileParams {
        g: mean,
        chi: 1.0,
        n,
        maturity,
    };
    SmileFitResult {
        params,
        residual_rms: rms(points, &params),
        converged: true,
        constrained,
        iterations: 0,
    }
}

/// Unweighted vol-space least squares of the smile on the quotes.
pub fn fit_smile(quotes: &[VolQuote], maturity: f64, init: Option<SmileParams>) -> Result<SmileFitResult> {
    fit_smile_with(quotes, maturity, init, &LmOptions::default())
}

pub fn fit_smile_with(
    quotes: &[VolQuote],
    maturity: f64,
    init: Option<SmileParams>,
    opts: &LmOptions,
) -> Result<SmileFitResult> {
    let points = quotes_to_points(quotes, maturity)?;
    check_count(&points)?;
    let start = init.unwrap_or_else(|| default_init(&points, maturity));
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    if hi - lo <= 1e-14 * hi {
        return Ok(flat_fit(&points, maturity, start.n, false));
    }

    let problem = SmileProblem {
        points: &points,
        maturity,
        fixed_chi: None,
    };
    // a start at χ = 1 has no gradient in n; seed the excess from the data
    let min_excess = 0.1 * (hi / lo - 1.0);
    let run = |start: &SmileParams| {
        let theta = [
            libm::log(start.g),
            libm::log((start.chi - 1.0).max(min_excess) + CHI_EPS),
            libm::log(start.n),
        ];
        lsq::minimize::<3, _>(&problem, theta, opts)
    };
    let mut report = run(&start);
    if init.is_some() {
        // a caller-supplied start must not do worse than the default one
        let fallback = run(&default_init(&points, maturity));
        if fallback.converged && (!report.converged || fallback.sum_squares < report.sum_squares) {
            report = fallback;
        }
    }
    if !report.converged {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
        });
    }
    let (g, chi, n) = problem.unpack(&report.params);
    let params = SmileParams::new(g, chi, n, maturity)?;
    Ok(SmileFitResult {
        params,
        residual_rms: rms(&points, &params),
        converged: true,
        constrained: false,
        iterations: report.iterations,
    })
}

/// Fit with `χ ≤ chi_max`.
///
/// If the unconstrained optimum violates the bound, `χ` is clamped to it and
/// `(g, n)` are re-optimized from the unconstrained solution.
pub fn constrained_fit_smile(quotes: &[VolQuote], maturity: f64, chi_max: f64) -> Result<SmileFitResult> {
    if !(chi_max >= 1.0) || !chi_max.is_finite() {
        return Err(Error::Domain {
            name: "chi_max",
            value: chi_max,
        });
    }
    let free = fit_smile(quotes, maturity, None)?;
    if free.params.chi <= chi_max {
        return Ok(free);
    }
    let points = quotes_to_points(quotes, maturity)?;
    if chi_max == 1.0 {
        return Ok(flat_fit(&points, maturity, free.params.n, true));
    }
    let problem = SmileProblem {
        points: &points,
        maturity,
        fixed_chi: Some(chi_max),
    };
    let theta = [libm::log(free.params.g), libm::log(free.params.n)];
    let report = lsq::minimize::<2, _>(&problem, theta, &LmOptions::default());
    if !report.converged {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
        });
    }
    let (g, chi, n) = problem.unpack(&report.params);
    let params = SmileParams::new(g, chi, n, maturity)?;
    Ok(SmileFitResult {
        params,
        residual_rms: rms(&points, &params),
        converged: true,
        constrained: true,
        iterations: report.iterations,
    })
}

/// Intercept of `ln(g²T) = ln(n) + c` across fitted smiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFitResult {
    pub c: f64,
    pub c_stderr: f64,
    pub count: usize,
}

/// Unit-slope least squares: `c` is the mean of `ln(g²T) − ln(n)`.
pub fn scaling_fit(smiles: &[SmileParams]) -> Result<ScalingFitResult> {
    if smiles.len() < 3 {
        return Err(Error::InsufficientData {
            need: 3,
            got: smiles.len(),
        });
    }
    let ys = smiles
        .iter()
        .map(|s| {
            positive("g", s.g)?;
            positive("n", s.n)?;
            positive("maturity", s.maturity)?;
            Ok(libm::log(s.g * s.g * s.maturity) - libm::log(s.n))
        })
        .collect::<Result<Vec<f64>>>()?;
    let count = ys.len();
    let c = ys.iter().sum::<f64>() / count as f64;
    let var = ys.iter().map(|y| (y - c) * (y - c)).sum::<f64>() / (count - 1) as f64;
    Ok(ScalingFitResult {
        c,
        c_stderr: libm::sqrt(var / count as f64),
        count,
    })
}
