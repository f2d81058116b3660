//! Risk-neutral densities implied by a strike-dependent Black-Scholes vol.
//!
//! Substituting `σ = σ(K)` into the call price and differentiating twice in
//! strike gives the log-normal density multiplied by
//!
//! ```text
//! F(x) = (1 − x σ'/σ)² − (σ'σT)²/4 + σσ''T
//! ```
//!
//! with primes denoting `∂/∂x` and the Gaussian built from the local vol
//! `σ(x)`. [`bl_density_oracle`] recomputes the same quantity from call
//! prices by finite differences and never touches `F`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::bs::{self, LogReturn, MarketEnv};
use crate::error::{positive, Error, Result};
use crate::smile::SmileParams;

/// Log-normal return density with mean `−σ²T/2` and variance `σ²T`.
#[inline]
pub fn gaussian_return_density(vol: f64, maturity: f64, x: f64) -> f64 {
    let var = vol * vol * maturity;
    let z = x + 0.5 * var;
    libm::exp(-z * z / (2.0 * var)) / libm::sqrt(2.0 * PI * var)
}

/// Smile correction factor `F`; `d1`, `d2` are `∂σ/∂x`, `∂²σ/∂x²`.
#[inline]
pub fn perturbation_factor(sigma: f64, d1: f64, d2: f64, x: f64, maturity: f64) -> f64 {
    let skew = 1.0 - d1 / sigma * x;
    let slope = d1 * sigma * maturity;
    skew * skew - 0.25 * slope * slope + sigma * d2 * maturity
}

/// Return density implied by the smile. Negative values are reported as is.
pub fn return_density(params: &SmileParams, x: f64) -> f64 {
    let d = params.derivatives(x);
    gaussian_return_density(d.sigma, params.maturity, x)
        * perturbation_factor(d.sigma, d.first, d.second, x, params.maturity)
}

/// Terminal price density, written with strike derivatives `σ̇ = ∂σ/∂K`,
/// `σ̈ = ∂²σ/∂K²`:
///
/// ```text
/// F = [1 + S σ̇/σ (rT − ln(S/S0))]² − (σ̇σTS)²/4 + σ̇σTS + S²σσ̈T
/// ```
pub fn price_density(env: &MarketEnv, params: &SmileParams, s_t: f64) -> Result<f64> {
    positive("s_t", s_t)?;
    let t = env.maturity;
    let log_ratio = libm::log(s_t / env.spot);
    let x = log_ratio - env.rate * t;
    let d = params.derivatives(x);
    let sigma = d.sigma;
    // chain rule from x = ln(K/S0) − rT
    let sd = d.first / s_t;
    let sdd = (d.second - d.first) / (s_t * s_t);

    let lead = 1.0 + s_t * sd / sigma * (env.rate * t - log_ratio);
    let slope = sd * sigma * t * s_t;
    let f = lead * lead - 0.25 * slope * slope + slope + s_t * s_t * sigma * sdd * t;

    let var = sigma * sigma * t;
    let z = log_ratio - (env.rate * t - 0.5 * var);
    Ok(f * libm::exp(-z * z / (2.0 * var)) / (libm::sqrt(2.0 * PI * var) * s_t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Absolute strike step; `None` starts from [`default_oracle_step`] and
    /// halves it while the Richardson check fails.
    pub step: Option<f64>,
    pub richardson: bool,
    /// Relative Richardson disagreement that rejects the step.
    pub tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            step: None,
            richardson: true,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    /// Best estimate (Richardson-extrapolated when enabled).
    pub density: f64,
    /// Plain central second difference at the full step.
    pub coarse: f64,
    /// `|best − half-step estimate| / |best|`; zero without Richardson.
    pub disagreement: f64,
    pub step: f64,
}

/// `K·min(1e-3, 1e-2·σ√T)`: never more than a hundredth of the local
/// strike-space standard deviation.
pub fn default_oracle_step(strike: f64, vol: f64, maturity: f64) -> f64 {
    strike * (1e-2 * vol * libm::sqrt(maturity)).min(1e-3)
}

/// Price-space density `e^{rT} ∂²C/∂K²` by central differences of
/// Black-Scholes prices evaluated at `σ = vol_fn(K')`.
pub fn bl_density_oracle<F: Fn(f64) -> f64>(
    env: &MarketEnv,
    vol_fn: F,
    strike: f64,
    opts: &OracleOptions,
) -> Result<OracleEstimate> {
    positive("strike", strike)?;
    let h = match opts.step {
        Some(h) => positive("step", h)?,
        None => default_oracle_step(strike, vol_fn(strike), env.maturity),
    };
    if strike - h <= 0.0 {
        return Err(Error::Domain { name: "step", value: h });
    }
    let growth = libm::exp(env.rate * env.maturity);
    let call = |k: f64| bs::call_price(env, k, vol_fn(k));
    let centre = call(strike)?;
    let second = |step: f64| -> Result<f64> {
        Ok(growth * (call(strike - step)? - 2.0 * centre + call(strike + step)?) / (step * step))
    };
    let mut h = h;
    let mut coarse = second(h)?;
    if !opts.richardson {
        return Ok(OracleEstimate {
            density: coarse,
            coarse,
            disagreement: 0.0,
            step: h,
        });
    }
    // an automatic step is halved until the two estimates agree
    let mut halvings_left = if opts.step.is_some() { 0 } else { MAX_STEP_HALVINGS };
    loop {
        let fine = second(0.5 * h)?;
        let density = (4.0 * fine - coarse) / 3.0;
        let disagreement = (density - fine).abs() / density.abs();
        if disagreement <= opts.tolerance {
            return Ok(OracleEstimate {
                density,
                coarse,
                disagreement,
                step: h,
            });
        }
        if halvings_left == 0 {
            return Err(Error::StepTooLarge {
                disagreement,
                tolerance: opts.tolerance,
            });
        }
        halvings_left -= 1;
        h *= 0.5;
        coarse = fine;
    }
}

const MAX_STEP_HALVINGS: usize = 4;

/// [`bl_density_oracle`] for the smile, mapped to return space
/// (`P(x) = K·P(K)` at `K = S0 e^{x + rT}`).
pub fn bl_return_density(
    env: &MarketEnv,
    params: &SmileParams,
    x: f64,
    opts: &OracleOptions,
) -> Result<OracleEstimate> {
    let strike = bs::x_to_strike(env, LogReturn(x));
    let vol_fn = |k: f64| params.sigma(libm::log(k / env.spot) - env.rate * env.maturity);
    let est = bl_density_oracle(env, vol_fn, strike, opts)?;
    Ok(OracleEstimate {
        density: est.density * strike,
        coarse: est.coarse * strike,
        ..est
    })
}

/// Sampling of a density on a uniform log-return grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    /// Half-width of the grid in units of the curve's width scale.
    pub span: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 4001,
            span: 10.0,
        }
    }
}

fn uniform(centre: f64, half_width: f64, points: usize) -> Vec<f64> {
    let lo = centre - half_width;
    let step = 2.0 * half_width / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
    /// Natural width of the density (`gχ√T` for a smile, `σ√T` for a
    /// Gaussian), used to judge grid adequacy.
    pub width_scale: f64,
    /// Largest grid spacing.
    pub spacing: f64,
    /// Trapezoidal integral of `ps`.
    pub mass: f64,
}

impl DensityCurve {
    pub fn from_samples(xs: Vec<f64>, ps: Vec<f64>, width_scale: f64) -> Result<Self> {
        positive("width_scale", width_scale)?;
        if xs.len() != ps.len() || xs.len() < 2 {
            return Err(Error::InsufficientData {
                need: 2,
                got: xs.len().min(ps.len()),
            });
        }
        if let Some(w) = xs.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Domain {
                name: "grid not increasing",
                value: w[1],
            });
        }
        if let Some(&p) = ps.iter().find(|p| !p.is_finite()) {
            return Err(Error::Domain {
                name: "density",
                value: p,
            });
        }
        let spacing = xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let mass = trapezoid(&xs, &ps, |_| 1.0);
        Ok(Self {
            xs,
            ps,
            width_scale,
            spacing,
            mass,
        })
    }

    /// Smile density on `x_min ± span·gχ√T`.
    pub fn for_smile(params: &SmileParams, grid: &GridSpec) -> Self {
        let width = params.width_scale();
        let xs = uniform(params.x_min(), grid.span * width, grid.points.max(2));
        let ps = xs.iter().map(|&x| return_density(params, x)).collect();
        Self::from_parts(xs, ps, width)
    }

    pub fn gaussian(vol: f64, maturity: f64, grid: &GridSpec) -> Self {
        let width = vol * libm::sqrt(maturity);
        let xs = uniform(-0.5 * width * width, grid.span * width, grid.points.max(2));
        let ps = xs.iter().map(|&x| gaussian_return_density(vol, maturity, x)).collect();
        Self::from_parts(xs, ps, width)
    }

    fn from_parts(xs: Vec<f64>, ps: Vec<f64>, width_scale: f64) -> Self {
        let spacing = xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let mass = trapezoid(&xs, &ps, |_| 1.0);
        Self {
            xs,
            ps,
            width_scale,
            spacing,
            mass,
        }
    }

    pub fn lower(&self) -> f64 {
        self.xs[0]
    }

    pub fn upper(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    /// `|∫ e^x P(x) dx − 1|`, i.e. the relative gap between `∫S P(S) dS`
    /// and the forward `S0 e^{rT}`.
    pub fn martingale_gap(&self) -> f64 {
        (trapezoid(&self.xs, &self.ps, libm::exp) - 1.0).abs()
    }
}

fn trapezoid(xs: &[f64], ps: &[f64], weight: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 1..xs.len() {
        let a = weight(xs[i - 1]) * ps[i - 1];
        let b = weight(xs[i]) * ps[i];
        acc += 0.5 * (xs[i] - xs[i - 1]) * (a + b);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryKind {
    Maximum,
    Minimum,
    /// A flat run with the same slope sign on both sides.
    InflectionPlateau,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryPoint {
    pub x: f64,
    pub kind: StationaryKind,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalyzeOptions {
    /// Minima closer than this to the global peak are ignored.
    pub mode_exclusion_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub total_mass: f64,
    pub martingale_gap: f64,
    pub peak: StationaryPoint,
    pub maxima: Vec<StationaryPoint>,
    pub minima: Vec<StationaryPoint>,
    pub plateaus: Vec<StationaryPoint>,
    /// Maximal `[x_start, x_end]` runs of grid points with `p < −ε`.
    pub negative_regions: Vec<(f64, f64)>,
    pub unimodal: bool,
}

const MIN_POINTS: usize = 101;
/// Negative values smaller than this fraction of the peak are round-off.
const NEGATIVE_EPS: f64 = 1e-12;

/// Stationary-point and sign analysis of a sampled density.
pub fn analyze(curve: &DensityCurve, opts: &AnalyzeOptions) -> Result<DensityReport> {
    let xs = &curve.xs;
    let ps = &curve.ps;
    if xs.len() < MIN_POINTS {
        return Err(Error::GridTooCoarse {
            reason: "fewer than 101 points",
        });
    }
    if curve.spacing > curve.width_scale / 10.0 {
        return Err(Error::GridTooCoarse {
            reason: "spacing exceeds a tenth of the width scale",
        });
    }
    if curve.upper() - curve.lower() < 8.0 * curve.width_scale {
        return Err(Error::GridTooCoarse {
            reason: "grid spans less than eight width scales",
        });
    }

    let (peak_idx, &peak_p) = ps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let peak = StationaryPoint {
        x: xs[peak_idx],
        kind: StationaryKind::Maximum,
        p: peak_p,
    };

    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let mut plateaus = Vec::new();
    // (sign, index) of the last nonzero forward difference
    let mut last: Option<(bool, usize)> = None;
    for i in 0..ps.len() - 1 {
        let d = ps[i + 1] - ps[i];
        if d == 0.0 {
            continue;
        }
        let rising = d > 0.0;
        if let Some((was_rising, j)) = last {
            // points j+1..=i share the turning value
            let x = 0.5 * (xs[j + 1] + xs[i]);
            let p = ps[i];
            if was_rising != rising {
                if was_rising {
                    maxima.push(StationaryPoint {
                        x,
                        kind: StationaryKind::Maximum,
                        p,
                    });
                } else if (x - peak.x).abs() > opts.mode_exclusion_radius {
                    minima.push(StationaryPoint {
                        x,
                        kind: StationaryKind::Minimum,
                        p,
                    });
                }
            } else if i > j + 1 {
                plateaus.push(StationaryPoint {
                    x,
                    kind: StationaryKind::InflectionPlateau,
                    p,
                });
            }
        }
        last = Some((rising, i));
    }

    let threshold = -NEGATIVE_EPS * peak_p.abs();
    let mut negative_regions = Vec::new();
    let mut run: Option<usize> = None;
    for (i, &p) in ps.iter().enumerate() {
        match (p < threshold, run) {
            (true, None) => run = Some(i),
            (false, Some(s)) => {
                negative_regions.push((xs[s], xs[i - 1]));
                run = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run {
        negative_regions.push((xs[s], xs[xs.len() - 1]));
    }

    let unimodal = minima.is_empty() && negative_regions.is_empty();
    Ok(DensityReport {
        total_mass: curve.mass,
        martingale_gap: curve.martingale_gap(),
        peak,
        maxima,
        minima,
        plateaus,
        negative_regions,
        unimodal,
    })
}

/// Samples the smile on `grid` and analyzes it.
pub fn analyze_smile(params: &SmileParams, grid: &GridSpec, opts: &AnalyzeOptions) -> Result<DensityReport> {
    analyze(&DensityCurve::for_smile(params, grid), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steep_smile() -> SmileParams {
        SmileParams::new(0.1, 2.7, 0.04, 0.5).unwrap()
    }

    #[test]
    fn gaussian_mode_and_value() {
        let (s, t) = (0.2, 1.0);
        let peak = gaussian_return_density(s, t, -0.02);
        assert!((peak - 1.0 / (2.0 * PI * 0.04_f64).sqrt()).abs() < 1e-15);
        let expect = (1.0 / (2.0 * PI * 0.04_f64).sqrt()) * (-(0.02_f64 * 0.02) / 0.08).exp();
        assert!((gaussian_return_density(s, t, 0.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn gaussian_normalized() {
        let c = DensityCurve::gaussian(
            0.2,
            1.0,
            &GridSpec {
                points: 4001,
                span: 8.0,
            },
        );
        assert!((c.mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn factor_specializations() {
        assert_eq!(perturbation_factor(0.2, 0.0, 0.0, 0.3, 1.0), 1.0);
        let (s, d1, d2, t) = (0.2, 0.5, 3.0, 0.7);
        let at0 = perturbation_factor(s, d1, d2, 0.0, t);
        assert!((at0 - (1.0 - (d1 * s * t).powi(2) / 4.0 + s * d2 * t)).abs() < 1e-15);
    }

    #[test]
    fn flat_smile_reduces_to_gaussian() {
        let p = SmileParams::new(0.17, 1.0, 0.01, 0.8).unwrap();
        for i in -100..=100 {
            let x = i as f64 * 0.01;
            assert!((return_density(&p, x) - gaussian_return_density(0.17, 0.8, x)).abs() < 1e-14);
        }
    }

    #[test]
    fn steep_smile_has_spurious_minimum() {
        let rep = analyze_smile(&steep_smile(), &GridSpec::default(), &AnalyzeOptions::default()).unwrap();
        assert!(!rep.unimodal);
        assert!(!rep.minima.is_empty());
        assert!(rep.maxima.len() >= 2);
    }

    #[test]
    fn gaussian_curve_is_unimodal() {
        let c = DensityCurve::gaussian(0.3, 2.0, &GridSpec::default());
        let rep = analyze(&c, &AnalyzeOptions::default()).unwrap();
        assert!(rep.unimodal);
        assert!(rep.minima.is_empty() && rep.negative_regions.is_empty());
        assert_eq!(rep.maxima.len(), 1);
        assert!((rep.peak.x + 0.09).abs() < c.spacing);
    }

    #[test]
    fn coarse_grids_rejected() {
        let p = steep_smile();
        let few = DensityCurve::for_smile(&p, &GridSpec { points: 51, span: 10.0 });
        assert!(matches!(
            analyze(&few, &AnalyzeOptions::default()),
            Err(Error::GridTooCoarse { .. })
        ));
        let sparse = DensityCurve::for_smile(
            &p,
            &GridSpec {
                points: 150,
                span: 10.0,
            },
        );
        assert!(matches!(
            analyze(&sparse, &AnalyzeOptions::default()),
            Err(Error::GridTooCoarse { .. })
        ));
        let narrow = DensityCurve::for_smile(
            &p,
            &GridSpec {
                points: 2001,
                span: 3.0,
            },
        );
        assert!(matches!(
            analyze(&narrow, &AnalyzeOptions::default()),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn negative_regions_found() {
        let p = SmileParams::new(0.1, 10.0, 1e-5, 0.5).unwrap();
        let rep = analyze_smile(&p, &GridSpec::default(), &AnalyzeOptions::default()).unwrap();
        assert!(!rep.negative_regions.is_empty());
        assert!(!rep.unimodal);
        for &(a, b) in &rep.negative_regions {
            assert!(a <= b);
            assert!(return_density(&p, 0.5 * (a + b)) < 0.0 || a == b);
        }
    }

    #[test]
    fn plateau_and_turning_classification() {
        let xs: Vec<f64> = (0..201).map(|i| i as f64 * 0.01).collect();
        // rising, flat, rising, falling
        let ps: Vec<f64> = xs
            .iter()
            .map(|&x| {
                if x < 0.5 {
                    x
                } else if x < 0.7 {
                    0.5
                } else if x < 1.5 {
                    x - 0.2
                } else {
                    2.8 - x
                }
            })
            .collect();
        let c = DensityCurve::from_samples(xs, ps, 0.2).unwrap();
        let rep = analyze(&c, &AnalyzeOptions::default()).unwrap();
        assert_eq!(rep.plateaus.len(), 1);
        assert_eq!(rep.maxima.len(), 1);
        assert!(rep.minima.is_empty());
        assert!((rep.plateaus[0].x - 0.6).abs() < 0.011);
    }

    #[test]
    fn from_samples_validation() {
        assert!(DensityCurve::from_samples(vec![0.0, 0.0, 1.0], vec![1.0; 3], 1.0).is_err());
        assert!(DensityCurve::from_samples(vec![0.0, 1.0], vec![1.0, f64::NAN], 1.0).is_err());
        assert!(DensityCurve::from_samples(vec![0.0, 1.0], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn price_density_lognormal_when_flat() {
        let env = MarketEnv::new(100.0, 0.03, 0.5).unwrap();
        let p = SmileParams::new(0.25, 1.0, 0.01, 0.5).unwrap();
        for &s in &[60.0, 90.0, 100.0, 130.0] {
            let sd = 0.25 * 0.5_f64.sqrt();
            let mu = (0.03 - 0.5 * 0.0625) * 0.5;
            let expect = (-((s / 100.0_f64).ln() - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * s * (2.0 * PI).sqrt());
            let got = price_density(&env, &p, s).unwrap();
            assert!(((got - expect) / expect).abs() < 1e-12);
        }
        assert!(price_density(&env, &p, 0.0).is_err());
    }

    #[test]
    fn price_density_jacobian() {
        let env = MarketEnv::new(100.0, 0.02, 0.5).unwrap();
        let p = SmileParams::new(0.15, 2.2, 0.006, 0.5).unwrap();
        for i in 0..100 {
            let s = 70.0 + 0.6 * i as f64;
            let x = bs::strike_to_x(&env, s).unwrap().0;
            let via_x = return_density(&p, x) / s;
            let direct = price_density(&env, &p, s).unwrap();
            assert!((via_x - direct).abs() <= 1e-10 * via_x.abs().max(1e-300), "s={s}");
        }
    }

    #[test]
    fn oracle_matches_lognormal_at_the_money() {
        let env = MarketEnv::new(100.0, 0.0, 1.0).unwrap();
        let est = bl_density_oracle(
            &env,
            |_| 0.2,
            100.0,
            &OracleOptions {
                step: Some(0.1),
                ..Default::default()
            },
        )
        .unwrap();
        let sd = 0.2;
        let expect = (-(0.02_f64).powi(2) / (2.0 * sd * sd)).exp() / (sd * 100.0 * (2.0 * PI).sqrt());
        assert!(((est.density - expect) / expect).abs() < 1e-6);
    }

    #[test]
    fn oracle_central_difference_is_second_order() {
        let env = MarketEnv::new(100.0, 0.0, 1.0).unwrap();
        let exact = price_density(&env, &SmileParams::new(0.2, 1.0, 1.0, 1.0).unwrap(), 100.0).unwrap();
        let opts = |h| OracleOptions {
            step: Some(h),
            richardson: false,
            tolerance: f64::INFINITY,
        };
        let err = |h: f64| (bl_density_oracle(&env, |_| 0.2, 100.0, &opts(h)).unwrap().density - exact).abs();
        let (e1, e2) = (err(2.0), err(1.0));
        let slope = (e1 / e2).log2();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn oracle_rejects_bad_steps() {
        let env = MarketEnv::new(100.0, 0.0, 1.0).unwrap();
        let o = OracleOptions {
            step: Some(150.0),
            ..Default::default()
        };
        assert!(bl_density_oracle(&env, |_| 0.2, 100.0, &o).is_err());
        let o = OracleOptions {
            step: Some(30.0),
            ..Default::default()
        };
        assert!(matches!(
            bl_density_oracle(&env, |_| 0.2, 100.0, &o),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_tracks_spurious_dip() {
        let env = MarketEnv::new(100.0, 0.0, 0.5).unwrap();
        let p = steep_smile();
        let rep = analyze_smile(&p, &GridSpec::default(), &AnalyzeOptions::default()).unwrap();
        let dip = rep.minima[0].x;
        let o = OracleOptions {
            tolerance: f64::INFINITY,
            ..Default::default()
        };
        let at_dip = bl_return_density(&env, &p, dip, &o).unwrap().density;
        assert!(((at_dip - return_density(&p, dip)) / return_density(&p, dip)).abs() < 1e-4);
        let step = 0.02;
        let left = bl_return_density(&env, &p, dip - step, &o).unwrap().density;
        let right = bl_return_density(&env, &p, dip + step, &o).unwrap().density;
        assert!(at_dip < left && at_dip < right);
    }
}
