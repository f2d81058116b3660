//! Black-Scholes call pricing, delta, implied volatility, and the
//! strike / delta / log-return coordinate changes.

use crate::error::{positive, Error, Result};
use crate::normal;

/// Pricing context: spot, continuously compounded rate, maturity in years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketEnv {
    pub spot: f64,
    pub rate: f64,
    pub maturity: f64,
}

impl MarketEnv {
    pub fn new(spot: f64, rate: f64, maturity: f64) -> Result<Self> {
        positive("spot", spot)?;
        positive("maturity", maturity)?;
        if !rate.is_finite() {
            return Err(Error::Domain {
                name: "rate",
                value: rate,
            });
        }
        Ok(Self { spot, rate, maturity })
    }

    #[inline]
    pub fn discount(&self) -> f64 {
        libm::exp(-self.rate * self.maturity)
    }

    #[inline]
    pub fn forward(&self) -> f64 {
        self.spot * libm::exp(self.rate * self.maturity)
    }

    fn validate(&self) -> Result<()> {
        positive("spot", self.spot)?;
        positive("maturity", self.maturity)?;
        Ok(())
    }
}

/// Log-return coordinate `x = ln(K/S0) - rT`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogReturn(pub f64);

impl LogReturn {
    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// A fully evaluated call quote.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsQuote {
    pub strike: f64,
    pub vol: f64,
    pub price: f64,
    pub delta: f64,
}

fn d1_d2(env: &MarketEnv, strike: f64, vol: f64) -> (f64, f64) {
    let sd = vol * libm::sqrt(env.maturity);
    let d1 = (libm::log(env.spot / strike) + (env.rate + 0.5 * vol * vol) * env.maturity) / sd;
    (d1, d1 - sd)
}

/// Undiscounted-forward-free lower bound `max(S0 - K e^{-rT}, 0)`.
#[inline]
pub fn intrinsic(env: &MarketEnv, strike: f64) -> f64 {
    (env.spot - strike * env.discount()).max(0.0)
}

/// European call value `S0 N(d1) - K e^{-rT} N(d2)`.
///
/// A zero (or vanishing) total standard deviation `σ√T` returns the
/// deterministic payoff `max(S0 - K e^{-rT}, 0)`.
pub fn call_price(env: &MarketEnv, strike: f64, vol: f64) -> Result<f64> {
    env.validate()?;
    positive("strike", strike)?;
    if !(vol >= 0.0) || !vol.is_finite() {
        return Err(Error::Domain {
            name: "vol",
            value: vol,
        });
    }
    if vol * libm::sqrt(env.maturity) < 1e-300 {
        return Ok(intrinsic(env, strike));
    }
    let (d1, d2) = d1_d2(env, strike, vol);
    let price = env.spot * normal::cdf(d1) - strike * env.discount() * normal::cdf(d2);
    Ok(price.clamp(intrinsic(env, strike), env.spot))
}

/// Spot delta `N(d1)`.
pub fn delta(env: &MarketEnv, strike: f64, vol: f64) -> Result<f64> {
    env.validate()?;
    positive("strike", strike)?;
    positive("vol", vol)?;
    Ok(normal::cdf(d1_d2(env, strike, vol).0))
}

/// Vega `S0 φ(d1) √T`.
pub fn vega(env: &MarketEnv, strike: f64, vol: f64) -> Result<f64> {
    env.validate()?;
    positive("strike", strike)?;
    positive("vol", vol)?;
    Ok(env.spot * normal::pdf(d1_d2(env, strike, vol).0) * libm::sqrt(env.maturity))
}

pub fn quote(env: &MarketEnv, strike: f64, vol: f64) -> Result<BsQuote> {
    Ok(BsQuote {
        strike,
        vol,
        price: call_price(env, strike, vol)?,
        delta: delta(env, strike, vol)?,
    })
}

const IV_UPPER: f64 = 5.0;
const IV_MAX_ITER: usize = 200;

/// Implied volatility by bisection-safeguarded Newton on `σ ∈ [0, 5]`.
///
/// The bracket is widened by doubling if the price lies above the value at
/// the initial upper bound.
pub fn implied_vol(env: &MarketEnv, strike: f64, price: f64) -> Result<f64> {
    env.validate()?;
    positive("strike", strike)?;
    let lower = intrinsic(env, strike);
    let upper = env.spot;
    if !(price > lower && price < upper) {
        return Err(Error::Arbitrage { price, lower, upper });
    }

    let f = |s: f64| call_price(env, strike, s).map(|c| c - price);
    let mut lo = 0.0;
    let mut hi = IV_UPPER;
    while f(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::NoConvergence { iterations: 0 });
        }
    }

    let price_tol = 4.0 * f64::EPSILON * env.spot;
    let mut s = 0.2_f64.min(0.5 * hi);
    for _ in 0..IV_MAX_ITER {
        let fs = f(s)?;
        if fs.abs() <= price_tol {
            return Ok(s);
        }
        if fs < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        if hi - lo <= 1e-15 * hi {
            return Ok(0.5 * (lo + hi));
        }
        let v = if s > 0.0 { vega(env, strike, s)? } else { 0.0 };
        let newton = if v > 0.0 { s - fs / v } else { f64::NAN };
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NoConvergence {
        iterations: IV_MAX_ITER,
    })
}

/// `x = σ²T/2 - σ√T Φ⁻¹(Δ)`.
pub fn delta_to_x(delta: f64, vol: f64, maturity: f64) -> Result<LogReturn> {
    positive("vol", vol)?;
    positive("maturity", maturity)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
        });
    }
    let sd = vol * libm::sqrt(maturity);
    Ok(LogReturn(0.5 * sd * sd - sd * normal::inv_cdf(delta)?))
}

pub fn strike_to_x(env: &MarketEnv, strike: f64) -> Result<LogReturn> {
    positive("strike", strike)?;
    Ok(LogReturn(libm::log(strike / env.spot) - env.rate * env.maturity))
}

pub fn x_to_strike(env: &MarketEnv, x: LogReturn) -> f64 {
    env.spot * libm::exp(x.0 + env.rate * env.maturity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(spot: f64, rate: f64, t: f64) -> MarketEnv {
        MarketEnv::new(spot, rate, t).unwrap()
    }

    /// Composite Simpson integration of the discounted payoff against the
    /// log-normal terminal density.
    fn quadrature_call(env: &MarketEnv, strike: f64, vol: f64) -> f64 {
        let t = env.maturity;
        let mu = (env.rate - 0.5 * vol * vol) * t;
        let sd = vol * t.sqrt();
        // integrate over y = ln(S_T/S0), from ln(K/S0) to mu + 12 sd
        let a = (strike / env.spot).ln();
        let b = mu + 12.0 * sd;
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |y: f64| {
            let s = env.spot * y.exp();
            let dens = (-(y - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * core::f64::consts::PI).sqrt());
            (s - strike) * dens
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        env.discount() * acc * h / 3.0
    }

    #[test]
    fn zero_vol_is_deterministic_payoff() {
        let e = env(100.0, 0.0, 1.0);
        assert_eq!(call_price(&e, 80.0, 0.0).unwrap(), 20.0);
        assert_eq!(call_price(&e, 120.0, 0.0).unwrap(), 0.0);
        let tiny = call_price(&e, 80.0, 1e-9).unwrap();
        assert!((tiny - 20.0).abs() < 1e-12);
    }

    #[test]
    fn atm_price_matches_quadrature() {
        let e = env(100.0, 0.0, 1.0);
        let c = call_price(&e, 100.0, 0.2).unwrap();
        let q = quadrature_call(&e, 100.0, 0.2);
        assert!((c - q).abs() < 1e-8, "{c} vs {q}");
        let e = env(100.0, 0.03, 0.5);
        let c = call_price(&e, 90.0, 0.35).unwrap();
        assert!((c - quadrature_call(&e, 90.0, 0.35)).abs() < 1e-8);
    }

    #[test]
    fn small_strike_tends_to_spot() {
        let e = env(100.0, 0.02, 1.0);
        let c = call_price(&e, 1e-8, 0.3).unwrap();
        assert!((c - 100.0).abs() < 1e-6);
    }

    #[test]
    fn price_domain_errors() {
        let e = env(100.0, 0.0, 1.0);
        assert!(call_price(&e, 0.0, 0.2).is_err());
        assert!(call_price(&e, -1.0, 0.2).is_err());
        assert!(call_price(&e, 100.0, -0.1).is_err());
        let bad = MarketEnv {
            spot: 100.0,
            rate: 0.0,
            maturity: 0.0,
        };
        assert!(call_price(&bad, 100.0, 0.2).is_err());
        assert!(MarketEnv::new(100.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn delta_limits_and_finite_difference() {
        let e = env(100.0, 0.0, 1.0);
        assert!((delta(&e, 1e-6, 0.2).unwrap() - 1.0).abs() < 1e-12);
        // d1 = 0 when ln(S/K) = -(r + σ²/2)T
        let k = 100.0 * (0.02_f64).exp();
        assert!((delta(&e, k, 0.2).unwrap() - 0.5).abs() < 1e-15);

        let h = 1e-3;
        let up = env(100.0 + h, 0.0, 1.0);
        let dn = env(100.0 - h, 0.0, 1.0);
        let fd = (call_price(&up, 100.0, 0.2).unwrap() - call_price(&dn, 100.0, 0.2).unwrap()) / (2.0 * h);
        assert!((delta(&e, 100.0, 0.2).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn implied_vol_round_trip_and_bounds() {
        let e = env(100.0, 0.01, 0.75);
        let c = call_price(&e, 105.0, 0.25).unwrap();
        assert!((implied_vol(&e, 105.0, c).unwrap() - 0.25).abs() < 1e-8);

        assert!(matches!(implied_vol(&e, 105.0, 100.0), Err(Error::Arbitrage { .. })));
        assert!(matches!(implied_vol(&e, 105.0, 0.0), Err(Error::Arbitrage { .. })));

        let lower = intrinsic(&e, 90.0);
        let s = implied_vol(&e, 90.0, lower + 1e-9).unwrap();
        assert!(s < 0.05, "{s}");
    }

    #[test]
    fn delta_to_x_examples() {
        assert!((delta_to_x(0.5, 0.2, 1.0).unwrap().0 - 0.02).abs() < 1e-16);
        let x = delta_to_x(0.975, 0.1, 1.0).unwrap().0;
        let expect = 0.005 - 0.1 * normal::inv_cdf(0.975).unwrap();
        assert!((x - expect).abs() < 1e-15);
        assert!((x + 0.190_996_398_454_005_4).abs() < 1e-12);
        assert!(delta_to_x(1.0 - 1e-15, 0.1, 1.0).unwrap().0 < -0.7);
        assert!(delta_to_x(1.0, 0.1, 1.0).is_err());
        assert!(delta_to_x(0.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn delta_to_x_inverts_bs_delta() {
        // x from Δ must reproduce the strike whose N(d1) is Δ (r enters through x).
        let e = env(100.0, 0.03, 0.5);
        for &d in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let x = delta_to_x(d, 0.3, e.maturity).unwrap();
            let k = x_to_strike(&e, x);
            assert!((delta(&e, k, 0.3).unwrap() - d).abs() < 1e-12);
        }
    }

    #[test]
    fn strike_x_examples() {
        let e = env(100.0, 0.02, 0.5);
        let fwd = e.forward();
        assert!(strike_to_x(&e, fwd).unwrap().0.abs() < 1e-15);
        let x = strike_to_x(&e, 110.0).unwrap().0;
        assert!((x - (1.1_f64.ln() - 0.01)).abs() < 1e-15);
        assert!(strike_to_x(&e, 0.0).is_err());
        for i in 0..100 {
            let k = 10f64.powf(-1.0 + 4.0 * i as f64 / 99.0) * 100.0;
            let back = x_to_strike(&e, strike_to_x(&e, k).unwrap());
            assert!(((back - k) / k).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_decreasing_in_strike() {
        let e = env(100.0, 0.01, 1.0);
        let ks: Vec<f64> = (0..400).map(|i| 40.0 + 0.3 * i as f64).collect();
        let cs: Vec<f64> = ks.iter().map(|&k| call_price(&e, k, 0.3).unwrap()).collect();
        for w in cs.windows(3) {
            assert!(w[1] < w[0]);
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12 * e.spot);
        }
    }
}
