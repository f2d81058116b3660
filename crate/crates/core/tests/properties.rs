use proptest::prelude::*;
use volsmile_core::bs::{self, MarketEnv};
use volsmile_core::density::{analyze_smile, AnalyzeOptions, GridSpec};
use volsmile_core::{constrained_fit_smile, fit_smile, SmileParams, VolQuote};

fn smile_params() -> impl Strategy<Value = SmileParams> {
    // reference ranges: g 0.03–0.5, ρ 2.5–10, T 1/365–4
    (0.03f64..0.5, 1.0f64..4.0, 2.5f64..10.0, (1.0f64 / 365.0)..4.0)
        .prop_map(|(g, chi, rho, t)| SmileParams::new(g, chi, rho * g * g * t, t).unwrap())
}

/// Five-point central stencils for the first and second derivative.
fn stencil(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (m2, m1, p1, p2) = (f(x - 2.0 * h), f(x - h), f(x + h), f(x + 2.0 * h));
    let f0 = f(x);
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d2 = (-m2 + 16.0 * m1 - 30.0 * f0 + 16.0 * p1 - p2) / (12.0 * h * h);
    (d1, d2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn smile_bounded_and_symmetric(p in smile_params(), u in -5.0f64..5.0) {
        let x = p.x_min() + u * p.n.sqrt();
        let s = p.sigma(x);
        prop_assert!(s >= p.g && s <= p.plateau() * (1.0 + 1e-15));
        let mirror = p.sigma(2.0 * p.x_min() - x);
        prop_assert!((s - mirror).abs() <= 1e-15 * s);
    }

    #[test]
    fn derivatives_match_stencil(p in smile_params(), u in -4.0f64..4.0) {
        let x = p.x_min() + u * p.n.sqrt();
        let d = p.derivatives(x);
        let h = 1e-5;
        let (fd1, fd2) = stencil(|x| p.sigma(x), x, h);
        // relative to the derivative's natural magnitude, so zero crossings stay meaningful
        let amp = p.g * (p.chi - 1.0);
        let round1 = 10.0 * f64::EPSILON * p.plateau() / h;
        let round2 = 100.0 * f64::EPSILON * p.plateau() / (h * h);
        prop_assert!((d.first - fd1).abs() <= 1e-6 * d.first.abs().max(amp / p.n.sqrt()) + round1, "{} vs {}", d.first, fd1);
        prop_assert!((d.second - fd2).abs() <= 1e-6 * d.second.abs().max(amp / p.n) + round2, "{} vs {}", d.second, fd2);
    }

    #[test]
    fn delta_is_spot_derivative(k in 60.0f64..160.0, vol in 0.05f64..1.0, t in 0.05f64..3.0) {
        let env = MarketEnv::new(100.0, 0.01, t).unwrap();
        let h = 1e-3;
        let up = MarketEnv { spot: 100.0 + h, ..env };
        let dn = MarketEnv { spot: 100.0 - h, ..env };
        let fd = (bs::call_price(&up, k, vol).unwrap() - bs::call_price(&dn, k, vol).unwrap()) / (2.0 * h);
        prop_assert!((bs::delta(&env, k, vol).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn implied_vol_inverts_price(k in 70.0f64..140.0, vol in 0.01f64..2.0, t in 0.1f64..2.0) {
        let env = MarketEnv::new(100.0, 0.02, t).unwrap();
        let c = bs::call_price(&env, k, vol).unwrap();
        // skip prices indistinguishable from the bounds in double precision
        prop_assume!(bs::vega(&env, k, vol).unwrap() > 1e-6);
        let iv = bs::implied_vol(&env, k, c).unwrap();
        prop_assert!((iv - vol).abs() < 1e-8, "{iv} vs {vol}");
    }

    #[test]
    fn price_within_bounds(k in 1.0f64..400.0, vol in 0.0f64..3.0, t in 0.01f64..5.0, r in -0.02f64..0.1) {
        let env = MarketEnv::new(100.0, r, t).unwrap();
        let c = bs::call_price(&env, k, vol).unwrap();
        prop_assert!(c >= bs::intrinsic(&env, k) && c <= env.spot);
    }

    #[test]
    fn strike_x_round_trip(k in 1e-3f64..1e5, r in -0.05f64..0.2, t in 0.001f64..10.0) {
        let env = MarketEnv::new(100.0, r, t).unwrap();
        let back = bs::x_to_strike(&env, bs::strike_to_x(&env, k).unwrap());
        prop_assert!(((back - k) / k).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_recovers_from_perturbed_init(mg in 0.5f64..1.5, mc in 0.5f64..1.5, mn in 0.5f64..1.5) {
        let truth = SmileParams::new(0.12, 1.8, 0.002, 0.25).unwrap();
        let quotes: Vec<VolQuote> = (0..11)
            .map(|i| {
                let x = truth.x_min() - 0.2 + 0.04 * i as f64;
                VolQuote::at_x(x, truth.sigma(x))
            })
            .collect();
        // ±50% on g and n; on χ the perturbation is applied and clipped at χ = 1
        let init = SmileParams { g: truth.g * mg, chi: (truth.chi * mc).max(1.0), n: truth.n * mn, maturity: truth.maturity };
        let fit = fit_smile(&quotes, truth.maturity, Some(init)).unwrap();
        for (a, b) in [(fit.params.g, truth.g), (fit.params.chi, truth.chi), (fit.params.n, truth.n)] {
            prop_assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b} from {init:?}");
        }
    }

    #[test]
    fn constrained_fit_respects_bound(chi in 1.2f64..4.0, bound in 1.0f64..3.0, noise_seed in 0u64..1000) {
        let truth = SmileParams::new(0.1, chi, 0.003, 0.5).unwrap();
        let quotes: Vec<VolQuote> = (0..13)
            .map(|i| {
                let x = truth.x_min() - 0.25 + 0.5 * i as f64 / 12.0;
                let wiggle = 1.0 + 1e-3 * (((i as u64 * 2654435761 + noise_seed) % 1000) as f64 / 1000.0 - 0.5);
                VolQuote::at_x(x, truth.sigma(x) * wiggle)
            })
            .collect();
        let fit = constrained_fit_smile(&quotes, truth.maturity, bound).unwrap();
        prop_assert!(fit.params.chi <= bound + 1e-12);
        if fit.constrained {
            prop_assert!((fit.params.chi - bound).abs() <= 1e-12);
        }
    }
}

#[test]
fn unimodal_verdict_stable_under_refinement() {
    use volsmile_core::adiabatic::{chi_critical_numeric, ChiSearchOptions};
    let opts = ChiSearchOptions::default();
    let fine = GridSpec {
        points: 8001,
        ..GridSpec::default()
    };
    for &(g, rho, t) in &[(0.1, 8.0, 0.5), (0.3, 3.0, 2.0), (0.05, 5.0, 0.02)] {
        let n = rho * g * g * t;
        let chi_c = chi_critical_numeric(g, n, t, &opts).unwrap().value;
        for factor in [0.9, 0.98, 1.02, 1.1] {
            let p = SmileParams::new(g, chi_c * factor, n, t).unwrap();
            let a = analyze_smile(&p, &GridSpec::default(), &AnalyzeOptions::default()).unwrap();
            let b = analyze_smile(&p, &fine, &AnalyzeOptions::default()).unwrap();
            assert_eq!(a.unimodal, b.unimodal, "g={g} rho={rho} t={t} factor={factor}");
            assert_eq!(a.unimodal, factor < 1.0);
        }
    }
}

#[test]
fn chi_critical_grid_stable() {
    use volsmile_core::adiabatic::{chi_critical_numeric, ChiSearchOptions};
    let coarse = ChiSearchOptions::default();
    let fine = ChiSearchOptions {
        grid: GridSpec {
            points: 8001,
            ..GridSpec::default()
        },
        ..coarse
    };
    for &(g, rho, t) in &[(0.1, 8.0, 0.5), (0.4, 2.5, 3.0), (0.03, 10.0, 1.0 / 365.0)] {
        let n = rho * g * g * t;
        let a = chi_critical_numeric(g, n, t, &coarse).unwrap().value;
        let b = chi_critical_numeric(g, n, t, &fine).unwrap().value;
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}
