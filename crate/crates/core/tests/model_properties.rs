use lettuce_core::model::{self, EnvPoint, PlantParams, PlantState, SamplingBox};
use proptest::prelude::*;

fn log_range(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

fn state() -> impl Strategy<Value = PlantState> {
    (log_range(1e-4, 200.0), log_range(1e-6, 10.0), log_range(1e-6, 20.0))
        .prop_map(|(b, c, n)| PlantState { b, c, n })
}

/// Each parameter within ±20% of nominal, `psi` kept below 1.
fn params() -> impl Strategy<Value = PlantParams> {
    proptest::array::uniform12(0.8..1.2f64).prop_map(|f| {
        let mut v = PlantParams::NOMINAL.to_array();
        for (x, k) in v.iter_mut().zip(f) {
            *x *= k;
        }
        v[model::PSI_INDEX] = v[model::PSI_INDEX].min(0.99);
        PlantParams::from_array(v).unwrap()
    })
}

fn env() -> impl Strategy<Value = EnvPoint> {
    (0.0..40.0f64, 0.0..1500.0f64).prop_map(|(temperature, light)| EnvPoint { temperature, light })
}

/// Ridders' extrapolated central difference of `f` at `x`, starting from step `h`.
fn ridders(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    const CON: f64 = 1.4;
    const N: usize = 12;
    let mut a = [[0.0_f64; N]; N];
    let mut hh = h;
    a[0][0] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..N {
        hh /= CON;
        a[0][i] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
        let mut fac = CON * CON;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON * CON;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fluxes_nonnegative(s in state(), p in params(), e in env(), u in 0.0..1.0f64) {
        let f = model::Fluxes::evaluate(&s, u, &e, &p).unwrap();
        for v in [f.growth, f.litter, f.carbon_consumption, f.nitrogen_consumption, f.photosynthesis, f.nitrogen_uptake] {
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }

    #[test]
    fn assimilation_increases_with_drive(s in state(), p in params(), a in 0.0..1000.0f64, d in 0.0..500.0f64) {
        prop_assert!(model::photosynthesis(&s, a + d, &p).unwrap() >= model::photosynthesis(&s, a, &p).unwrap());
        let (u0, u1) = (a / 1000.0, (a + d) / 1000.0);
        prop_assert!(model::nitrogen_uptake(&s, u1, &p).unwrap() >= model::nitrogen_uptake(&s, u0, &p).unwrap());
    }

    #[test]
    fn assimilation_decreases_with_store(s in state(), p in params(), extra in log_range(1e-6, 10.0)) {
        let more_c = PlantState { c: s.c + extra, ..s };
        let more_n = PlantState { n: s.n + extra, ..s };
        prop_assert!(model::photosynthesis(&more_c, 500.0, &p).unwrap() <= model::photosynthesis(&s, 500.0, &p).unwrap());
        prop_assert!(model::nitrogen_uptake(&more_n, 0.075, &p).unwrap() <= model::nitrogen_uptake(&s, 0.075, &p).unwrap());
    }

    #[test]
    fn assimilation_increases_with_biomass(s in state(), p in params(), factor in 1.0..10.0f64) {
        let bigger = PlantState { b: s.b * factor, ..s };
        prop_assert!(model::photosynthesis(&bigger, 500.0, &p).unwrap() >= model::photosynthesis(&s, 500.0, &p).unwrap());
        prop_assert!(model::nitrogen_uptake(&bigger, 0.075, &p).unwrap() >= model::nitrogen_uptake(&s, 0.075, &p).unwrap());
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences(s in state(), p in params(), e in env(), u in log_range(1e-4, 1.0)) {
        let x = s.to_array();
        let f = |x: [f64; 3], u: f64| model::rhs(&PlantState::from_array(x), u, &e, &p).unwrap();
        let js = model::jacobian_state(&s, u, &e, &p).unwrap();
        let ju = model::jacobian_input(&s, u, &e, &p).unwrap();
        let scale = js.iter().flatten().chain(&ju).fold(0.0_f64, |m, v| m.max(v.abs()));
        for j in 0..4 {
            for i in 0..3 {
                let g = |t: f64| {
                    let (mut xs, mut us) = (x, u);
                    if j < 3 { xs[j] = t; } else { us = t; }
                    f(xs, us)[i]
                };
                let at = if j < 3 { x[j] } else { u };
                let fd = ridders(g, at, 0.1 * at);
                let an = if j < 3 { js[i][j] } else { ju[i] };
                // Differencing a large component over a step of order `at` cannot
                // resolve slopes below roughly eps * |f_i| / at.
                let noise = 1e-8 * f(x, u)[i].abs() / at;
                let tol = 1e-5 * an.abs().max(fd.abs()).max(1e-9 * scale) + noise;
                prop_assert!((an - fd).abs() <= tol, "entry ({i},{j}): analytic {an:e} vs fd {fd:e}");
            }
        }
    }

    #[test]
    fn sign_conditions_hold_for_perturbed_params(p in params(), e in env(), seed in any::<u64>()) {
        let report = model::check_cooperativity(&p, &e, 200, seed, &SamplingBox::default()).unwrap();
        prop_assert!(report.is_cooperative(), "{:?}", report.violations.first());
    }
}

#[test]
fn kamke_conditions_over_thousand_states() {
    let e = EnvPoint { temperature: 22.0, light: 500.0 };
    let report = model::check_cooperativity(&PlantParams::NOMINAL, &e, 1000, 9, &SamplingBox::default()).unwrap();
    assert_eq!(report.samples, 1000);
    assert_eq!(report.violation_count, 0);
    assert!(report.min_off_diagonal >= 0.0 && report.min_input_entry >= 0.0);
}
