//! `reg_inc_beta` and the derived constants against independent computations.

use std::f64::consts::FRAC_PI_2;

use pvig::eval::{aggregate_seeds, t_crit};
use pvig::stats::{reg_inc_beta, t_sf};
use pvig::synth::{optimal_mean_pvi, SynthTaskSpec};

fn logistic(w: f64) -> f64 {
    1.0 / (1.0 + (-w).exp())
}

/// Tanh-sinh quadrature of `t^(a-1) (1-t)^(b-1)` over `[0, x]`. The map is
/// written with logistic functions so that both `t` and `1 - t` stay exact
/// near the endpoints, where the integrand may be singular.
fn beta_integral(a: f64, b: f64, x: f64, h: f64) -> f64 {
    let steps = (6.0 / h) as i64;
    let mut sum = 0.0;
    for k in -steps..=steps {
        let u = k as f64 * h;
        let z = 2.0 * FRAC_PI_2 * u.sinh();
        let (s, sc) = (logistic(z), logistic(-z));
        let (t, one_minus_t) = if x == 1.0 { (s, sc) } else { (x * s, 1.0 - x * s) };
        if t <= 0.0 || one_minus_t <= 0.0 {
            continue;
        }
        let jacobian = x * s * sc * 2.0 * FRAC_PI_2 * u.cosh();
        sum += t.powf(a - 1.0) * one_minus_t.powf(b - 1.0) * jacobian;
    }
    sum * h
}

fn oracle(a: f64, b: f64, x: f64) -> f64 {
    beta_integral(a, b, x, 1.0 / 64.0) / beta_integral(a, b, 1.0, 1.0 / 64.0)
}

#[test]
fn quadrature_is_converged() {
    for (a, b, x) in [(0.5, 0.5, 0.3), (8.0, 12.0, 0.5), (1.5, 6.0, 0.95)] {
        let coarse = beta_integral(a, b, x, 1.0 / 32.0);
        let fine = beta_integral(a, b, x, 1.0 / 64.0);
        assert!((coarse - fine).abs() < 1e-13 * fine.max(1.0), "{a} {b} {x}");
    }
    // B(1/2, 1/2) = pi.
    assert!((beta_integral(0.5, 0.5, 1.0, 1.0 / 64.0) - std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn inc_beta_matches_quadrature_on_grid() {
    let mut worst: f64 = 0.0;
    for a in [0.5, 1.5, 3.0, 8.0] {
        for b in [0.5, 1.0, 2.5, 6.0, 12.0] {
            for x in [0.05, 0.3, 0.5, 0.7, 0.95] {
                let err = (reg_inc_beta(a, b, x).unwrap() - oracle(a, b, x)).abs();
                assert!(err < 1e-10, "I_{x}({a}, {b}) off by {err:e}");
                worst = worst.max(err);
            }
        }
    }
    assert!(worst < 1e-10);
}

#[test]
fn student_tail_at_one_with_eight_df() {
    // Two-sided p = I_{df/(df+t^2)}(df/2, 1/2).
    let p = oracle(4.0, 0.5, 8.0 / 9.0);
    assert!((p - 0.346_593_507_087_334_13).abs() < 1e-12);
    assert!((t_sf(1.0, 8.0) - p).abs() < 1e-12);
    assert!((t_sf(-1.0, 8.0) - p).abs() < 1e-12);
}

#[test]
fn frozen_derived_values() {
    // 1 - H_b(0.1) with H_b(0.1) = -0.9 log2 0.9 - 0.1 log2 0.1.
    let hb = -0.9f64 * 0.9f64.log2() - 0.1 * 0.1f64.log2();
    assert!((1.0 - hb - 0.531_004_406_410_718_8).abs() < 1e-15);
    let spec = SynthTaskSpec::new("x", 2, 0.1, 100);
    assert!((optimal_mean_pvi(&spec) - 0.531_004_406_410_718_8).abs() < 1e-12);

    let h07 = -0.7f64 * 0.7f64.log2() - 0.3 * 0.3f64.log2();
    assert!((h07 - 0.881_290_899_230_692_7).abs() < 1e-15);

    // 97.5% quantile of Student t with 4 df; the oracle's tail at it is 0.05.
    let t4 = t_crit(5).unwrap();
    assert!((t4 - 2.776_445_105_197_798_7).abs() < 1e-9);
    assert!((oracle(2.0, 0.5, 4.0 / (4.0 + t4 * t4)) - 0.05).abs() < 1e-12);

    let agg = aggregate_seeds(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0), (5.0, 5.0)]).unwrap();
    assert!((agg.accuracy.halfwidth - t4 * (2.5f64 / 5.0).sqrt()).abs() < 1e-12);
    assert!((agg.accuracy.halfwidth - 1.963_243_6).abs() < 1e-6);
}
