mod common;

use ngram_lab::seeding;
use ngram_lab::stats::{ols_fit, t_two_sided_p, zscore};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("x{j}")).collect()
}

fn planted_trial(seed: u64) -> (f64, f64, f64) {
    let mut rng = seeding::rng(seed);
    let rows = 10_000;
    let mut cols = vec![Vec::with_capacity(rows); 3];
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let x: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let noise: f64 = 0.1 * rng.sample::<f64, _>(StandardNormal);
        y.push(0.5 * x[0] - 0.3 * x[1] + noise);
        for (c, v) in cols.iter_mut().zip(x) {
            c.push(v);
        }
    }
    let fit = ols_fit(&names(3), &cols, &y).unwrap();
    (fit.coefficient("x1").unwrap().beta, fit.coefficient("x2").unwrap().beta, fit.coefficient("x3").unwrap().p)
}

#[test]
fn planted_coefficients_are_recovered_and_noise_predictor_is_insignificant() {
    let trials: Vec<_> = (0..100).map(planted_trial).collect();
    for &(b1, b2, _) in &trials {
        assert!((b1 - 0.5).abs() < 0.02 && (b2 + 0.3).abs() < 0.02, "{b1} {b2}");
    }
    let insignificant = trials.iter().filter(|t| t.2 > 0.05).count();
    assert!(insignificant >= 90, "{insignificant}/100");
}

#[test]
fn p_values_match_numerical_integration() {
    for dof in [1.0, 2.5, 5.0, 30.0, 9_996.0] {
        for t in [-6.0, -2.0, -0.3, 0.0, 0.7, 1.96, 4.5] {
            let oracle = 2.0 * (1.0 - common::simpson_t_cdf(f64::abs(t), dof));
            let got = t_two_sided_p(t, dof);
            assert!((got - oracle).abs() < 1e-6, "t={t} dof={dof}: {got} vs {oracle}");
        }
    }
}

fn design() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..4, 8usize..30).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), k),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn residuals_are_orthogonal_and_r2_is_a_fraction((cols, y) in design()) {
        let fit = match ols_fit(&names(cols.len()), &cols, &y) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(fit.residuals.iter().sum::<f64>().abs() < 1e-8 * scale * y.len() as f64);
        for c in &cols {
            let dot: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-8 * scale * 10.0 * y.len() as f64, "{dot}");
        }
        prop_assert!((0.0..=1.0 + 1e-12).contains(&fit.r2));
    }

    #[test]
    fn zscore_is_idempotent(xs in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        if let Ok(z) = zscore("x", &xs) {
            let again = zscore("x", &z).unwrap();
            for (a, b) in z.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn perfect_line_has_unit_r2() {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let fit = ols_fit(&names(1), &[x], &y).unwrap();
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert!((fit.coefficient("x1").unwrap().beta - 2.0).abs() < 1e-12);
    assert!((fit.coefficients[0].beta - 1.0).abs() < 1e-12);
}
