use proptest::prelude::*;

use magpsych::activation::CentroidSet;
use magpsych::precision::{analyze_precision, analyze_precision_layers, evaluate_h3, h3_required_layers};
use magpsych::stimulus::NUMERICAL_PROBES;

fn line(values: &[f64], g: impl Fn(f64) -> f64, scale: f64) -> CentroidSet {
    let rows = vec![values.iter().map(|&n| vec![scale * g(n), 0.5 * scale * g(n), 1.0]).collect()];
    CentroidSet::from_rows(values.to_vec(), rows)
}

fn probes() -> Vec<f64> {
    NUMERICAL_PROBES.iter().map(|&v| v as f64).collect()
}

#[test]
fn raw_precision_is_distance_over_step() {
    let c = analyze_precision(&line(&[2.0, 8.0, 10.0, 40.0], f64::ln, 1.0), 0).unwrap();
    let d = 1.25f64.sqrt() * 4f64.ln();
    let p = &c.points[0];
    assert!((p.distance - d).abs() < 1e-12);
    assert!((p.raw_precision - d / 6.0).abs() < 1e-12);
    assert!((p.normalised_precision - 1.25f64.sqrt()).abs() < 1e-12);
    assert!((p.midpoint - 4.0).abs() < 1e-12);
}

#[test]
fn power_code_recovers_gamma() {
    // ‖Δh‖/Δn ≈ g'(n) = n^(-0.6) for g(n) = n^0.4 / 0.4
    let m: Vec<f64> = (1..=40).map(|k| 1.1f64.powi(k)).collect();
    let c = analyze_precision(&line(&m, |n| n.powf(0.4) / 0.4, 1.0), 0).unwrap();
    assert!((c.gamma - 0.6).abs() < 0.01, "{}", c.gamma);
    assert!(c.negative_significant(0.05));
}

#[test]
fn h3_needs_strict_majority_in_enough_domains() {
    assert_eq!(h3_required_layers(32), 17);
    assert_eq!(h3_required_layers(16), 9);
    let log = analyze_precision_layers(&line(&probes(), f64::ln, 1.0)).unwrap();
    let lin = analyze_precision_layers(&line(&probes(), |n| n, 1.0)).unwrap();
    let both = [("a".to_string(), log.clone()), ("b".to_string(), log.clone())];
    assert!(evaluate_h3(&both, 1, 2).unwrap().pass);
    let one = [("a".to_string(), log), ("b".to_string(), lin)];
    let r = evaluate_h3(&one, 1, 2).unwrap();
    assert!(!r.pass);
    assert!(r.domains[0].pass && !r.domains[1].pass);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_vectors_scales_precision(c in 0.01f64..100.0) {
        let m = probes();
        let a = analyze_precision(&line(&m, f64::ln, 1.0), 0).unwrap();
        let b = analyze_precision(&line(&m, f64::ln, c), 0).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert!((q.raw_precision / p.raw_precision - c).abs() < 1e-9 * c);
            prop_assert!((q.normalised_precision / p.normalised_precision - c).abs() < 1e-9 * c);
        }
        prop_assert_eq!(a.gradient_rho, b.gradient_rho);
        prop_assert!((a.gamma - b.gamma).abs() < 1e-9);
    }

    #[test]
    fn log_code_has_flat_normalised_precision(offset in -50.0f64..50.0, k in 0.1f64..10.0) {
        let c = analyze_precision(&line(&probes(), |n| k * n.ln() + offset, 1.0), 0).unwrap();
        prop_assert!(c.normalised_cv < 1e-9);
        prop_assert!(c.gamma_normalised.abs() < 1e-9);
        prop_assert!(c.gradient_rho < -0.999);
    }
}
