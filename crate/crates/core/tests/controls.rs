use proptest::prelude::*;

use magpsych::activation::{compute_centroids_by_form, ActivationSet, ManifestEntry};
use magpsych::controls::{
    assignment_cost, hungarian, shuffled_magnitude_check, shuffled_magnitude_check_with, unit_boundary_check,
    CONTEXT_KEY,
};
use magpsych::synthetic::{gen_embeddings, EmbeddingSpec, Geometry};

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

fn square(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-100.0f64..100.0, n), n))
}

fn set(seed: u64) -> ActivationSet {
    let mut spec = EmbeddingSpec::new(vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0], 32, Geometry::Log, 0.05, seed);
    spec.layers = 2;
    spec.carriers = 3;
    gen_embeddings(&spec)
}

/// Tokens of magnitude i placed where magnitude sigma(i) was; vectors follow
/// the token.
fn shuffle(orig: &ActivationSet, sigma: &[usize]) -> ActivationSet {
    let mags: Vec<f64> = {
        let mut m: Vec<f64> = orig.manifest.iter().map(|e| e.magnitude).collect();
        m.sort_by(f64::total_cmp);
        m.dedup();
        m
    };
    let ctx: Vec<f64> = orig
        .manifest
        .iter()
        .map(|e| mags[sigma[mags.iter().position(|m| *m == e.magnitude).unwrap()]])
        .collect();
    let mut s = orig.clone();
    s.metadata.insert(CONTEXT_KEY.into(), serde_json::json!(ctx));
    s
}

#[test]
fn identity_vectors_track_identity() {
    let orig = set(1);
    let shuffled = shuffle(&orig, &[3, 4, 5, 6, 0, 1, 2]);
    let r = shuffled_magnitude_check(&orig, &shuffled).unwrap();
    assert!((r.rho_identity - 1.0).abs() < 1e-12);
    assert!(r.rho_context < 0.9);
}

#[test]
fn context_must_be_a_permutation() {
    let orig = set(1);
    let ctx = vec![1.0; orig.n_stimuli];
    assert!(shuffled_magnitude_check_with(&orig, &orig, &ctx).is_err());
    assert!(shuffled_magnitude_check(&orig, &orig).is_err());
}

fn unit_set(rotation: Option<(usize, usize, f64)>) -> ActivationSet {
    let items = [(60.0, "second"), (120.0, "second"), (120.0, "minute"), (300.0, "minute"), (600.0, "minute")];
    let mut tensor = Vec::new();
    let mut manifest = Vec::new();
    for (i, (m, u)) in items.iter().enumerate() {
        let mut v = vec![f64::ln(*m), 1.0, if *u == "minute" { 0.8 } else { -0.3 }, 0.2];
        if let Some((a, b, t)) = rotation {
            let (x, y) = (v[a], v[b]);
            v[a] = t.cos() * x - t.sin() * y;
            v[b] = t.sin() * x + t.cos() * y;
        }
        tensor.extend(v.iter().map(|x| *x as f32));
        manifest.push(ManifestEntry {
            stimulus_id: i as u32,
            magnitude: *m,
            carrier_index: 0,
            token_position: 0,
            surface_form: format!("{m} {u}s"),
            unit_label: None,
        });
    }
    ActivationSet::new(1, 4, tensor, manifest).unwrap()
}

#[test]
fn unit_labels_come_from_surface_forms() {
    let c = compute_centroids_by_form(&unit_set(None)).unwrap();
    assert_eq!(c.labels, vec!["second", "minute", "second", "minute", "minute"]);
    let r = unit_boundary_check(&c, 0).unwrap();
    assert_eq!(r.equivalent_pairs.len(), 1);
    assert_eq!(r.matched_pairs.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hungarian_matches_exhaustive(cost in square(6)) {
        let a = hungarian(&cost);
        let mut seen = a.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..cost.len()).collect::<Vec<_>>());
        prop_assert!((assignment_cost(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
    }

    #[test]
    fn hungarian_never_worse_than_identity(cost in square(12)) {
        let ident: Vec<usize> = (0..cost.len()).collect();
        prop_assert!(assignment_cost(&cost, &hungarian(&cost)) <= assignment_cost(&cost, &ident) + 1e-9);
    }

    #[test]
    fn unit_check_is_rotation_invariant(a in 0usize..4, b in 0usize..4, t in -3.1f64..3.1) {
        prop_assume!(a != b);
        let base = unit_boundary_check(&compute_centroids_by_form(&unit_set(None)).unwrap(), 0).unwrap();
        let rot = unit_boundary_check(&compute_centroids_by_form(&unit_set(Some((a, b, t)))).unwrap(), 0).unwrap();
        prop_assert!((base.equiv_cross_unit_sim - rot.equiv_cross_unit_sim).abs() < 1e-5);
        prop_assert!((base.diff_same_unit_sim - rot.diff_same_unit_sim).abs() < 1e-5);
        prop_assert_eq!(base.form_specific, rot.form_specific);
    }
}
