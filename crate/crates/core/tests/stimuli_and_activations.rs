use std::collections::BTreeMap;

use proptest::prelude::*;

use magpsych::activation::{
    carrier_icc, compute_centroids, tensor_agreement, ActivationError, ActivationSet, ManifestEntry,
};
use magpsych::stimulus::{
    build_comparison_pairs, build_probe_set, render_prompts, Domain, PairDesign, Position, Task,
};
use magpsych::synthetic::{gen_embeddings, EmbeddingSpec, Geometry};

#[test]
fn pair_counts_and_cells() {
    let d = PairDesign::default();
    let num = build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 42, &d).unwrap();
    assert_eq!(num.len(), 1500);
    let mut cells: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for p in &num {
        *cells.entry((p.baseline_nominal.to_bits(), p.ratio_nominal.to_bits())).or_default() += 1;
        assert!(p.small_value.canonical_magnitude < p.large_value.canonical_magnitude);
    }
    assert_eq!(cells.len(), 30);
    assert!(cells.values().all(|&n| n == 50));
    let a = num.iter().filter(|p| p.large_position == Position::A).count();
    assert_eq!(a, 750);
    for dom in [Domain::Temporal, Domain::Spatial] {
        assert_eq!(build_comparison_pairs(dom, Task::B1CrossFormat, 42, &d).unwrap().len(), 900);
    }
}

#[test]
fn seed_changes_jitter() {
    let d = PairDesign::default();
    let a = build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 42, &d).unwrap();
    let b = build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 43, &d).unwrap();
    let key = |v: &[magpsych::stimulus::ComparisonPair]| {
        let mut x: Vec<u64> = v.iter().map(|p| p.small_value.canonical_magnitude.to_bits()).collect();
        x.sort_unstable();
        x
    };
    assert_ne!(key(&a), key(&b));
}

#[test]
fn prompts_preserve_ids() {
    let pairs = build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 42, &PairDesign::default()).unwrap();
    let batch = render_prompts(&pairs, true).unwrap();
    assert_eq!(batch.prompts.len(), 1500);
    assert!(batch.prompts.iter().zip(&pairs).all(|(r, p)| r.pair_id == p.pair_id));
    let t = &batch.prompts[0].text;
    assert_eq!(t.matches("A)").count(), 1);
    assert_eq!(t.matches("B)").count(), 1);
}

#[test]
fn probe_sets_are_five_carriers_per_value() {
    for (d, n) in [(Domain::Numerical, 26), (Domain::Temporal, 19), (Domain::Spatial, 14)] {
        assert_eq!(build_probe_set(d).len(), 5 * n);
    }
}

fn set(seed: u64) -> ActivationSet {
    let mut spec = EmbeddingSpec::new(vec![1.0, 3.0, 9.0, 27.0, 81.0], 16, Geometry::Log, 0.05, seed);
    spec.layers = 3;
    gen_embeddings(&spec)
}

#[test]
fn error_codes() {
    let mut bytes = set(1).to_bytes();
    bytes.truncate(100);
    assert_eq!(ActivationSet::from_bytes(&bytes).unwrap_err().code(), "E_SHAPE");
    assert_eq!(ActivationSet::from_bytes(b"nonsense").unwrap_err().code(), "E_BAD_MAGIC");
    let mut s = set(1);
    s.tensor[5] = f32::NAN;
    assert!(matches!(s.validate(), Err(ActivationError::NonFinite { layer: 0, stimulus: 0, dim: 5 })));
    let mut s = set(1);
    s.manifest[1].stimulus_id = s.manifest[0].stimulus_id;
    assert_eq!(s.validate().unwrap_err().code(), "E_MANIFEST");
}

#[test]
fn unequal_carrier_counts_rejected() {
    let manifest: Vec<ManifestEntry> = [1.0, 1.0, 2.0]
        .iter()
        .enumerate()
        .map(|(i, m)| ManifestEntry {
            stimulus_id: i as u32,
            magnitude: *m,
            carrier_index: 0,
            token_position: 0,
            surface_form: format!("{m}"),
            unit_label: None,
        })
        .collect();
    assert!(ActivationSet::new(1, 2, vec![0.0; 6], manifest).is_err());
}

#[test]
fn icc_is_high_for_clean_log_code() {
    let s = set(2);
    let icc = carrier_icc(&s, 1).unwrap();
    assert!(icc.icc > 0.95, "{icc:?}");
    assert_eq!((icc.n_carriers, icc.n_magnitudes), (5, 5));
}

#[test]
fn agreement_with_a_copy_is_perfect() {
    let a = set(3);
    let mut b = a.clone();
    b.tensor.iter_mut().for_each(|v| *v = half_round(*v));
    let r = tensor_agreement(&a, &b).unwrap();
    assert!(r.worst_r > 0.9999, "{r:?}");
}

/// Rounds to about 11 significant bits, roughly a 16-bit float.
fn half_round(v: f32) -> f32 {
    let bits = v.to_bits() & !0x1fff;
    f32::from_bits(bits)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wbract_round_trips(seed in any::<u64>(), meta in "[a-z]{0,12}") {
        let mut s = set(seed);
        s.metadata.insert("note".into(), serde_json::json!(meta));
        let back = ActivationSet::from_bytes(&s.to_bytes()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn centroids_average_carriers(seed in any::<u64>()) {
        let s = set(seed);
        let c = compute_centroids(&s).unwrap();
        prop_assert_eq!(c.len(), 5);
        for l in 0..s.n_layers {
            for k in 0..s.dim {
                let i = 2;
                let mean: f64 = s
                    .manifest
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.magnitude == c.magnitudes[i])
                    .map(|(j, _)| s.vector(l, j)[k] as f64)
                    .sum::<f64>() / 5.0;
                prop_assert!((c.row(l, i)[k] - mean).abs() < 1e-9);
            }
        }
    }
}
