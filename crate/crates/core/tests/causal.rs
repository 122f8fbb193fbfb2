use proptest::prelude::*;

use magpsych::activation::ActivationSet;
use magpsych::causal::{
    analyze_patch_results, build_patch_plan, evaluate_h7, fit_magnitude_direction, random_directions, PlannedPatch,
    DEFAULT_DOSES, N_RANDOM,
};
use magpsych::records::PatchResult;
use magpsych::stimulus::Task;
use magpsych::synthetic::{gen_embeddings, planted_direction, simulate_patch_results, EmbeddingSpec, Geometry, ReadoutSpec};

fn planted(dim: usize) -> ActivationSet {
    let m: Vec<f64> = (1..=20).map(|k| 1.4f64.powi(k)).collect();
    let mut spec = EmbeddingSpec::new(m, dim, Geometry::PlantedDirection, 0.05, 21);
    spec.layers = 2;
    spec.carriers = 3;
    gen_embeddings(&spec)
}

fn shifted(set: &ActivationSet, shift: &[f32]) -> ActivationSet {
    let mut s = set.clone();
    for l in 0..s.n_layers {
        for i in 0..s.n_stimuli {
            s.vector_mut(l, i).iter_mut().zip(shift).for_each(|(v, d)| *v += d);
        }
    }
    s
}

fn results(dim: usize) -> Vec<PatchResult> {
    let set = planted(dim);
    let dir = fit_magnitude_direction(&set, 1, None).unwrap();
    let plan = build_patch_plan(&dir, &(0..40).collect::<Vec<_>>(), &DEFAULT_DOSES, 3);
    let dirs: Vec<(String, Vec<f64>)> =
        plan.plan.directions.iter().map(|d| (d.id.clone(), plan.vectors[d.index].clone())).collect();
    let readout = ReadoutSpec { axis: planted_direction(21, 1, dim), gain: 2.0 / dir.projection_span, n_prompts: 40, seed: 3 };
    simulate_patch_results(&readout, &dirs, &DEFAULT_DOSES, dir.projection_span)
}

#[test]
fn planted_direction_is_found() {
    let set = planted(256);
    let dir = fit_magnitude_direction(&set, 1, None).unwrap();
    let truth = planted_direction(21, 1, 256);
    let cos: f64 = dir.unit_vector.iter().zip(&truth).map(|(a, b)| a * b).sum();
    assert!(cos > 0.9, "{cos}");
    assert!(dir.probe_r2 > 0.95);
}

#[test]
fn plan_round_trips_through_disk() {
    let set = planted(128);
    let dir = fit_magnitude_direction(&set, 0, None).unwrap();
    let plan = build_patch_plan(&dir, &[0, 1, 2], &DEFAULT_DOSES, 9);
    assert_eq!(plan.plan.directions.len(), 1 + N_RANDOM);
    assert_eq!(plan.plan.n_runs, 3 * (1 + N_RANDOM) * DEFAULT_DOSES.len());
    assert!(!plan.plan.orthogonality_checked);
    let tmp = tempfile::tempdir().unwrap();
    plan.write(tmp.path()).unwrap();
    let back = PlannedPatch::read(tmp.path()).unwrap();
    assert_eq!(back.plan, plan.plan);
    for (a, b) in back.vectors.iter().zip(&plan.vectors) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
    }
    let off = plan.offset(0, 0.5);
    let norm = off.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 0.5 * plan.plan.projection_span).abs() < 1e-9);
}

#[test]
fn random_directions_are_unit_and_seeded() {
    let a = random_directions(4, 600, 1);
    assert_eq!(a, random_directions(4, 600, 1));
    assert_ne!(a, random_directions(4, 600, 2));
    for v in &a {
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn magnitude_direction_beats_random() {
    let a = analyze_patch_results(&results(512), None).unwrap();
    assert!(a.specificity.unwrap() > 3.0);
    assert!(a.dose_monotonic && a.sign_correct);
    assert_eq!(a.n_random_directions, N_RANDOM);
    assert_eq!(a.dose, 1.0);
}

#[test]
fn h7_uses_symbolic_rows_when_present() {
    let mut rs = results(128);
    let all = evaluate_h7(&rs).unwrap();
    assert!(all.pass);
    for r in rs.iter_mut().filter(|r| r.prompt_id < 5) {
        r.task = Some(Task::SymbolicControl);
        r.delta_p = -r.delta_p.abs();
    }
    let sym = evaluate_h7(&rs).unwrap();
    assert_eq!(sym.n_prompts, 5);
    assert!(!sym.pass);
}

#[test]
fn missing_random_rows_rejected() {
    let rs: Vec<PatchResult> = results(64).into_iter().filter(|r| r.direction_id == "mag").collect();
    assert!(analyze_patch_results(&rs, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn direction_ignores_a_common_shift(shift in prop::collection::vec(-5.0f32..5.0, 64)) {
        let set = planted(64);
        let a = fit_magnitude_direction(&set, 1, Some(0.01)).unwrap();
        let b = fit_magnitude_direction(&shifted(&set, &shift), 1, Some(0.01)).unwrap();
        let cos: f64 = a.unit_vector.iter().zip(&b.unit_vector).map(|(x, y)| x * y).sum();
        prop_assert!(cos > 1.0 - 1e-4, "cos {}", cos);
        prop_assert!((a.projection_span - b.projection_span).abs() < 1e-3 * a.projection_span);
    }

    #[test]
    fn specificity_ignores_row_order_and_random_labels(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let base = results(64);
        let a = analyze_patch_results(&base, None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<String> = (1..=N_RANDOM).map(|i| format!("rand_{i}")).collect();
        ids.shuffle(&mut rng);
        let mut rows: Vec<PatchResult> = base
            .into_iter()
            .map(|mut r| {
                if let Some(k) = r.direction_id.strip_prefix("rand_") {
                    r.direction_id = ids[k.parse::<usize>().unwrap() - 1].clone();
                }
                r
            })
            .collect();
        rows.shuffle(&mut rng);
        let b = analyze_patch_results(&rows, None).unwrap();
        prop_assert!((a.specificity.unwrap() - b.specificity.unwrap()).abs() < 1e-9);
        prop_assert_eq!(a.dose_monotonic, b.dose_monotonic);
        prop_assert_eq!(a.n_prompts, b.n_prompts);
    }
}
