use proptest::prelude::*;
use rayon::prelude::*;

use magpsych::behaviour::{
    accuracy_by_ratio, analyze_behaviour, bca_ci, delta_deviance_test, dprime, entropy_diagnostic, fit_psychometric,
    parse_trials, summarise_exclusions, Choice, DeviancePredictor, ProcessingMode, Statistic, TrialRecord, TrialSet,
    WfStatus,
};
use magpsych::records::{trial_from_pair, write_jsonl};
use magpsych::stimulus::{build_comparison_pairs, ComparisonPair, Domain, PairDesign, Position, Task};
use magpsych::synthetic::{gen_observer_trials, ObserverMode, ObserverSpec};

fn pairs() -> Vec<ComparisonPair> {
    build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 42, &PairDesign::default()).unwrap()
}

fn observer(wf: f64, mode: ObserverMode, seed: u64) -> Vec<TrialRecord> {
    gen_observer_trials(&ObserverSpec::new(wf, 0.02, mode, seed), &pairs())
}

fn with_choice(p: &ComparisonPair, correct: bool, p_large: f64) -> TrialRecord {
    let right = Choice::from(p.large_position);
    let wrong = Choice::from(p.large_position.flipped());
    trial_from_pair(p, p_large, if correct { right } else { wrong })
}

#[test]
fn exclusions_counted_not_scored() {
    let ps = pairs();
    let trials: Vec<TrialRecord> = ps
        .iter()
        .enumerate()
        .map(|(i, p)| if i < 49 { trial_from_pair(p, 0.5, Choice::Invalid) } else { with_choice(p, true, 0.9) })
        .collect();
    let ex = summarise_exclusions(&trials);
    assert_eq!((ex.total, ex.invalid, ex.usable), (1500, 49, 1451));
    assert!((ex.invalid_fraction - 0.0327).abs() < 1e-3);
    let acc = accuracy_by_ratio(&trials);
    assert_eq!(acc.by_ratio.iter().map(|c| c.n).sum::<u64>(), 1451);
    assert!(acc.by_ratio.iter().all(|c| c.accuracy == 1.0));
}

#[test]
fn parse_rejects_bad_logs() {
    assert!(parse_trials(&b""[..]).is_err());
    let p = &pairs()[0];
    let mut t = with_choice(p, true, 0.8);
    t.p_a = 0.0;
    t.p_b = 0.0;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &[t]).unwrap();
    assert!(parse_trials(&buf[..]).is_err());
}

#[test]
fn parse_renormalises_probabilities() {
    let p = &pairs()[0];
    let mut t = with_choice(p, true, 0.8);
    t.p_a *= 3.0;
    t.p_b *= 3.0;
    let mut buf = b"{\"schema\":\"magpsych.trials\"}\n".to_vec();
    write_jsonl(&mut buf, &[t]).unwrap();
    let set = parse_trials(&buf[..]).unwrap();
    let r = &set.trials[0];
    assert!((r.p_a + r.p_b - 1.0).abs() < 1e-12);
    assert!(r.entropy_nats <= std::f64::consts::LN_2);
}

#[test]
fn wilson_cells_at_extremes() {
    let ps = pairs();
    let lo: Vec<&ComparisonPair> = ps.iter().filter(|p| p.ratio_nominal == 1.05).take(10).collect();
    let hi: Vec<&ComparisonPair> = ps.iter().filter(|p| p.ratio_nominal == 3.0).take(10).collect();
    let mut trials: Vec<TrialRecord> = lo.iter().map(|p| with_choice(p, false, 0.2)).collect();
    trials.extend(hi.iter().map(|p| with_choice(p, true, 0.8)));
    let t = accuracy_by_ratio(&trials);
    assert_eq!(t.by_ratio.len(), 2);
    assert_eq!((t.by_ratio[0].accuracy, t.by_ratio[1].accuracy), (0.0, 1.0));
    assert!(t.by_ratio[0].wilson_lo == 0.0 && t.by_ratio[0].wilson_hi > 0.2);
    assert!(t.by_ratio[1].wilson_hi == 1.0 && t.by_ratio[1].wilson_lo < 0.8);
}

#[test]
fn weber_observer_accuracy_rises_with_ratio() {
    let t = accuracy_by_ratio(&observer(0.20, ObserverMode::Ratio, 1));
    let acc: Vec<f64> = t.by_ratio.iter().map(|c| c.accuracy).collect();
    assert!(acc.windows(2).all(|w| w[1] >= w[0] - 0.03), "{acc:?}");
    assert!(acc[acc.len() - 1] - acc[0] > 0.10);
}

#[test]
fn delta_deviance_reference_p() {
    let p = magpsych::stats::dist::chi2_sf(7.51, 1.0);
    assert!((p - 0.006).abs() < 5e-4, "{p}");
}

#[test]
fn absolute_difference_observer_prefers_abs_diff() {
    let d = delta_deviance_test(&observer(0.20, ObserverMode::Absdiff, 3)).unwrap();
    assert_eq!(d.winner, Some(DeviancePredictor::AbsDiff));
    assert!(d.delta_dev.unwrap() < 0.0);
}

#[test]
fn perfect_and_chance_observers_are_flagged() {
    let ps = pairs();
    let perfect: Vec<TrialRecord> = ps.iter().map(|p| with_choice(p, true, 0.99)).collect();
    assert_eq!(fit_psychometric(&perfect).unwrap().wf_status, WfStatus::BelowRange);
    assert!(delta_deviance_test(&perfect).unwrap().separated);
    let chance: Vec<TrialRecord> = ps.iter().enumerate().map(|(i, p)| with_choice(p, i % 2 == 0, 0.5)).collect();
    let fit = fit_psychometric(&chance).unwrap();
    assert_eq!(fit.wf_status, WfStatus::Unbounded);
    assert!(fit.wf.is_infinite());
}

#[test]
fn psychometric_is_monotone_and_bounded() {
    let f = fit_psychometric(&observer(0.20, ObserverMode::Ratio, 5)).unwrap();
    assert!(f.slope > 0.0 && (0.0..=0.1).contains(&f.lapse));
    let grid: Vec<f64> = (0..60).map(|k| 1.0 + k as f64 * 0.05).collect();
    let p: Vec<f64> = grid.iter().map(|r| f.predict_marginal(*r)).collect();
    assert!(p.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!((f.predict_marginal(1.0) - 0.5).abs() < 0.05);
    assert!((f.predict_marginal(1.0 + f.wf) - 0.75).abs() < 1e-6);
}

#[test]
fn duplicating_trials_keeps_wf() {
    let t = observer(0.20, ObserverMode::Ratio, 8);
    let mut twice = t.clone();
    twice.extend(t.iter().cloned());
    let a = fit_psychometric(&t).unwrap().wf;
    let b = fit_psychometric(&twice).unwrap().wf;
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn wf_bias_is_small() {
    let wf: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| fit_psychometric(&observer(0.20, ObserverMode::Ratio, 90_000 + r)).unwrap().wf)
        .collect();
    let bias = wf.iter().sum::<f64>() / wf.len() as f64 - 0.20;
    assert!(bias.abs() < 0.02, "bias {bias}");
}

#[test]
fn bootstrap_needs_enough_resamples() {
    assert!(bca_ci(&observer(0.2, ObserverMode::Ratio, 1), Statistic::Accuracy, 999, 0).is_err());
}

#[test]
fn constant_statistic_gives_zero_width() {
    let perfect: Vec<TrialRecord> = pairs().iter().map(|p| with_choice(p, true, 0.9)).collect();
    let ci = bca_ci(&perfect, Statistic::Accuracy, 1000, 4).unwrap();
    assert_eq!((ci.lo, ci.point, ci.hi), (1.0, 1.0, 1.0));
}

#[test]
fn bootstrap_endpoints_stable_in_b() {
    let t = observer(0.20, ObserverMode::Ratio, 17);
    let a = bca_ci(&t, Statistic::WeberFraction, 1000, 6).unwrap();
    let b = bca_ci(&t, Statistic::WeberFraction, 4000, 6).unwrap();
    assert!((a.lo - b.lo).abs() < 0.02 && (a.hi - b.hi).abs() < 0.02, "{a:?} {b:?}");
    assert!(!a.unstable);
    assert_eq!(a, bca_ci(&t, Statistic::WeberFraction, 1000, 6).unwrap());
}

#[test]
fn entropy_modes() {
    let ps = pairs();
    let flat: Vec<TrialRecord> = ps.iter().take(20).map(|p| with_choice(p, true, 0.5)).collect();
    let e = entropy_diagnostic(&flat);
    assert!((e.mean_entropy - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(e.mode, ProcessingMode::Approximate);
    let sure: Vec<TrialRecord> = ps.iter().take(20).map(|p| with_choice(p, true, 1.0)).collect();
    let e = entropy_diagnostic(&sure);
    assert_eq!((e.mean_entropy, e.mode), (0.0, ProcessingMode::Exact));
}

#[test]
fn dprime_reference_values() {
    assert_eq!(dprime(0.5, 50), 0.0);
    assert!((dprime(0.75, 50) - 0.9539).abs() < 1e-3);
    assert!(dprime(1.0, 50).is_finite());
}

#[test]
fn full_report_on_observer() {
    let t = observer(0.20, ObserverMode::Ratio, 2);
    let set = TrialSet { exclusion: summarise_exclusions(&t), trials: t };
    let r = analyze_behaviour(&set, 1000, 1);
    assert!(r.notes.is_empty(), "{:?}", r.notes);
    let ci = r.wf_ci.unwrap();
    assert!(ci.lo < ci.point && ci.point < ci.hi);
    assert_eq!(r.distance_ratio.unwrap().terms.len(), 4);
    assert!(r.dprime.mean_cv.is_some());
}

fn flip(mut t: TrialRecord) -> TrialRecord {
    t.large_position = t.large_position.flipped();
    std::mem::swap(&mut t.p_a, &mut t.p_b);
    t.chosen = match t.chosen {
        Choice::A => Choice::B,
        Choice::B => Choice::A,
        Choice::Invalid => Choice::Invalid,
    };
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn accuracy_is_position_symmetric(seed in any::<u64>()) {
        let t = observer(0.25, ObserverMode::Ratio, seed);
        let flipped: Vec<TrialRecord> = t.iter().cloned().map(flip).collect();
        prop_assert_eq!(accuracy_by_ratio(&t), accuracy_by_ratio(&flipped));
        prop_assert!(flipped.iter().zip(&t).all(|(a, b)| a.correct == b.correct && a.large_position != b.large_position));
        prop_assert!(t.iter().all(|x| x.large_position == Position::A || x.large_position == Position::B));
    }

    #[test]
    fn deviance_winner_survives_rescaling(seed in any::<u64>(), k in 0.001f64..1000.0) {
        let t = observer(0.20, ObserverMode::Ratio, seed);
        let scaled: Vec<TrialRecord> = t
            .iter()
            .cloned()
            .map(|mut r| {
                r.baseline *= k;
                r.small_value = r.small_value.map(|v| v * k);
                r.large_value = r.large_value.map(|v| v * k);
                r
            })
            .collect();
        let a = delta_deviance_test(&t).unwrap();
        let b = delta_deviance_test(&scaled).unwrap();
        prop_assert_eq!(a.winner, b.winner);
        prop_assert!((a.delta_dev.unwrap() - b.delta_dev.unwrap()).abs() < 1e-4);
    }
}
