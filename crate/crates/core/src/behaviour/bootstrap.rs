//! Bias-corrected and accelerated bootstrap over trials.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::psychometric::{cells_from, default_starts, fit_cells, theta_of, WfStatus};
use super::{delta_deviance_weighted, position_code, BehaviourError, TrialRecord};
use crate::records::binary_entropy;
use crate::stats::dist::{normal_cdf, normal_quantile};

const CHUNK: usize = 50;
pub const UNSTABLE_FRACTION: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    WeberFraction,
    Accuracy,
    MeanEntropy,
    DeltaDeviance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcaInterval {
    pub statistic: Statistic,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub z0: f64,
    pub acceleration: f64,
    pub b: usize,
    pub n_undefined: usize,
    /// More than 20% of resamples left the statistic undefined.
    pub unstable: bool,
}

struct Evaluator<'a> {
    stat: Statistic,
    trials: &'a [TrialRecord],
    warm: Vec<[f64; 3]>,
}

impl Evaluator<'_> {
    fn eval(&self, w: &[f64]) -> Option<f64> {
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return None;
        }
        match self.stat {
            Statistic::Accuracy => {
                Some(self.trials.iter().zip(w).map(|(t, w)| w * t.correct as u8 as f64).sum::<f64>() / total)
            }
            Statistic::MeanEntropy => Some(
                self.trials
                    .iter()
                    .zip(w)
                    .map(|(t, w)| w * binary_entropy(t.p_a / (t.p_a + t.p_b)))
                    .sum::<f64>()
                    / total,
            ),
            Statistic::WeberFraction => {
                let cells = cells_from(self.trials, w);
                let mut xs: Vec<u64> = cells.iter().map(|c| c.x.to_bits()).collect();
                xs.sort_unstable();
                xs.dedup();
                if xs.len() < 3 {
                    return None;
                }
                let fit = fit_cells(&cells, &self.warm).ok()?;
                (fit.wf_status != WfStatus::Unbounded).then_some(fit.wf)
            }
            Statistic::DeltaDeviance => delta_deviance_weighted(self.trials, w).delta_dev,
        }
    }

    /// Trials with equal keys are interchangeable for the statistic, so one
    /// leave-one-out evaluation serves the whole group.
    fn key(&self, t: &TrialRecord) -> (u64, u64, i8, bool) {
        match self.stat {
            Statistic::Accuracy => (0, 0, 0, t.correct),
            Statistic::MeanEntropy => (binary_entropy(t.p_a / (t.p_a + t.p_b)).to_bits(), 0, 0, false),
            Statistic::WeberFraction => (t.ratio.to_bits(), 0, position_code(t.large_position) as i8, t.correct),
            Statistic::DeltaDeviance => (
                t.effective_ratio().to_bits(),
                t.abs_difference().to_bits(),
                position_code(t.large_position) as i8,
                t.correct,
            ),
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// 95% BCa interval for `stat` over case-resampled valid trials.
///
/// Resamples are drawn in fixed-size chunks with one ChaCha stream per chunk,
/// so results depend on `(seed, b)` only. Ties with the point estimate count
/// half toward the bias correction.
pub fn bca_ci(trials: &[TrialRecord], stat: Statistic, b: usize, seed: u64) -> Result<BcaInterval, BehaviourError> {
    if b < 1000 {
        return Err(BehaviourError::Insufficient(format!("bootstrap needs B >= 1000, got {b}")));
    }
    let valid: Vec<TrialRecord> = trials.iter().filter(|t| t.is_valid()).cloned().collect();
    let n = valid.len();
    if n < 2 {
        return Err(BehaviourError::Empty);
    }
    let mut ev = Evaluator { stat, trials: &valid, warm: default_starts() };
    let ones = vec![1.0; n];
    if stat == Statistic::WeberFraction {
        let cells = cells_from(&valid, &ones);
        let fit = fit_cells(&cells, &default_starts())?;
        ev.warm = vec![theta_of(&fit), [2f64.ln(), -3.0, 0.0], [15f64.ln(), -3.0, 0.0]];
    }
    let point = ev
        .eval(&ones)
        .ok_or_else(|| BehaviourError::Insufficient("statistic undefined on the observed data".into()))?;

    let chunks = b.div_ceil(CHUNK);
    let draws: Vec<Option<f64>> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(b - c * CHUNK);
            let mut out = Vec::with_capacity(count);
            let mut w = vec![0.0; n];
            for _ in 0..count {
                w.iter_mut().for_each(|x| *x = 0.0);
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1.0;
                }
                out.push(ev.eval(&w));
            }
            out
        })
        .collect();
    let n_undefined = draws.iter().filter(|d| d.is_none()).count();
    let mut boot: Vec<f64> = draws.into_iter().flatten().collect();
    boot.sort_by(f64::total_cmp);
    let unstable = n_undefined as f64 > UNSTABLE_FRACTION * b as f64;
    let base = BcaInterval {
        statistic: stat,
        point,
        lo: point,
        hi: point,
        level: 0.95,
        z0: 0.0,
        acceleration: 0.0,
        b,
        n_undefined,
        unstable,
    };
    let tol = 1e-12 * (1.0 + point.abs());
    if boot.is_empty() {
        return Ok(BcaInterval { lo: f64::NAN, hi: f64::NAN, unstable: true, ..base });
    }
    if boot.iter().all(|v| (v - point).abs() <= tol) {
        return Ok(base);
    }
    let bd = boot.len() as f64;
    let less = boot.iter().filter(|v| **v < point - tol).count() as f64;
    let equal = boot.iter().filter(|v| (**v - point).abs() <= tol).count() as f64;
    let frac = ((less + 0.5 * equal) / bd).clamp(0.5 / bd, 1.0 - 0.5 / bd);
    let z0 = normal_quantile(frac);

    // jackknife, memoised on interchangeable trials
    let mut groups: HashMap<(u64, u64, i8, bool), Vec<usize>> = HashMap::new();
    for (i, t) in valid.iter().enumerate() {
        groups.entry(ev.key(t)).or_default().push(i);
    }
    let mut reps: Vec<(usize, usize)> = groups.values().map(|g| (g[0], g.len())).collect();
    reps.sort_unstable();
    let loo: Vec<(Option<f64>, usize)> = reps
        .par_iter()
        .map(|&(i, size)| {
            let mut w = ones.clone();
            w[i] = 0.0;
            (ev.eval(&w), size)
        })
        .collect();
    let defined: Vec<(f64, f64)> = loo.iter().filter_map(|(v, s)| v.map(|x| (x, *s as f64))).collect();
    let total_w: f64 = defined.iter().map(|(_, s)| s).sum();
    let acceleration = if total_w > 0.0 {
        let mean = defined.iter().map(|(v, s)| v * s).sum::<f64>() / total_w;
        let num: f64 = defined.iter().map(|(v, s)| s * (mean - v).powi(3)).sum();
        let den: f64 = defined.iter().map(|(v, s)| s * (mean - v).powi(2)).sum();
        if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 }
    } else {
        0.0
    };
    let adjust = |alpha: f64| {
        let z = normal_quantile(alpha);
        let t = z0 + z;
        normal_cdf(z0 + t / (1.0 - acceleration * t))
    };
    Ok(BcaInterval {
        lo: quantile(&boot, adjust(0.025)),
        hi: quantile(&boot, adjust(0.975)),
        z0,
        acceleration,
        ..base
    })
}
