//! Variance partitioning between predictor RDMs and the digit-boundary effect.

use serde::{Deserialize, Serialize};

use super::rdm::Rdm;
use super::GeometryError;
use crate::stats::regression::{correlation_condition_number, multiple_ols, simple_ols};

pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialR2 {
    pub predictor: String,
    /// Semi-partial R²: full-model R² minus R² without this predictor.
    pub unique: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePartition {
    pub r2_full: f64,
    pub predictors: Vec<PartialR2>,
    /// Explained variance not attributable to any single predictor.
    pub shared: f64,
    pub condition_number: f64,
}

fn r2_of(predictors: &[&[f64]], y: &[f64], tss: f64) -> Result<f64, GeometryError> {
    if predictors.is_empty() {
        return Ok(0.0);
    }
    let (_, rss) = multiple_ols(predictors, y).ok_or(GeometryError::Collinear(f64::INFINITY))?;
    Ok(1.0 - rss / tss)
}

pub fn variance_partition(empirical: &Rdm, predictors: &[(&str, &Rdm)]) -> Result<VariancePartition, GeometryError> {
    if predictors.len() < 2 {
        return Err(GeometryError::Input("variance partitioning needs at least two predictors".into()));
    }
    if predictors.iter().any(|(_, p)| p.n() != empirical.n()) {
        return Err(GeometryError::Input("predictor RDMs differ in size".into()));
    }
    let y = empirical.upper();
    let xs: Vec<Vec<f64>> = predictors.iter().map(|(_, p)| p.upper()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let cond = correlation_condition_number(&refs);
    if !(cond <= CONDITION_LIMIT) {
        return Err(GeometryError::Collinear(cond));
    }
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(tss > 0.0) {
        return Err(GeometryError::ConstantRdm);
    }
    let r2_full = r2_of(&refs, &y, tss)?;
    let mut out = Vec::new();
    for (k, (name, _)) in predictors.iter().enumerate() {
        let reduced: Vec<&[f64]> = refs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, v)| *v)
            .collect();
        out.push(PartialR2 {
            predictor: name.to_string(),
            unique: r2_full - r2_of(&reduced, &y, tss)?,
        });
    }
    let shared = r2_full - out.iter().map(|p| p.unique).sum::<f64>();
    Ok(VariancePartition {
        r2_full,
        predictors: out,
        shared,
        condition_number: cond,
    })
}

/// Number of decimal digits of a positive magnitude (rounded to integer).
pub fn digit_count(m: f64) -> u32 {
    let n = m.round().max(1.0) as u64;
    n.to_string().len() as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitBoundaryEffect {
    pub cohens_d: f64,
    pub n_crossing: usize,
    pub n_same: usize,
    pub bins_used: usize,
    /// Bins holding only one class, excluded from the estimate.
    pub bins_dropped: usize,
}

/// Cohen's d for pairs whose magnitudes differ in digit count versus pairs
/// that do not, matched on log distance.
///
/// Distances are first residualised on log distance, then compared within
/// equal-width log-distance bins; d is the pair-weighted mean of within-bin
/// residual differences over the pooled within-bin residual SD.
pub fn digit_boundary_effect(rdm: &Rdm, bins: usize) -> Result<DigitBoundaryEffect, GeometryError> {
    let digits: Vec<u32> = rdm.magnitudes.iter().map(|&m| digit_count(m)).collect();
    let mut distinct = digits.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(GeometryError::Input("digit-boundary effect needs at least two digit counts".into()));
    }
    if rdm.magnitudes.iter().any(|m| !(*m > 0.0)) {
        return Err(GeometryError::NonPositive(rdm.magnitudes.iter().copied().find(|m| !(*m > 0.0)).unwrap()));
    }
    let pairs = rdm.pairs();
    let logd: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| (rdm.magnitudes[i].ln() - rdm.magnitudes[j].ln()).abs())
        .collect();
    let y = rdm.upper();
    let fit = simple_ols(&logd, &y).ok_or(GeometryError::ConstantPredictor)?;
    let resid: Vec<f64> = logd
        .iter()
        .zip(&y)
        .map(|(x, v)| v - fit.intercept - fit.slope * x)
        .collect();
    let crossing: Vec<bool> = pairs.iter().map(|&(i, j)| digits[i] != digits[j]).collect();

    let lo = logd.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let bin_of = |x: f64| -> usize {
        if width <= 0.0 {
            0
        } else {
            (((x - lo) / width) as usize).min(bins - 1)
        }
    };
    let mut members: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); bins];
    for ((x, r), c) in logd.iter().zip(&resid).zip(&crossing) {
        let b = &mut members[bin_of(*x)];
        if *c {
            b.0.push(*r);
        } else {
            b.1.push(*r);
        }
    }
    let mut diff_sum = 0.0;
    let mut weight = 0.0;
    let mut ss = 0.0;
    let mut df = 0.0;
    let (mut n_crossing, mut n_same, mut used, mut dropped) = (0, 0, 0, 0);
    for (cross, same) in &members {
        if cross.is_empty() && same.is_empty() {
            continue;
        }
        if cross.is_empty() || same.is_empty() {
            dropped += 1;
            continue;
        }
        used += 1;
        n_crossing += cross.len();
        n_same += same.len();
        let mc = cross.iter().sum::<f64>() / cross.len() as f64;
        let ms = same.iter().sum::<f64>() / same.len() as f64;
        let w = (cross.len() + same.len()) as f64;
        diff_sum += w * (mc - ms);
        weight += w;
        ss += cross.iter().map(|v| (v - mc).powi(2)).sum::<f64>();
        ss += same.iter().map(|v| (v - ms).powi(2)).sum::<f64>();
        df += w - 2.0;
    }
    if used == 0 {
        return Err(GeometryError::Input("no log-distance bin contains both pair classes".into()));
    }
    let mean_diff = diff_sum / weight;
    let pooled_sd = if df > 0.0 { (ss / df).sqrt() } else { 0.0 };
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let cohens_d = if pooled_sd <= 1e-12 * scale {
        if mean_diff.abs() <= 1e-12 * scale {
            0.0
        } else {
            mean_diff.signum() * f64::INFINITY
        }
    } else {
        mean_diff / pooled_sd
    };
    Ok(DigitBoundaryEffect {
        cohens_d,
        n_crossing,
        n_same,
        bins_used: used,
        bins_dropped: dropped,
    })
}
