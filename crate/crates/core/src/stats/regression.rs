//! Least squares and logistic regression.

use nalgebra::{DMatrix, DVector};

/// Simple linear regression `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpleOls {
    pub intercept: f64,
    pub slope: f64,
    pub rss: f64,
    pub tss: f64,
}

impl SimpleOls {
    pub fn r2(&self) -> f64 {
        if self.tss <= 0.0 {
            return f64::NAN;
        }
        1.0 - self.rss / self.tss
    }
}

/// Closed-form OLS of `y` on one predictor. `None` if `x` is constant or
/// the inputs are shorter than two points.
pub fn simple_ols(x: &[f64], y: &[f64]) -> Option<SimpleOls> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut tss = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        tss += (b - my) * (b - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum::<f64>();
    Some(SimpleOls {
        intercept,
        slope,
        rss,
        tss,
    })
}

/// Multiple regression with an intercept. Returns coefficients
/// `[intercept, b1, ..., bp]` and the residual sum of squares.
pub fn multiple_ols(predictors: &[&[f64]], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let p = predictors.len();
    if predictors.iter().any(|x| x.len() != n) || n <= p {
        return None;
    }
    let x = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { predictors[c - 1][r] });
    let yv = DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&yv, 1e-12).ok()?;
    let resid = &yv - &x * &beta;
    Some((beta.iter().copied().collect(), resid.norm_squared()))
}

/// Condition number (max/min eigenvalue ratio) of the predictor correlation
/// matrix. Infinite when a predictor is constant or perfectly collinear.
pub fn correlation_condition_number(predictors: &[&[f64]]) -> f64 {
    let p = predictors.len();
    let standardised: Vec<Vec<f64>> = predictors
        .iter()
        .map(|x| {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt();
            x.iter().map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 }).collect()
        })
        .collect();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        standardised[i]
            .iter()
            .zip(&standardised[j])
            .map(|(a, b)| a * b)
            .sum::<f64>()
    });
    let eig = corr.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min <= max * 1e-15 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of a binomial GLM with logit link.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// `[intercept, b1, ..., bp]`
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bernoulli_deviance(y: &[f64], w: &[f64], eta: &[f64]) -> f64 {
    let mut dev = 0.0;
    for ((&yi, &wi), &e) in y.iter().zip(w).zip(eta) {
        // -2 log-likelihood, computed in log space for stability
        let log_p = -(1.0 + (-e).exp()).ln();
        let log_q = -(1.0 + e.exp()).ln();
        let ll = if e.abs() > 30.0 {
            if e > 0.0 {
                yi * 0.0 + (1.0 - yi) * (-e)
            } else {
                yi * e + (1.0 - yi) * 0.0
            }
        } else {
            yi * log_p + (1.0 - yi) * log_q
        };
        dev += -2.0 * wi * ll;
    }
    dev
}

/// Iteratively reweighted least squares for logistic regression with an
/// intercept. `weights` are case weights (use 1.0 for ordinary data).
pub fn logistic_irls(predictors: &[&[f64]], y: &[f64], weights: &[f64]) -> Option<LogisticFit> {
    let n = y.len();
    let p = predictors.len() + 1;
    if predictors.iter().any(|x| x.len() != n) || weights.len() != n || n < p {
        return None;
    }
    let design = |r: usize, c: usize| if c == 0 { 1.0 } else { predictors[c - 1][r] };
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = vec![0.0; n];
    let mut dev = bernoulli_deviance(y, weights, &eta);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::<f64>::zeros(p, p);
    for iter in 0..100 {
        iterations = iter + 1;
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        for r in 0..n {
            let mu = sigmoid(eta[r]);
            let var = (mu * (1.0 - mu)).max(1e-12) * weights[r];
            let resid = weights[r] * (y[r] - mu);
            for a in 0..p {
                let xa = design(r, a);
                score[a] += xa * resid;
                for b in a..p {
                    xtwx[(a, b)] += xa * design(r, b) * var;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        info = xtwx.clone();
        let step = xtwx.cholesky()?.solve(&score);
        // step halving keeps the deviance non-increasing
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * scale;
            let cand_eta: Vec<f64> = (0..n)
                .map(|r| (0..p).map(|c| design(r, c) * cand[c]).sum())
                .collect();
            let cand_dev = bernoulli_deviance(y, weights, &cand_eta);
            if cand_dev.is_finite() && cand_dev <= dev + 1e-10 * (1.0 + dev.abs()) {
                let delta = dev - cand_dev;
                beta = cand;
                eta = cand_eta;
                dev = cand_dev;
                accepted = true;
                if delta.abs() < 1e-10 * (1.0 + dev.abs()) {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    let cov = info.try_inverse().unwrap_or_else(|| DMatrix::from_element(p, p, f64::NAN));
    let standard_errors = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Some(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        deviance: dev,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_ols_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let fit = simple_ols(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn multiple_ols_recovers_coefficients() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(x1, x2)| 1.0 + 0.3 * x1 - 2.0 * x2).collect();
        let (beta, rss) = multiple_ols(&[&a, &b], &y).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-9);
        assert!((beta[1] - 0.3).abs() < 1e-9);
        assert!((beta[2] + 2.0).abs() < 1e-9);
        assert!(rss < 1e-15);
    }

    #[test]
    fn identical_predictors_have_infinite_condition() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(correlation_condition_number(&[&a, &a]) > 1e8);
    }

    #[test]
    fn logistic_matches_grouped_closed_form() {
        // one binary predictor: MLE reproduces the group log-odds exactly
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..30 {
            x.push(0.0);
            y.push(1.0);
        }
        for _ in 0..10 {
            x.push(0.0);
            y.push(0.0);
        }
        for _ in 0..10 {
            x.push(1.0);
            y.push(1.0);
        }
        for _ in 0..30 {
            x.push(1.0);
            y.push(0.0);
        }
        let w = vec![1.0; y.len()];
        let fit = logistic_irls(&[&x], &y, &w).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-8);
        assert!((fit.coefficients[1] - (1.0f64 / 3.0).ln() + 3f64.ln()).abs() < 1e-8);
    }
}
