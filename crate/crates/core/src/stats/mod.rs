//! Numerical building blocks shared by the analysis modules.

pub mod dist;
pub mod optimize;
pub mod pca;
pub mod rank;
pub mod regression;
pub mod spectral;

pub use rank::{mean, pearson, ranks, sample_sd, spearman};

/// Two-sided p-value for a Spearman correlation between an arbitrary sample
/// and a strictly increasing sequence of the same length.
///
/// Without ties and for `n <= 12` the exact null distribution is enumerated by
/// dynamic programming over permutations; otherwise the usual t
/// approximation with `n - 2` degrees of freedom is used.
pub fn spearman_trend_p(values_ranks: &[f64], rho: f64) -> (f64, bool) {
    let n = values_ranks.len();
    let untied = {
        let mut r = values_ranks.to_vec();
        r.sort_by(f64::total_cmp);
        r.iter().enumerate().all(|(i, v)| (*v - (i + 1) as f64).abs() < 1e-9)
    };
    if untied && (3..=12).contains(&n) {
        let dist = rank_product_distribution(n);
        let total: f64 = dist.iter().sum();
        let observed: usize = values_ranks
            .iter()
            .enumerate()
            .map(|(i, r)| (i + 1) * (*r).round() as usize)
            .sum();
        // rho is affine in S = sum i * pi(i); its null mean is n(n+1)^2/4
        let centre = (n * (n + 1) * (n + 1)) as f64 / 4.0;
        let dev = (observed as f64 - centre).abs();
        let tail: f64 = dist
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as f64 - centre).abs() >= dev - 1e-9)
            .map(|(_, c)| *c)
            .sum();
        return ((tail / total).min(1.0), true);
    }
    if n < 3 {
        return (1.0, false);
    }
    let df = (n - 2) as f64;
    let t = if rho.abs() >= 1.0 {
        f64::INFINITY
    } else {
        rho * (df / (1.0 - rho * rho)).sqrt()
    };
    (dist::t_two_sided(t, df), false)
}

/// Counts of permutations `pi` of `1..=n` by `S = sum_i i * pi(i)`. Index is S.
fn rank_product_distribution(n: usize) -> Vec<f64> {
    let max_s: usize = (1..=n).map(|i| i * i).sum();
    let states = 1usize << n;
    let mut table = vec![vec![0f64; max_s + 1]; states];
    table[0][0] = 1.0;
    for mask in 0..states {
        let pos = mask.count_ones() as usize + 1;
        if pos > n {
            continue;
        }
        for s in 0..=max_s {
            let c = table[mask][s];
            if c == 0.0 {
                continue;
            }
            for v in 0..n {
                if mask & (1 << v) == 0 {
                    let ns = s + pos * (v + 1);
                    table[mask | (1 << v)][ns] += c;
                }
            }
        }
    }
    table.pop().unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_p(values_ranks: &[f64]) -> f64 {
        let n = values_ranks.len();
        let idx: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let obs = pearson(values_ranks, &idx).unwrap();
        let mut perm: Vec<f64> = idx.clone();
        let mut hits = 0usize;
        let mut total = 0usize;
        // Heap's algorithm
        let mut c = vec![0usize; n];
        let mut visit = |p: &[f64]| {
            total += 1;
            if pearson(p, &idx).unwrap().abs() >= obs.abs() - 1e-12 {
                hits += 1;
            }
        };
        visit(&perm);
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                visit(&perm);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn exact_trend_p_matches_enumeration() {
        for r in [
            vec![2.0, 1.0, 3.0, 5.0, 4.0, 6.0],
            vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            vec![3.0, 6.0, 1.0, 5.0, 2.0, 4.0, 7.0],
        ] {
            let idx: Vec<f64> = (1..=r.len()).map(|v| v as f64).collect();
            let rho = pearson(&r, &idx).unwrap();
            let (p, exact) = spearman_trend_p(&r, rho);
            assert!(exact);
            assert!((p - brute_force_p(&r)).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn perfect_negative_trend_at_twelve() {
        let r: Vec<f64> = (1..=12).rev().map(|v| v as f64).collect();
        let (p, exact) = spearman_trend_p(&r, -1.0);
        assert!(exact);
        // only the two monotone permutations are as extreme
        let expected = 2.0 / 479_001_600.0;
        assert!((p - expected).abs() < 1e-18);
    }
}
