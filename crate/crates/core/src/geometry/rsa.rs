//! Spearman RSA with a one-sided Mantel permutation test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rdm::Rdm;
use super::GeometryError;
use crate::stats;

/// Permutations per independently seeded stream.
const CHUNK: usize = 250;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaResult {
    pub rho: f64,
    pub mantel_p: f64,
    pub n_permutations: usize,
    pub seed: u64,
    /// True when all n! relabellings were enumerated instead of sampled.
    pub exact: bool,
}

struct Prepared {
    n: usize,
    /// Centred ranks of the empirical upper triangle, row order.
    emp: Vec<f64>,
    /// Full n×n matrix of centred theoretical ranks.
    theo: Vec<f64>,
    norm: f64,
}

impl Prepared {
    fn new(empirical: &Rdm, theoretical: &Rdm) -> Option<Self> {
        let n = empirical.n();
        let centre = |r: Vec<f64>| {
            let m = stats::mean(&r);
            r.into_iter().map(|v| v - m).collect::<Vec<f64>>()
        };
        let emp = centre(stats::ranks(&empirical.upper()));
        let theo_upper = centre(stats::ranks(&theoretical.upper()));
        let mut theo = vec![0.0; n * n];
        for ((i, j), v) in theoretical.pairs().into_iter().zip(&theo_upper) {
            theo[i * n + j] = *v;
            theo[j * n + i] = *v;
        }
        let ne = emp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nt = theo_upper.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ne == 0.0 || nt == 0.0 {
            return None;
        }
        Some(Self { n, emp, theo, norm: ne * nt })
    }

    fn rho(&self, perm: &[usize]) -> f64 {
        let n = self.n;
        let mut k = 0;
        let mut s = 0.0;
        for i in 0..n {
            let row = perm[i] * n;
            for j in i + 1..n {
                s += self.emp[k] * self.theo[row + perm[j]];
                k += 1;
            }
        }
        s / self.norm
    }
}

fn factorial_at_most(n: usize, limit: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k).filter(|v| *v <= limit))
}

/// Heap's algorithm over all permutations of `0..n`.
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
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
}

/// Spearman correlation of the two upper triangles and a one-sided Mantel p
/// from jointly permuting rows and columns of `theoretical`.
///
/// When n! does not exceed `n_perm` every permutation is enumerated and the
/// p-value is exact. Otherwise permutations are drawn from fixed-size chunks,
/// each with its own ChaCha stream, so the result does not depend on the
/// number of worker threads.
pub fn rsa_mantel(empirical: &Rdm, theoretical: &Rdm, n_perm: usize, seed: u64) -> Result<RsaResult, GeometryError> {
    if empirical.n() != theoretical.n() {
        return Err(GeometryError::DimensionMismatch(empirical.n(), theoretical.n()));
    }
    if empirical.magnitudes != theoretical.magnitudes {
        return Err(GeometryError::Input("RDMs cover different magnitudes".into()));
    }
    if n_perm < 100 {
        return Err(GeometryError::Input(format!("n_perm must be at least 100, got {n_perm}")));
    }
    let n = empirical.n();
    let Some(prep) = Prepared::new(empirical, theoretical) else {
        return Ok(RsaResult { rho: 0.0, mantel_p: 1.0, n_permutations: n_perm, seed, exact: false });
    };
    let identity: Vec<usize> = (0..n).collect();
    let rho = prep.rho(&identity);
    let threshold = rho - TIE_TOL * (1.0 + rho.abs());
    if let Some(total) = factorial_at_most(n, n_perm) {
        let mut hits = 0usize;
        for_each_permutation(n, |p| {
            if prep.rho(p) >= threshold {
                hits += 1;
            }
        });
        return Ok(RsaResult {
            rho,
            mantel_p: hits as f64 / total as f64,
            n_permutations: total,
            seed,
            exact: true,
        });
    }
    let chunks = n_perm.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut perm = identity.clone();
            let count = CHUNK.min(n_perm - c * CHUNK);
            (0..count)
                .filter(|_| {
                    perm.shuffle(&mut rng);
                    prep.rho(&perm) >= threshold
                })
                .count()
        })
        .sum();
    Ok(RsaResult {
        rho,
        mantel_p: (hits + 1) as f64 / (n_perm + 1) as f64,
        n_permutations: n_perm,
        seed,
        exact: false,
    })
}
