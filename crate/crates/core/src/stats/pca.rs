//! First principal component of a small set of high-dimensional points.
//!
//! The points are centred and the top eigenvector of the n×n Gram matrix is
//! mapped back into feature space, so cost scales with n² · dim rather than
//! dim².

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstComponent {
    /// Unit-norm axis in feature space.
    pub axis: Vec<f64>,
    /// Projection of each centred point onto `axis`.
    pub scores: Vec<f64>,
    /// Fraction of total variance along the axis.
    pub explained: f64,
    pub mean: Vec<f64>,
}

/// `rows` holds `n` points of equal dimension. `None` when fewer than two
/// points are supplied or all points coincide.
pub fn first_component(rows: &[&[f64]]) -> Option<FirstComponent> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let trace: f64 = (0..n).map(|i| gram[(i, i)]).sum();
    if trace <= 0.0 {
        return None;
    }
    let eig = gram.symmetric_eigen();
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if lambda <= trace * 1e-12 {
        return None;
    }
    let u = eig.eigenvectors.column(top);
    let mut axis = vec![0.0; dim];
    for (i, row) in centred.iter().enumerate() {
        for (a, v) in axis.iter_mut().zip(row) {
            *a += u[i] * v;
        }
    }
    let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    for a in &mut axis {
        *a /= norm;
    }
    let scores = centred
        .iter()
        .map(|row| row.iter().zip(&axis).map(|(a, b)| a * b).sum())
        .collect();
    Some(FirstComponent {
        axis,
        scores,
        explained: lambda / trace,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_on_a_line_have_full_explained_variance() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let pc = first_component(&refs).unwrap();
        assert!((pc.explained - 1.0).abs() < 1e-12);
        let expected = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt(), 0.0];
        let cos: f64 = pc.axis.iter().zip(expected).map(|(a, b)| a * b).sum();
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_have_no_component() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        assert!(first_component(&refs).is_none());
    }
}
