use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use super::check_points;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[out_dim, dim]`; rows beyond the input rank are zero.
    pub components: Vec<f64>,
    /// Covariance eigenvalues in decreasing order, all `dim` of them.
    pub eigenvalues: Vec<f64>,
    /// `[E, out_dim]`.
    pub projected: Vec<f64>,
    pub out_dim: usize,
}

/// Projects mean-centred points onto the top `out_dim` eigenvectors of the
/// (population) covariance. Each component is signed so that its
/// largest-magnitude loading is positive.
pub fn pca_project(points: &[f64], dim: usize, out_dim: usize) -> Result<Pca> {
    let n = check_points(points, dim)?;
    if n < 2 {
        return Err(Error::contract("pca needs at least 2 points"));
    }
    let mut mean = vec![0.0; dim];
    for x in points.chunks_exact(dim) {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for x in points.chunks_exact(dim) {
        for a in 0..dim {
            for b in 0..=a {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / n as f64;
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut components = vec![0.0; out_dim * dim];
    for (r, &i) in order.iter().take(out_dim).enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = (0..dim)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .expect("dim >= 1");
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            components[r * dim + j] = sign * col[j];
        }
    }
    let mut projected = Vec::with_capacity(n * out_dim);
    for x in points.chunks_exact(dim) {
        for r in 0..out_dim {
            let c = &components[r * dim..(r + 1) * dim];
            projected.push(c.iter().zip(x).zip(&mean).map(|((w, v), m)| w * (v - m)).sum());
        }
    }
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        projected,
        out_dim,
    })
}
