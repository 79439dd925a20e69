use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{check_points, sq_dist};
use crate::rng::{self, SimRng};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
        }
    }
}

/// A fitted clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    /// `[k, dim]`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Nearest centroid of every row of `points` (ties to the lower index).
    pub fn predict(&self, points: &[f64]) -> Result<Vec<usize>> {
        check_points(points, self.dim)?;
        Ok(points
            .chunks_exact(self.dim)
            .map(|x| nearest(x, &self.centroids, self.dim).0)
            .collect())
    }
}

fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut SimRng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng::below(rng, n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng::uniform(rng, 0.0, total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng::below(rng, n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..start + dim]));
        }
    }
    centroids
}

fn recompute(points: &[f64], dim: usize, k: usize, assign: &[usize], centroids: &mut [f64]) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * dim];
    for (x, &a) in points.chunks_exact(dim).zip(assign) {
        counts[a] += 1;
        sums[a * dim..(a + 1) * dim].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..dim {
                centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
            }
        }
    }
    counts
}

/// Single-point transfers that lower the within-cluster sum of squares,
/// repeated until none helps.
fn transfer_pass(points: &[f64], dim: usize, k: usize, assign: &mut [usize], centroids: &mut [f64]) {
    let mut counts = recompute(points, dim, k, assign, centroids);
    loop {
        let mut moved = false;
        for (i, x) in points.chunks_exact(dim).enumerate() {
            let a = assign[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let remove_gain = na / (na - 1.0) * sq_dist(x, &centroids[a * dim..(a + 1) * dim]);
            let mut best = (a, 0.0);
            for c in (0..k).filter(|&c| c != a) {
                let nc = counts[c] as f64;
                let add_cost = nc / (nc + 1.0) * sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                let gain = remove_gain - add_cost;
                if gain > best.1 * (1.0 + 1e-12) + 1e-15 {
                    best = (c, gain);
                }
            }
            if best.0 != a {
                let b = best.0;
                let nb = counts[b] as f64;
                for j in 0..dim {
                    let v = x[j];
                    centroids[a * dim + j] = (centroids[a * dim + j] * na - v) / (na - 1.0);
                    centroids[b * dim + j] = (centroids[b * dim + j] * nb + v) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                assign[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        recompute(points, dim, k, assign, centroids);
    }
}

fn lloyd(points: &[f64], dim: usize, k: usize, max_iter: usize, rng: &mut SimRng) -> KMeans {
    let n = points.len() / dim;
    let mut centroids = plus_plus(points, dim, k, rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, x) in points.chunks_exact(dim).enumerate() {
            let (c, _) = nearest(x, &centroids, dim);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        let counts = recompute(points, dim, k, &assign, &mut centroids);
        for c in (0..k).filter(|&c| counts[c] == 0) {
            // Re-seed an empty cluster at the point farthest from its centroid.
            let (far, _) = points
                .chunks_exact(dim)
                .enumerate()
                .map(|(i, x)| (i, sq_dist(x, &centroids[assign[i] * dim..(assign[i] + 1) * dim])))
                .fold((0, -1.0), |b, v| if v.1 > b.1 { v } else { b });
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
            assign[far] = c;
            recompute(points, dim, k, &assign, &mut centroids);
            changed = true;
        }
        if !changed {
            break;
        }
    }
    transfer_pass(points, dim, k, &mut assign, &mut centroids);
    let inertia = points
        .chunks_exact(dim)
        .zip(&assign)
        .map(|(x, &a)| sq_dist(x, &centroids[a * dim..(a + 1) * dim]))
        .sum();
    KMeans {
        k,
        dim,
        centroids,
        assignments: assign,
        inertia,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of several restarts.
///
/// `points` is `[E, dim]` row-major.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, opts: KMeansOptions) -> Result<KMeans> {
    let n = check_points(points, dim)?;
    if k == 0 || n < k {
        return Err(Error::contract(format!("kmeans needs E >= K >= 1, got E={n}, K={k}")));
    }
    if opts.restarts == 0 || opts.max_iter == 0 {
        return Err(Error::config("kmeans needs restarts and max_iter >= 1"));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..opts.restarts {
        let mut rng = rng::stream(seed, r as u64);
        let fit = lloyd(points, dim, k, opts.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts >= 1"))
}
