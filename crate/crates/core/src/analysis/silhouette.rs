use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kmeans::{kmeans, KMeansOptions};
use super::{check_points, sq_dist};
use crate::{math, rng, Error, Result};

/// Mean silhouette `(b − a) / max(a, b)` over all points, Euclidean metric.
/// Points alone in their cluster score 0.
pub fn silhouette_score(points: &[f64], dim: usize, assignments: &[usize]) -> Result<f64> {
    let n = check_points(points, dim)?;
    if assignments.len() != n {
        return Err(Error::contract(format!("{} assignments for {n} points", assignments.len())));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    let present = sizes.iter().filter(|&&s| s > 0).count();
    if present < 2 {
        return Err(Error::contract("silhouette needs at least 2 non-empty clusters"));
    }
    if sizes.iter().all(|&s| s <= 1) {
        return Err(Error::contract("silhouette is undefined when every cluster is a singleton"));
    }
    let mut total = 0.0;
    let mut dist_sum = vec![0.0; k];
    for i in 0..n {
        dist_sum.iter_mut().for_each(|v| *v = 0.0);
        let xi = &points[i * dim..(i + 1) * dim];
        for j in 0..n {
            if j != i {
                dist_sum[assignments[j]] += math::sqrt(sq_dist(xi, &points[j * dim..(j + 1) * dim]));
            }
        }
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = dist_sum[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| dist_sum[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Silhouette per candidate `k` and the winner.
#[derive(Debug, Clone, PartialEq)]
pub struct ChooseK {
    pub best_k: usize,
    /// `(k, silhouette)` in the order given.
    pub scores: Vec<(usize, f64)>,
    /// Indices of the points the silhouettes were computed on, when the
    /// input was subsampled.
    pub subsample: Option<Vec<usize>>,
}

/// Fits k-means for each `k` and picks the largest silhouette (ties go to
/// the smaller `k`). Silhouettes use at most `max_points` points drawn
/// with `seed`.
pub fn choose_k(points: &[f64], dim: usize, ks: &[usize], seed: u64, max_points: usize) -> Result<ChooseK> {
    choose_k_with(points, dim, ks, seed, max_points, KMeansOptions::default())
}

/// [`choose_k`] with explicit k-means settings.
pub fn choose_k_with(
    points: &[f64],
    dim: usize,
    ks: &[usize],
    seed: u64,
    max_points: usize,
    opts: KMeansOptions,
) -> Result<ChooseK> {
    let n = check_points(points, dim)?;
    if ks.is_empty() || ks.iter().any(|&k| k < 2 || k >= n) {
        return Err(Error::contract(format!("k range {ks:?} must lie in [2, {}]", n.saturating_sub(1))));
    }
    let subsample = (n > max_points).then(|| {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut r = rng::stream(seed, 0xA11CE);
        for i in 0..max_points {
            let j = i + rng::below(&mut r, n - i);
            idx.swap(i, j);
        }
        idx.truncate(max_points);
        idx.sort_unstable();
        idx
    });
    let sub_points: Vec<f64> = match &subsample {
        Some(idx) => idx.iter().flat_map(|&i| points[i * dim..(i + 1) * dim].iter().copied()).collect(),
        None => points.to_vec(),
    };
    let mut scores = Vec::with_capacity(ks.len());
    for &k in ks {
        let fit = kmeans(points, dim, k, seed, opts)?;
        let assign: Vec<usize> = match &subsample {
            Some(idx) => idx.iter().map(|&i| fit.assignments[i]).collect(),
            None => fit.assignments,
        };
        scores.push((k, silhouette_score(&sub_points, dim, &assign)?));
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 || (s.1 == best.1 && s.0 < best.0) {
            best = s;
        }
    }
    Ok(ChooseK {
        best_k: best.0,
        scores,
        subsample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_split_scores_high() {
        let pts = [0.0, 0.1, 10.0, 10.1];
        let s = silhouette_score(&pts, 1, &[0, 0, 1, 1]).unwrap();
        // Point 0: a = 0.1, b = 10.05 → 0.99005; the others mirror it.
        let p0 = (10.05 - 0.1) / 10.05;
        let p1 = (9.95 - 0.1) / 9.95;
        assert!((s - (p0 + p1) / 2.0).abs() < 1e-12);
        assert!((s - 0.99).abs() < 0.01);
    }

    #[test]
    fn one_cluster_rejected() {
        assert!(silhouette_score(&[0.0, 1.0], 1, &[0, 0]).is_err());
        assert!(silhouette_score(&[0.0, 1.0], 1, &[0, 1]).is_err());
    }
}
