use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Counts `[clusters × labels]` with both axes padded to the same size.
pub fn contingency(assignments: &[usize], labels: &[usize]) -> Result<(usize, Vec<u64>)> {
    if assignments.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} assignments vs {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    let kc = assignments.iter().max().map_or(0, |m| m + 1);
    let kl = labels.iter().max().map_or(0, |m| m + 1);
    let s = kc.max(kl);
    let mut table = vec![0u64; s * s];
    for (&a, &l) in assignments.iter().zip(labels) {
        table[a * s + l] += 1;
    }
    Ok((s, table))
}

/// Best total weight of a perfect matching by enumerating permutations.
pub fn match_exhaustive(s: usize, w: &[u64]) -> u64 {
    let mut perm: Vec<usize> = (0..s).collect();
    let score = |p: &[usize]| (0..s).map(|r| w[r * s + p[r]]).sum::<u64>();
    let mut best = score(&perm);
    // Heap's algorithm.
    let mut c = vec![0usize; s];
    let mut i = 1;
    while i < s {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(score(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Maximum-weight perfect matching on an `s × s` table (Hungarian method
/// on the negated weights). Returns the column matched to each row.
pub fn hungarian_max(s: usize, w: &[u64]) -> Vec<usize> {
    let max = w.iter().copied().max().unwrap_or(0) as i64;
    let cost = |r: usize, c: usize| max - w[r * s + c] as i64;
    let inf = i64::MAX / 4;
    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![0i64; s + 1];
    let mut v = vec![0i64; s + 1];
    let mut p = vec![0usize; s + 1];
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=s {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=s {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; s];
    for j in 1..=s {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Fraction of items whose cluster maps to their label under the best
/// one-to-one relabelling of clusters.
pub fn cluster_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let (s, table) = contingency(assignments, labels)?;
    if labels.is_empty() {
        return Err(Error::contract("cluster_accuracy of an empty set"));
    }
    let matched = if s <= 10 {
        match_exhaustive(s, &table)
    } else {
        let m = hungarian_max(s, &table);
        m.iter().enumerate().map(|(r, &c)| table[r * s + c]).sum()
    };
    Ok(matched as f64 / labels.len() as f64)
}
