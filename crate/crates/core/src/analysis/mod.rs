//! Turning relation states into discrete findings: k-means, silhouette
//! based choice of the number of relation types, permutation-matched
//! accuracy and PCA projection.

mod accuracy;
mod kmeans;
mod pca;
mod report;
mod silhouette;

use alloc::format;
use alloc::vec::Vec;

pub use accuracy::{cluster_accuracy, contingency, hungarian_max, match_exhaustive};
pub use kmeans::{kmeans, KMeans, KMeansOptions};
pub use pca::{pca_project, Pca};
pub use report::{analyze_relations, AnalysisOptions, RelationAnalysis};
pub use silhouette::{choose_k, choose_k_with, silhouette_score, ChooseK};

use crate::{Error, Result};

/// Relation states with optional ground truth, `[E, dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    pub points: Vec<f64>,
    pub dim: usize,
    pub labels: Option<Vec<usize>>,
    pub centralities: Option<Vec<f64>>,
}

impl LatentSet {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::contract(format!(
                "{} values do not form rows of width {dim}",
                points.len()
            )));
        }
        Ok(Self {
            points,
            dim,
            labels: None,
            centralities: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::contract("one label per point required"));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_centralities(mut self, c: Vec<f64>) -> Result<Self> {
        if c.len() != self.len() {
            return Err(Error::contract("one centrality per point required"));
        }
        self.centralities = Some(c);
        Ok(self)
    }

    /// Mean centrality for each label `0..n_labels` (NaN when a label is
    /// absent).
    pub fn mean_centrality_by_label(&self, n_labels: usize) -> Result<Vec<f64>> {
        let (Some(labels), Some(c)) = (&self.labels, &self.centralities) else {
            return Err(Error::contract("labels and centralities required"));
        };
        let mut sum = alloc::vec![0.0; n_labels];
        let mut count = alloc::vec![0usize; n_labels];
        for (&l, &v) in labels.iter().zip(c) {
            if l >= n_labels {
                return Err(Error::contract(format!("label {l} >= {n_labels}")));
            }
            sum[l] += v;
            count[l] += 1;
        }
        Ok(sum
            .iter()
            .zip(&count)
            .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect())
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_points(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::contract(format!(
            "{} values do not form rows of width {dim}",
            points.len()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input".into()));
    }
    Ok(points.len() / dim)
}
