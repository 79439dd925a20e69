//! End-to-end relation analysis of a trained model.

use alloc::vec::Vec;

use super::{choose_k_with, cluster_accuracy, kmeans, pca_project, ChooseK, KMeansOptions, LatentSet, Pca};
use crate::model::{Inferred, Model};
use crate::physics::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// Number of clusters for the accuracy fit.
    pub k: usize,
    pub k_range: Vec<usize>,
    pub max_silhouette_points: usize,
    pub kmeans: KMeansOptions,
    pub seed: u64,
    /// Prefix of each trajectory the encoder may look at.
    pub observed_steps: usize,
    pub window: usize,
    pub stride: usize,
    /// Label vocabulary size.
    pub n_labels: usize,
    /// Output dimension of the projection.
    pub projection_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationAnalysis {
    pub k: usize,
    /// Permutation-matched accuracy of the test assignments.
    pub accuracy: f64,
    pub train: Inferred,
    pub test: Inferred,
    /// Ground-truth label per test edge.
    pub test_labels: Vec<usize>,
    /// Cluster of each test edge, from centroids fitted on training edges.
    pub test_assignments: Vec<usize>,
    /// Silhouette per candidate cluster count, on training edges.
    pub choose: ChooseK,
    /// Projection of the test relation states.
    pub projection: Pca,
    /// Mean test centrality per label (NaN for absent labels).
    pub centrality_by_label: Vec<f64>,
    /// Number of test edges per label.
    pub label_counts: Vec<usize>,
}

fn states(trajs: &[Trajectory]) -> Vec<&[f64]> {
    trajs.iter().map(|t| t.states.as_slice()).collect()
}

/// Clusters training-set relation states, applies the clustering to the
/// test set and scores it against the ground truth.
pub fn analyze_relations(
    model: &Model,
    train: &[Trajectory],
    test: &[Trajectory],
    opts: &AnalysisOptions,
) -> Result<RelationAnalysis> {
    let Some(first) = train.first().or(test.first()) else {
        return Err(Error::contract("analysis needs trajectories"));
    };
    if test.is_empty() || train.is_empty() {
        return Err(Error::contract("analysis needs training and test trajectories"));
    }
    let n = first.n_nodes;
    let dr = model.config.relation_dim;
    let infer = |t: &[Trajectory]| model.infer(&states(t), n, opts.observed_steps, opts.window, opts.stride);
    let tr = infer(train)?;
    let te = infer(test)?;
    let fit = kmeans(&tr.relations, dr, opts.k, opts.seed, opts.kmeans)?;
    let test_assignments = fit.predict(&te.relations)?;
    let test_labels: Vec<usize> = test.iter().flat_map(|t| t.labels.iter().copied()).collect();
    let accuracy = cluster_accuracy(&test_assignments, &test_labels)?;
    let choose = choose_k_with(
        &tr.relations,
        dr,
        &opts.k_range,
        opts.seed,
        opts.max_silhouette_points,
        opts.kmeans,
    )?;
    let projection = pca_project(&te.relations, dr, opts.projection_dim.min(dr))?;
    let latent = LatentSet::new(te.relations.clone(), dr)?
        .with_labels(test_labels.clone())?
        .with_centralities(te.centralities.clone())?;
    let centrality_by_label = latent.mean_centrality_by_label(opts.n_labels)?;
    let mut label_counts = alloc::vec![0usize; opts.n_labels];
    for &l in &test_labels {
        label_counts[l] += 1;
    }
    Ok(RelationAnalysis {
        k: opts.k,
        accuracy,
        train: tr,
        test: te,
        test_labels,
        test_assignments,
        choose,
        projection,
        centrality_by_label,
        label_counts,
    })
}
