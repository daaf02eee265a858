//! Downstream evaluation of frozen embeddings: linear-probe
//! classification over the labeled splits and k-means clustering.

pub mod cluster;
pub mod metrics;
pub mod probe;

pub use cluster::{cluster_eval, ClusteringReport};
pub use probe::{linear_probe, ClassificationReport, MetricStat};

use crate::graph::HeteroGraph;
use ndarray::ArrayView2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} absent from split '{split}'")]
    MissingClass { class: u32, split: String },
    #[error("evaluation error: {0}")]
    Invalid(String),
}

/// Number of probe repetitions / k-means restarts.
pub const EVAL_RUNS: usize = 10;

/// Runs the linear probe on every train split of the graph's split
/// family (train20/train40/train60 where present) against the shared
/// val/test splits.
pub fn classify_all_splits(
    emb: ArrayView2<'_, f64>,
    g: &HeteroGraph,
    seed: u64,
) -> Result<Vec<ClassificationReport>, EvalError> {
    let labels = g
        .labels()
        .ok_or_else(|| EvalError::Invalid("dataset has no labels".into()))?;
    let val = g
        .split("val")
        .ok_or_else(|| EvalError::Invalid("missing split 'val'".into()))?;
    let test = g
        .split("test")
        .ok_or_else(|| EvalError::Invalid("missing split 'test'".into()))?;
    let seeds: Vec<u64> = (0..EVAL_RUNS as u64).map(|i| seed.wrapping_add(i)).collect();
    let mut reports = Vec::new();
    let mut train_splits: Vec<&str> = g
        .split_names()
        .filter(|n| n.starts_with("train"))
        .collect();
    train_splits.sort();
    if train_splits.is_empty() {
        return Err(EvalError::Invalid("no train split found".into()));
    }
    for name in train_splits {
        let train = g.split(name).expect("name from split_names");
        reports.push(linear_probe(
            emb,
            labels,
            g.num_classes(),
            name,
            train,
            val,
            test,
            &seeds,
        )?);
    }
    Ok(reports)
}

/// K-means over all target nodes against ground-truth labels.
pub fn cluster_embeddings(
    emb: ArrayView2<'_, f64>,
    g: &HeteroGraph,
    seed: u64,
) -> Result<ClusteringReport, EvalError> {
    let labels = g
        .labels()
        .ok_or_else(|| EvalError::Invalid("dataset has no labels".into()))?;
    cluster_eval(emb, labels, g.num_classes(), EVAL_RUNS, seed)
}
