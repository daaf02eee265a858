//! Materializes the three views' neighborhood structures over target
//! nodes: sampled first-order neighbor lists per non-target type
//! (low-order view), one adjacency per meta-path (high-order view), and
//! the thresholded attribute-similarity graph (feature view).

use crate::graph::{
    metapath_adjacency, DataError, FeatureMatrix, HeteroGraph, NodeTypeId, SparseAdj,
};
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Row tile height for the blocked similarity computation; bounds peak
/// memory at tile x n instead of n x n.
const SIM_TILE: usize = 256;

/// Neighbor lists for one target node: per non-target type, the sampled
/// first-order neighbors (empty when the node has none of that type).
pub type NeighborSamples = Vec<Vec<Vec<u32>>>;

/// The three per-view neighborhood structures.
#[derive(Debug, Clone)]
pub struct ViewBundle {
    /// `low_order[k][i]` = sampled type-`types[k]` neighbors of target
    /// node i; an empty list excludes the type from that node's fusion.
    pub low_order: NeighborSamples,
    /// Node types indexing `low_order`.
    pub low_order_types: Vec<NodeTypeId>,
    /// One adjacency per meta-path, self-loops included.
    pub high_order: Vec<SparseAdj>,
    /// Meta-path adjacencies without self-loops (positive sampling input).
    pub high_order_base: Vec<SparseAdj>,
    /// Attribute-similarity adjacency (symmetric, all self-loops).
    pub similarity: SparseAdj,
    pub theta: f64,
}

/// Builds everything except the per-epoch neighbor samples: meta-path
/// adjacencies and the similarity graph are fixed for a run.
pub fn build_views(g: &HeteroGraph, theta: f64) -> Result<ViewBundle, DataError> {
    let mut high_order = Vec::new();
    let mut high_order_base = Vec::new();
    for p in g.metapaths() {
        let base = metapath_adjacency(g, p, false)?;
        high_order.push(base.with_self_loops());
        high_order_base.push(base);
    }
    let target_features = g
        .features(g.target_type())
        .ok_or_else(|| DataError::Invalid("target type has no features".into()))?;
    let x = match target_features {
        FeatureMatrix::Dense(x) => x.view(),
        other => {
            // one-hot targets would make every similarity zero; treat as
            // unsupported rather than silently building a diagonal graph
            return Err(DataError::Invalid(format!(
                "similarity view needs dense target features, found {other:?}"
            )));
        }
    };
    let similarity = build_similarity_graph(x, theta)?;
    Ok(ViewBundle {
        low_order: Vec::new(),
        low_order_types: g.neighbor_types_of_target(),
        high_order,
        high_order_base,
        similarity,
        theta,
    })
}

/// Thresholded cosine graph over the rows of `x`: edge (i, j) present iff
/// cos(x_i, x_j) >= theta. Rows are L2-normalized once and the Gram matrix
/// is evaluated in row tiles, never materialized densely. Zero-norm rows
/// get only their self-loop.
pub fn build_similarity_graph(x: ArrayView2<'_, f64>, theta: f64) -> Result<SparseAdj, DataError> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(DataError::Invalid(format!(
            "similarity threshold {theta} outside [-1, 1]"
        )));
    }
    if x.ncols() == 0 {
        return Err(DataError::Invalid(
            "similarity graph needs at least one feature column".into(),
        ));
    }
    let n = x.nrows();
    let mut unit = x.to_owned();
    let mut zero_norm = vec![false; n];
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_norm[i] = true;
        } else {
            row.mapv_inplace(|v| v / norm);
        }
    }

    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + SIM_TILE).min(n);
        let gram = crate::tape::par_matmul(unit.slice(s![start..end, ..]), unit.t());
        let mut tile: Vec<Vec<u32>> = (0..end - start)
            .into_par_iter()
            .map(|r| {
                let i = start + r;
                if zero_norm[i] {
                    return vec![i as u32];
                }
                let mut row = Vec::new();
                for j in 0..n {
                    if j == i {
                        row.push(j as u32);
                    } else if !zero_norm[j] && gram[(r, j)] >= theta {
                        row.push(j as u32);
                    }
                }
                row
            })
            .collect();
        rows.append(&mut tile);
        start = end;
    }
    Ok(SparseAdj::from_rows(n, rows))
}

/// Samples first-order neighbors of every target node, per non-target
/// type: m without replacement when the node has at least m, m with
/// replacement when it has 1..m-1, and an empty list when it has none.
/// Returns lists indexed `[type][node]` following
/// `g.neighbor_types_of_target()` order.
pub fn sample_type_neighbors(
    g: &HeteroGraph,
    m_per_type: &BTreeMap<NodeTypeId, usize>,
    rng: &mut impl Rng,
) -> NeighborSamples {
    let n = g.n_target();
    let mut out = Vec::new();
    for &t in &g.neighbor_types_of_target() {
        let m = *m_per_type.get(&t).unwrap_or(&DEFAULT_NEIGHBORS);
        assert!(m > 0, "neighbor budget for type {t:?} must be positive");
        let adj = g.target_neighbors_of_type(t);
        let mut lists = Vec::with_capacity(n);
        for i in 0..n {
            let nbrs = adj.row(i);
            let sample = if nbrs.is_empty() {
                Vec::new()
            } else if nbrs.len() >= m {
                sample_without_replacement(nbrs, m, rng)
            } else {
                (0..m).map(|_| nbrs[rng.random_range(0..nbrs.len())]).collect()
            };
            lists.push(sample);
        }
        out.push(lists);
    }
    out
}

/// Default fan-in per neighbor type.
pub const DEFAULT_NEIGHBORS: usize = 7;

fn sample_without_replacement(pool: &[u32], m: usize, rng: &mut impl Rng) -> Vec<u32> {
    // partial Fisher-Yates over a scratch copy
    let mut scratch = pool.to_vec();
    for i in 0..m {
        let j = rng.random_range(i..scratch.len());
        scratch.swap(i, j);
    }
    scratch.truncate(m);
    scratch
}

/// Dense reference for tests and audits: the full thresholded cosine
/// matrix computed pairwise.
pub fn dense_similarity_oracle(x: ArrayView2<'_, f64>, theta: f64) -> Array2<bool> {
    let n = x.nrows();
    let mut unit = x.to_owned();
    let mut zero = vec![false; n];
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero[i] = true;
        } else {
            row.mapv_inplace(|v| v / norm);
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            true
        } else if zero[i] || zero[j] {
            false
        } else {
            let dot: f64 = unit.row(i).iter().zip(unit.row(j).iter()).map(|(a, b)| a * b).sum();
            dot >= theta
        }
    })
}
