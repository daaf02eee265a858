//! Attribute-enhanced positive sampling: per anchor, the union of the
//! top-k structural candidates (meta-path membership counts) and the
//! top-k attribute candidates (feature cosine), plus the anchor itself;
//! everything else is negative.

use crate::graph::SparseAdj;
use ndarray::{s, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which candidate sources feed the positive sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Both,
    StructOnly,
    AttrOnly,
}

/// Frozen per-anchor positive/negative partition over target nodes.
#[derive(Debug, Clone)]
pub struct PositiveSets {
    /// Structural candidates per anchor (sorted, anchor excluded).
    pub struct_pos: Vec<Vec<u32>>,
    /// Attribute candidates per anchor (sorted, anchor excluded).
    pub attr_pos: Vec<Vec<u32>>,
    /// Union plus the anchor itself (sorted).
    pub positives: Vec<Vec<u32>>,
    /// Complement of `positives` (sorted).
    pub negatives: Vec<Vec<u32>>,
}

/// Number of meta-paths whose neighborhood of `i` contains `j`; the
/// self-pair is defined as 0 (the anchor joins its positive set
/// unconditionally, not through counting).
pub fn metapath_count(base_adjs: &[SparseAdj], i: usize, j: usize) -> usize {
    if i == j {
        return 0;
    }
    base_adjs
        .iter()
        .filter(|adj| adj.contains(i, j as u32))
        .count()
}

/// Per-anchor candidate counts as a sparse list of (node, count), sorted
/// by node id, anchor excluded.
fn count_candidates(base_adjs: &[SparseAdj], i: usize) -> Vec<(u32, usize)> {
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for adj in base_adjs {
        for &j in adj.row(i) {
            if j as usize == i {
                continue;
            }
            match counts.binary_search_by_key(&j, |&(n, _)| n) {
                Ok(p) => counts[p].1 += 1,
                Err(p) => counts.insert(p, (j, 1)),
            }
        }
    }
    counts
}

/// The k nodes with the largest nonzero meta-path counts; ties break by
/// ascending node id, and fewer than k qualifying nodes returns them all.
pub fn structural_topk(counts: &[(u32, usize)], k: usize) -> Vec<u32> {
    let mut ranked: Vec<(u32, usize)> = counts.iter().copied().filter(|&(_, c)| c > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    let mut out: Vec<u32> = ranked.into_iter().map(|(n, _)| n).collect();
    out.sort_unstable();
    out
}

/// The k nodes most cosine-similar to anchor `i` (anchor excluded,
/// zero-norm rows similar to nothing, ties by ascending id).
pub fn attribute_topk(x: ArrayView2<'_, f64>, i: usize, k: usize) -> Vec<u32> {
    let n = x.nrows();
    let norms: Vec<f64> = (0..n)
        .map(|r| x.row(r).iter().map(|&v| v * v).sum::<f64>().sqrt())
        .collect();
    let sims: Vec<f64> = (0..n)
        .map(|j| {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| a * b).sum();
                dot / (norms[i] * norms[j])
            }
        })
        .collect();
    rank_topk(&sims, i, k)
}

fn rank_topk(sims: &[f64], anchor: usize, k: usize) -> Vec<u32> {
    let mut cands: Vec<u32> = (0..sims.len() as u32).filter(|&j| j as usize != anchor).collect();
    let cmp = |a: &u32, b: &u32| {
        sims[*b as usize]
            .partial_cmp(&sims[*a as usize])
            .expect("cosines are finite")
            .then(a.cmp(b))
    };
    if k > 0 && k < cands.len() {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    } else if k == 0 {
        cands.clear();
    }
    cands.sort_unstable();
    cands
}

/// Union of the two candidate sets plus the anchor; the complement over
/// all `n` target nodes is the negative set.
pub fn merge_positives(
    struct_pos: &[u32],
    attr_pos: &[u32],
    anchor: u32,
    n: usize,
) -> (Vec<u32>, Vec<u32>) {
    let mut pos: Vec<u32> = struct_pos
        .iter()
        .chain(attr_pos.iter())
        .copied()
        .chain(std::iter::once(anchor))
        .collect();
    pos.sort_unstable();
    pos.dedup();
    let mut neg = Vec::with_capacity(n - pos.len());
    let mut pk = 0usize;
    for j in 0..n as u32 {
        if pk < pos.len() && pos[pk] == j {
            pk += 1;
        } else {
            neg.push(j);
        }
    }
    (pos, neg)
}

/// Builds the frozen positive/negative partition for every anchor from
/// the self-loop-free meta-path adjacencies and the clean (unmasked)
/// target features.
pub fn build_positive_sets(
    base_adjs: &[SparseAdj],
    clean_features: ArrayView2<'_, f64>,
    k_struct: usize,
    k_attr: usize,
    mode: SamplingMode,
) -> PositiveSets {
    let n = clean_features.nrows();

    let struct_pos: Vec<Vec<u32>> = if mode == SamplingMode::AttrOnly || k_struct == 0 {
        vec![Vec::new(); n]
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| structural_topk(&count_candidates(base_adjs, i), k_struct))
            .collect()
    };

    let attr_pos: Vec<Vec<u32>> = if mode == SamplingMode::StructOnly || k_attr == 0 {
        vec![Vec::new(); n]
    } else {
        attribute_topk_all(clean_features, k_attr)
    };

    let mut positives = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    for i in 0..n {
        let (p, neg) = merge_positives(&struct_pos[i], &attr_pos[i], i as u32, n);
        positives.push(p);
        negatives.push(neg);
    }
    PositiveSets {
        struct_pos,
        attr_pos,
        positives,
        negatives,
    }
}

/// Blocked variant of [`attribute_topk`] for all anchors at once: rows are
/// L2-normalized once and the Gram matrix is streamed in row tiles.
fn attribute_topk_all(x: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<u32>> {
    const TILE: usize = 256;
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
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + TILE).min(n);
        let gram = crate::tape::par_matmul(unit.slice(s![start..end, ..]), unit.t());
        let mut tile: Vec<Vec<u32>> = (0..end - start)
            .into_par_iter()
            .map(|r| {
                let i = start + r;
                let sims: Vec<f64> = (0..n)
                    .map(|j| {
                        if zero[i] || zero[j] {
                            0.0
                        } else {
                            gram[(r, j)]
                        }
                    })
                    .collect();
                rank_topk(&sims, i, k)
            })
            .collect();
        out.append(&mut tile);
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{metapath_adjacency, testutil::paper_fixture};
    use ndarray::arr2;

    #[test]
    fn counts_on_fixture() {
        let g = paper_fixture();
        let adjs: Vec<SparseAdj> = g
            .metapaths()
            .iter()
            .map(|p| metapath_adjacency(&g, p, false).unwrap())
            .collect();
        // P1 and P2 share an author AND the subject: both meta-paths hit
        assert_eq!(metapath_count(&adjs, 0, 1), 2);
        // P1 and P3 share only the subject
        assert_eq!(metapath_count(&adjs, 0, 2), 1);
        // self-pairs count as zero by definition
        assert_eq!(metapath_count(&adjs, 0, 0), 0);
        assert_eq!(metapath_count(&adjs, 2, 2), 0);
        // a node in no neighborhood
        let empty = [SparseAdj::empty(3, 3)];
        assert_eq!(metapath_count(&empty, 0, 1), 0);
    }

    #[test]
    fn structural_topk_rules() {
        // all counts zero -> empty
        assert!(structural_topk(&[(0, 0), (5, 0)], 3).is_empty());
        // fewer qualifying than k -> all of them
        assert_eq!(structural_topk(&[(2, 1), (7, 3)], 10), vec![2, 7]);
        // counts {a=1: 2, b=4: 2, c=6: 1}
        let counts = [(1, 2), (4, 2), (6, 1)];
        assert_eq!(structural_topk(&counts, 2), vec![1, 4]);
        assert_eq!(structural_topk(&counts, 1), vec![1], "tie broken by id");
        // naive sort oracle over every k
        let naive = |k: usize| {
            let mut v: Vec<(u32, usize)> =
                counts.iter().copied().filter(|&(_, c)| c > 0).collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut ids: Vec<u32> = v.into_iter().take(k).map(|(n, _)| n).collect();
            ids.sort_unstable();
            ids
        };
        for k in 0..5 {
            assert_eq!(structural_topk(&counts, k), naive(k), "k = {k}");
        }
    }

    #[test]
    fn structural_topk_invariant_to_metapath_order() {
        let g = paper_fixture();
        let mut adjs: Vec<SparseAdj> = g
            .metapaths()
            .iter()
            .map(|p| metapath_adjacency(&g, p, false).unwrap())
            .collect();
        let fwd = structural_topk(&count_candidates(&adjs, 0), 2);
        adjs.reverse();
        let rev = structural_topk(&count_candidates(&adjs, 0), 2);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn attribute_topk_rules() {
        let x = arr2(&[
            [1.0, 0.0],
            [1.0, 0.0], // duplicate of row 0
            [0.0, 1.0],
            [1.0, 1.0],
        ]);
        assert!(attribute_topk(x.view(), 0, 0).is_empty());
        // the exact duplicate ranks first
        assert_eq!(attribute_topk(x.view(), 0, 1), vec![1]);
        // dense oracle for top-2 of anchor 0: cos = [_, 1, 0, 0.707]
        assert_eq!(attribute_topk(x.view(), 0, 2), vec![1, 3]);
        // anchor 2: cos = [0, 0, _, 0.707] -> top2 = {3, then tie 0 vs 1 by id}
        assert_eq!(attribute_topk(x.view(), 2, 2), vec![0, 3]);
    }

    #[test]
    fn attribute_topk_scale_invariant() {
        let x = arr2(&[
            [0.3, 0.1, 2.0],
            [1.0, 0.2, 0.1],
            [0.2, 0.9, 0.4],
            [2.0, 0.1, 0.3],
            [0.1, 0.1, 0.1],
        ]);
        let mut scaled = x.clone();
        for (i, s) in [2.0, 0.5, 8.0, 0.25, 4.0].iter().enumerate() {
            let mut row = scaled.row_mut(i);
            row.mapv_inplace(|v| v * s);
        }
        for i in 0..5 {
            for k in 0..5 {
                assert_eq!(
                    attribute_topk(x.view(), i, k),
                    attribute_topk(scaled.view(), i, k),
                    "anchor {i} k {k}"
                );
            }
        }
    }

    #[test]
    fn merge_rules() {
        let (p, n) = merge_positives(&[1, 2, 3, 4, 5], &[6, 7, 8, 9, 10], 0, 20);
        assert_eq!(p.len(), 11);
        assert_eq!(n.len(), 9);
        let (p, _) = merge_positives(&[1, 2, 3, 4, 5], &[1, 2, 3, 4, 5], 0, 20);
        assert_eq!(p.len(), 6);
        let (p, n) = merge_positives(&[], &[], 3, 5);
        assert_eq!(p, vec![3]);
        assert_eq!(n, vec![0, 1, 2, 4]);
    }

    #[test]
    fn partition_holds_on_fixture() {
        let g = paper_fixture();
        let adjs: Vec<SparseAdj> = g
            .metapaths()
            .iter()
            .map(|p| metapath_adjacency(&g, p, false).unwrap())
            .collect();
        let x = match g.features(g.target_type()).unwrap() {
            crate::graph::FeatureMatrix::Dense(x) => x.clone(),
            _ => unreachable!(),
        };
        let sets = build_positive_sets(&adjs, x.view(), 2, 1, SamplingMode::Both);
        let n = g.n_target();
        for i in 0..n {
            assert!(sets.positives[i].binary_search(&(i as u32)).is_ok());
            assert!(sets.positives[i].len() <= 2 + 1 + 1);
            let mut union: Vec<u32> = sets.positives[i]
                .iter()
                .chain(sets.negatives[i].iter())
                .copied()
                .collect();
            union.sort_unstable();
            assert_eq!(union, (0..n as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn blocked_topk_matches_per_anchor() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let x = ndarray::Array2::from_shape_fn((300, 9), |_| rng.random::<f64>() - 0.5);
        let all = attribute_topk_all(x.view(), 4);
        for i in (0..300).step_by(37) {
            assert_eq!(all[i], attribute_topk(x.view(), i, 4), "anchor {i}");
        }
    }

    #[test]
    fn sampling_modes_gate_sources() {
        let g = paper_fixture();
        let adjs: Vec<SparseAdj> = g
            .metapaths()
            .iter()
            .map(|p| metapath_adjacency(&g, p, false).unwrap())
            .collect();
        let x = match g.features(g.target_type()).unwrap() {
            crate::graph::FeatureMatrix::Dense(x) => x.clone(),
            _ => unreachable!(),
        };
        let s = build_positive_sets(&adjs, x.view(), 2, 2, SamplingMode::StructOnly);
        assert!(s.attr_pos.iter().all(|v| v.is_empty()));
        assert!(s.struct_pos.iter().any(|v| !v.is_empty()));
        let a = build_positive_sets(&adjs, x.view(), 2, 2, SamplingMode::AttrOnly);
        assert!(a.struct_pos.iter().all(|v| v.is_empty()));
        assert!(a.attr_pos.iter().any(|v| !v.is_empty()));
    }
}
