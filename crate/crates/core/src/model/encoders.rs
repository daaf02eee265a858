//! The three view encoders: first-order neighbor attention (low-order),
//! meta-path GCN with attention fusion (high-order), and the similarity
//! GCN (feature view).

use super::{ParamVars, ViewMode};
use crate::graph::{FeatureMatrix, HeteroGraph, NodeTypeId};
use crate::tape::{SpMat, Tape, TapeError, Var};
use crate::views::NeighborSamples;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::rc::Rc;

const LEAKY_SLOPE: f64 = 0.01;

/// Per-view target-node embeddings produced by one forward pass.
pub struct ViewEmbeds {
    pub fs: Option<Var>,
    pub lo: Option<Var>,
    pub ho: Var,
}

impl ViewEmbeds {
    /// Active views in the fixed (Fs, Lo, Ho) order.
    pub fn active(&self) -> Vec<(super::ViewKind, Var)> {
        let mut out = Vec::new();
        if let Some(fs) = self.fs {
            out.push((super::ViewKind::Fs, fs));
        }
        if let Some(lo) = self.lo {
            out.push((super::ViewKind::Lo, lo));
        }
        out.push((super::ViewKind::Ho, self.ho));
        out
    }

    pub fn get(&self, kind: super::ViewKind) -> Option<Var> {
        match kind {
            super::ViewKind::Fs => self.fs,
            super::ViewKind::Lo => self.lo,
            super::ViewKind::Ho => Some(self.ho),
        }
    }
}

/// H_t = ELU(X_t W_t + b_t), with dropout at train time. One-hot and
/// diagonal features skip the dense product: the identity (or its masked
/// diagonal) just selects and scales rows of W_t.
pub fn project_type_features(
    tape: &mut Tape,
    x: &FeatureMatrix,
    w: Var,
    b: Var,
    train: bool,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Var, TapeError> {
    let lin = match x {
        FeatureMatrix::Dense(m) => {
            let xv = tape.constant(m.clone());
            tape.matmul(xv, w)?
        }
        FeatureMatrix::OneHot(n) => {
            if tape.shape(w).0 != *n {
                return Err(TapeError::Shape {
                    op: "project_type_features",
                    detail: format!("one-hot({n}) vs projection {:?}", tape.shape(w)),
                });
            }
            w
        }
        FeatureMatrix::Diagonal(diag) => {
            let col = tape.constant(Array2::from_shape_fn((diag.len(), 1), |(i, _)| diag[i]));
            tape.mul_col(w, col)?
        }
    };
    let shifted = tape.add_row(lin, b)?;
    let h = tape.elu(shifted);
    if train && dropout > 0.0 {
        tape.dropout(h, dropout, rng)
    } else {
        Ok(h)
    }
}

/// Node-level attention over a fixed-size neighbor sample: softmax of
/// LeakyReLU(a^T [h_i || h_j]) over the m neighbors of each row, then an
/// ELU of the attention-weighted neighbor sum.
///
/// `h_anchor` is (s x d) and `h_nbr_flat` is ((s*m) x d), row r*m+p being
/// neighbor p of anchor r.
pub fn node_attention(
    tape: &mut Tape,
    h_anchor: Var,
    h_nbr_flat: Var,
    m: usize,
    attn: Var,
) -> Result<Var, TapeError> {
    let (s, d) = tape.shape(h_anchor);
    if tape.shape(attn) != (1, 2 * d) {
        return Err(TapeError::Shape {
            op: "node_attention",
            detail: format!("attention vector {:?}, embeddings {s}x{d}", tape.shape(attn)),
        });
    }
    if tape.shape(h_nbr_flat) != (s * m, d) {
        return Err(TapeError::Shape {
            op: "node_attention",
            detail: format!(
                "{} neighbor rows for {s} anchors of {m} samples",
                tape.shape(h_nbr_flat).0
            ),
        });
    }
    let a_src = tape.slice_cols(attn, 0, d)?;
    let a_dst = tape.slice_cols(attn, d, 2 * d)?;
    let u = tape.matmul_nt(h_anchor, a_src)?;
    let v_flat = tape.matmul_nt(h_nbr_flat, a_dst)?;
    let v = tape.reshape(v_flat, s, m)?;
    let pre = tape.add_col(v, u)?;
    let logits = tape.leaky_relu(pre, LEAKY_SLOPE);
    let alpha = tape.row_softmax(logits);
    let alpha_flat = tape.reshape(alpha, s * m, 1)?;
    let weighted = tape.mul_col(h_nbr_flat, alpha_flat)?;
    let summed = tape.sum_row_groups(weighted, m)?;
    Ok(tape.elu(summed))
}

/// Softmax-attention fusion shared by the type-level and meta-path-level
/// aggregations: each part k gets a scalar importance
/// w_k = mean_i a^T tanh(W h_i + b) over its scored rows, and every node
/// combines its present parts with softmax(w) renormalized over presence.
pub fn fuse_with_attention(
    tape: &mut Tape,
    parts_full: &[Var],
    score_inputs: &[Var],
    fuse: (Var, Var, Var),
    mask: Rc<Array2<bool>>,
) -> Result<Var, TapeError> {
    let (a, w, b) = fuse;
    assert_eq!(parts_full.len(), score_inputs.len());
    let k = parts_full.len();
    if k == 0 {
        return Err(TapeError::Invalid {
            op: "fuse_with_attention",
            detail: "no parts to fuse".into(),
        });
    }
    let n = tape.shape(parts_full[0]).0;
    let mut w_vec: Option<Var> = None;
    for &scored in score_inputs {
        let lin = tape.matmul(scored, w)?;
        let shifted = tape.add_row(lin, b)?;
        let t = tape.tanh(shifted);
        let scores = tape.matmul_nt(t, a)?;
        let wk = tape.mean_all(scores);
        w_vec = Some(match w_vec {
            None => wk,
            Some(prev) => tape.concat_cols(prev, wk)?,
        });
    }
    let w_vec = w_vec.expect("k >= 1");
    let rep = tape.repeat_rows(w_vec, n)?;
    let beta = tape.masked_row_softmax(rep, mask)?;
    let mut z: Option<Var> = None;
    for (ki, &part) in parts_full.iter().enumerate() {
        let col = tape.slice_cols(beta, ki, ki + 1)?;
        let contrib = tape.mul_col(part, col)?;
        z = Some(match z {
            None => contrib,
            Some(acc) => tape.add(acc, contrib)?,
        });
    }
    Ok(z.expect("k >= 1"))
}

/// Low-order view: per neighbor type, attention-aggregate the sampled
/// first-order neighbors, then fuse across types. Nodes without neighbors
/// of some type renormalize their type softmax over the present types.
pub fn encode_low_order(
    tape: &mut Tape,
    pv: &ParamVars,
    h_target: Var,
    h_by_type: &BTreeMap<NodeTypeId, Var>,
    types: &[NodeTypeId],
    samples: &NeighborSamples,
    n: usize,
) -> Result<Var, TapeError> {
    let mut parts_full = Vec::new();
    let mut score_inputs = Vec::new();
    let mut mask_cols: Vec<Vec<bool>> = Vec::new();

    for (k, &t) in types.iter().enumerate() {
        let lists = &samples[k];
        let anchors: Vec<usize> = (0..n).filter(|&i| !lists[i].is_empty()).collect();
        if anchors.is_empty() {
            continue;
        }
        let m = lists[anchors[0]].len();
        debug_assert!(anchors.iter().all(|&i| lists[i].len() == m));
        let flat: Vec<usize> = anchors
            .iter()
            .flat_map(|&i| lists[i].iter().map(|&j| j as usize))
            .collect();
        let h_nbr_type = *h_by_type.get(&t).ok_or_else(|| TapeError::Invalid {
            op: "encode_low_order",
            detail: format!("no projected features for neighbor type {t:?}"),
        })?;
        let attn = pv
            .attn
            .iter()
            .find(|(at, _)| *at == t)
            .map(|(_, v)| *v)
            .ok_or_else(|| TapeError::Invalid {
                op: "encode_low_order",
                detail: format!("no attention vector for type {t:?}"),
            })?;
        let anchors_rc = Rc::new(anchors.clone());
        let h_anchor = tape.gather(h_target, anchors_rc.clone())?;
        let h_nbr_flat = tape.gather(h_nbr_type, Rc::new(flat))?;
        let h_sub = node_attention(tape, h_anchor, h_nbr_flat, m, attn)?;
        let h_full = tape.scatter(h_sub, anchors_rc, n)?;
        parts_full.push(h_full);
        score_inputs.push(h_sub);
        mask_cols.push((0..n).map(|i| !lists[i].is_empty()).collect());
    }
    if parts_full.is_empty() {
        return Err(TapeError::Invalid {
            op: "encode_low_order",
            detail: "no neighbor type has any sampled neighbor".into(),
        });
    }
    let kcount = parts_full.len();
    let mask = Array2::from_shape_fn((n, kcount), |(i, k)| mask_cols[k][i]);
    fuse_with_attention(tape, &parts_full, &score_inputs, pv.fuse_lo, Rc::new(mask))
}

/// Mean-aggregate meta-path neighbors through the degree-normalized
/// adjacency (self-loops guarantee nonzero degree), then PReLU.
pub fn metapath_encode(
    tape: &mut Tape,
    adj_mean: Rc<SpMat>,
    h: Var,
    slope: Var,
) -> Result<Var, TapeError> {
    let agg = tape.spmm(adj_mean, h)?;
    tape.prelu(agg, slope)
}

/// High-order view: one GCN pass per meta-path, fused with meta-path
/// attention.
pub fn encode_high_order(
    tape: &mut Tape,
    pv: &ParamVars,
    adjs_mean: &[Rc<SpMat>],
    h_target: Var,
) -> Result<Var, TapeError> {
    if adjs_mean.is_empty() {
        return Err(TapeError::Invalid {
            op: "encode_high_order",
            detail: "no meta-path adjacency".into(),
        });
    }
    let n = tape.shape(h_target).0;
    let mut parts = Vec::new();
    for adj in adjs_mean {
        parts.push(metapath_encode(tape, adj.clone(), h_target, pv.prelu_ho)?);
    }
    let mask = Array2::from_elem((n, parts.len()), true);
    fuse_with_attention(tape, &parts.clone(), &parts, pv.fuse_ho, Rc::new(mask))
}

/// Feature-similarity view: unnormalized neighbor sum through the
/// similarity adjacency with a linear weight per layer; stacked layers
/// interleave an ELU.
pub fn encode_similarity(
    tape: &mut Tape,
    adj: Rc<SpMat>,
    h_clean: Var,
    w_fs: &[Var],
) -> Result<Var, TapeError> {
    if w_fs.is_empty() {
        return Err(TapeError::Invalid {
            op: "encode_similarity",
            detail: "no similarity layer weight".into(),
        });
    }
    let mut z = {
        let agg = tape.spmm(adj.clone(), h_clean)?;
        tape.matmul(agg, w_fs[0])?
    };
    for &w in &w_fs[1..] {
        let act = tape.elu(z);
        let agg = tape.spmm(adj.clone(), act)?;
        z = tape.matmul(agg, w)?;
    }
    Ok(z)
}

/// Inputs a forward pass consumes besides the parameters.
pub struct EncodeInputs<'a> {
    pub graph: &'a HeteroGraph,
    /// Per type id: this epoch's (masked) features for every projected
    /// type; clean copies in eval mode.
    pub features: &'a [Option<FeatureMatrix>],
    /// Clean target features for the similarity view (never masked).
    pub clean_target: &'a FeatureMatrix,
    pub samples: &'a NeighborSamples,
    /// Degree-normalized meta-path adjacencies (self-loops included).
    pub ho_mats: &'a [Rc<SpMat>],
    /// Similarity adjacency operand.
    pub fs_mat: &'a Rc<SpMat>,
    pub view_mode: ViewMode,
    pub train: bool,
    pub dropout: f64,
}

/// Runs every active encoder. Projection happens in ascending type-id
/// order (target first), then the clean target projection, then the
/// low-order, high-order and similarity encoders; this fixes the dropout
/// draw order.
pub fn encode_all_views(
    tape: &mut Tape,
    pv: &ParamVars,
    inputs: &EncodeInputs<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<ViewEmbeds, TapeError> {
    let g = inputs.graph;
    let target = g.target_type();
    let n = g.n_target();
    let want_lo = inputs.view_mode != ViewMode::DropLo;
    let want_fs = inputs.view_mode != ViewMode::DropFs;

    let mut h_by_type: BTreeMap<NodeTypeId, Var> = BTreeMap::new();
    for (t, w, b) in &pv.input_proj {
        if *t != target && !want_lo {
            continue;
        }
        let x = inputs.features[t.0].as_ref().ok_or_else(|| TapeError::Invalid {
            op: "encode_all_views",
            detail: format!("type {t:?} has no features (one-hot synthesis missing?)"),
        })?;
        let h = project_type_features(tape, x, *w, *b, inputs.train, inputs.dropout, rng)?;
        h_by_type.insert(*t, h);
    }
    let h_target = h_by_type[&target];

    let lo = if want_lo {
        let types: Vec<NodeTypeId> = g.neighbor_types_of_target();
        Some(encode_low_order(
            tape,
            pv,
            h_target,
            &h_by_type,
            &types,
            inputs.samples,
            n,
        )?)
    } else {
        None
    };

    let ho = encode_high_order(tape, pv, inputs.ho_mats, h_target)?;

    let fs = if want_fs {
        let (_, w, b) = pv
            .input_proj
            .iter()
            .find(|(t, _, _)| *t == target)
            .expect("target projection always present");
        let h_clean = project_type_features(
            tape,
            inputs.clean_target,
            *w,
            *b,
            inputs.train,
            inputs.dropout,
            rng,
        )?;
        Some(encode_similarity(tape, inputs.fs_mat.clone(), h_clean, &pv.w_fs)?)
    } else {
        None
    };

    Ok(ViewEmbeds { fs, lo, ho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Matrix;
    use ndarray::arr2;

    #[test]
    fn projection_identity_on_nonnegative_input() {
        let mut t = Tape::new();
        let x = FeatureMatrix::Dense(arr2(&[[0.5, 0.0], [1.0, 2.0]]));
        let w = t.param(Matrix::from_diag_elem(2, 1.0));
        let b = t.param(Matrix::zeros((1, 2)));
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let h = project_type_features(&mut t, &x, w, b, false, 0.0, &mut rng).unwrap();
        assert_eq!(t.value(h), &arr2(&[[0.5, 0.0], [1.0, 2.0]]));
    }

    #[test]
    fn projection_shapes_and_elu_value() {
        let mut t = Tape::new();
        let x = FeatureMatrix::Dense(Matrix::zeros((5, 10)));
        let w = t.param(Matrix::zeros((10, 64)));
        let b = t.param(Matrix::zeros((1, 64)));
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let h = project_type_features(&mut t, &x, w, b, false, 0.0, &mut rng).unwrap();
        assert_eq!(t.shape(h), (5, 64));

        // ELU(-1) = e^{-1} - 1
        let x = FeatureMatrix::Dense(arr2(&[[-1.0]]));
        let w = t.param(arr2(&[[1.0]]));
        let b = t.param(arr2(&[[0.0]]));
        let h = project_type_features(&mut t, &x, w, b, false, 0.0, &mut rng).unwrap();
        assert!((t.value(h)[(0, 0)] - (f64::exp(-1.0) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn one_hot_projection_selects_weight_rows() {
        let mut t = Tape::new();
        let w_val = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let w = t.param(w_val.clone());
        let b = t.param(Matrix::zeros((1, 2)));
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let x = FeatureMatrix::OneHot(3);
        let h = project_type_features(&mut t, &x, w, b, false, 0.0, &mut rng).unwrap();
        assert_eq!(t.value(h), &w_val, "identity features project to W");

        let x = FeatureMatrix::Diagonal(vec![1.0, 0.0, 1.0]);
        let h = project_type_features(&mut t, &x, w, b, false, 0.0, &mut rng).unwrap();
        assert_eq!(t.value(h).row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(t.value(h)[(2, 1)], 6.0);
    }

    #[test]
    fn attention_hand_case() {
        // d = 2, h_i = (1,0), neighbors (1,0) and (0,1), a = (1,1,1,1):
        // both logits are LeakyReLU(2) = 2, weights (0.5, 0.5), output
        // ELU((0.5, 0.5)) = (0.5, 0.5)
        let mut t = Tape::new();
        let h_anchor = t.param(arr2(&[[1.0, 0.0]]));
        let h_nbr = t.param(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let attn = t.param(Matrix::from_elem((1, 4), 1.0));
        let out = node_attention(&mut t, h_anchor, h_nbr, 2, attn).unwrap();
        assert_eq!(t.value(out), &arr2(&[[0.5, 0.5]]));
    }

    #[test]
    fn attention_single_neighbor_is_elu_of_it() {
        let mut t = Tape::new();
        let h_anchor = t.param(arr2(&[[0.3, -0.7]]));
        let h_nbr = t.param(arr2(&[[1.5, -0.5]]));
        let attn = t.param(arr2(&[[0.2, -1.0, 0.5, 0.8]]));
        let out = node_attention(&mut t, h_anchor, h_nbr, 1, attn).unwrap();
        let expect = [1.5, f64::exp(-0.5) - 1.0];
        for j in 0..2 {
            assert!((t.value(out)[(0, j)] - expect[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_identical_neighbors_weigh_equally() {
        let mut t = Tape::new();
        let h_anchor = t.param(arr2(&[[0.4, 0.2]]));
        let h_nbr = t.param(arr2(&[[0.9, 0.1], [0.9, 0.1]]));
        let attn = t.param(arr2(&[[1.0, -0.3, 0.7, 0.2]]));
        let out = node_attention(&mut t, h_anchor, h_nbr, 2, attn).unwrap();
        // alpha = (0.5, 0.5) by symmetry; output = ELU(0.9, 0.1) = (0.9, 0.1)
        assert!((t.value(out)[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((t.value(out)[(0, 1)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn fusion_singleton_is_identity() {
        let mut t = Tape::new();
        let part = t.param(arr2(&[[0.3, -0.2], [1.0, 0.5]]));
        let a = t.param(Matrix::from_elem((1, 2), 0.7));
        let w = t.param(Matrix::from_diag_elem(2, 1.0));
        let b = t.param(Matrix::zeros((1, 2)));
        let mask = Rc::new(Array2::from_elem((2, 1), true));
        let z = fuse_with_attention(&mut t, &[part], &[part], (a, w, b), mask).unwrap();
        assert_eq!(t.value(z), t.value(part));
    }

    #[test]
    fn fusion_equal_scores_take_the_mean() {
        let mut t = Tape::new();
        let p1 = t.param(arr2(&[[2.0, 0.0]]));
        let p2 = t.param(arr2(&[[0.0, 2.0]]));
        // a = 0 makes both importance scores zero
        let a = t.param(Matrix::zeros((1, 2)));
        let w = t.param(Matrix::from_diag_elem(2, 1.0));
        let b = t.param(Matrix::zeros((1, 2)));
        let mask = Rc::new(Array2::from_elem((1, 2), true));
        let z = fuse_with_attention(&mut t, &[p1, p2], &[p1, p2], (a, w, b), mask).unwrap();
        assert_eq!(t.value(z), &arr2(&[[1.0, 1.0]]));
    }

    #[test]
    fn fusion_softmax_closed_form() {
        // importance scores (ln 2, 0) => weights (2/3, 1/3)
        let mut t = Tape::new();
        let p1 = t.param(arr2(&[[3.0, 0.0]]));
        let p2 = t.param(arr2(&[[0.0, 3.0]]));
        // score input through tanh: pick W = 0 so tanh(b) drives scores;
        // a = (1, 0), b1 chosen so a . tanh(b) = ln 2 for part one and 0
        // for part two cannot share b, so instead exploit mean over rows:
        // use W = 0, b = 0 -> both scores 0; shift part one's score by
        // feeding a different score input through tanh
        let ln2 = std::f64::consts::LN_2;
        let s1 = t.param(arr2(&[[ln2.atanh(), 0.0]])); // tanh(atanh(ln2)) = ln2
        let s2 = t.param(arr2(&[[0.0, 0.0]]));
        let a = t.param(arr2(&[[1.0, 0.0]]));
        let w = t.param(Matrix::from_diag_elem(2, 1.0));
        let b = t.param(Matrix::zeros((1, 2)));
        let mask = Rc::new(Array2::from_elem((1, 2), true));
        let z = fuse_with_attention(&mut t, &[p1, p2], &[s1, s2], (a, w, b), mask).unwrap();
        // weights (2/3, 1/3): z = (2, 1)
        assert!((t.value(z)[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((t.value(z)[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_output_is_convex_combination() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let mk = |t: &mut Tape, rng: &mut rand_chacha::ChaCha8Rng| {
            t.param(Matrix::from_shape_fn((4, 3), |_| rng.random::<f64>() * 2.0 - 1.0))
        };
        let parts = [mk(&mut t, &mut rng), mk(&mut t, &mut rng), mk(&mut t, &mut rng)];
        let a = t.param(Matrix::from_shape_fn((1, 3), |_| rng.random::<f64>() - 0.5));
        let w = t.param(Matrix::from_shape_fn((3, 3), |_| rng.random::<f64>() - 0.5));
        let b = t.param(Matrix::zeros((1, 3)));
        let mask = Rc::new(Array2::from_elem((4, 3), true));
        let z = fuse_with_attention(&mut t, &parts, &parts, (a, w, b), mask).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let vals: Vec<f64> = parts.iter().map(|&p| t.value(p)[(i, j)]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = t.value(z)[(i, j)];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "({i},{j}): {v} not in [{lo},{hi}]");
            }
        }
    }

    #[test]
    fn metapath_encode_hand_cases() {
        use super::super::{spmat_from_adj, AdjNorm};
        use crate::graph::SparseAdj;
        let mut t = Tape::new();
        let slope = t.param(Matrix::from_elem((1, 1), 0.25));

        // self-loop-only row: output PReLU(h_i)
        let adj = SparseAdj::identity(2);
        let sp = Rc::new(spmat_from_adj(&adj, AdjNorm::RowMean));
        let h = t.param(arr2(&[[-2.0, 1.0], [0.5, -0.8]]));
        let out = metapath_encode(&mut t, sp, h, slope).unwrap();
        assert_eq!(t.value(out)[(0, 0)], -0.5);
        assert_eq!(t.value(out)[(0, 1)], 1.0);

        // row averaging two neighbors: (2,0) and (0,2) -> PReLU((1,1))
        let adj = SparseAdj::from_pairs(3, 3, &[(0, 1), (0, 2), (1, 1), (2, 2)]);
        let sp = Rc::new(spmat_from_adj(&adj, AdjNorm::RowMean));
        let h = t.param(arr2(&[[9.0, 9.0], [2.0, 0.0], [0.0, 2.0]]));
        let out = metapath_encode(&mut t, sp, h, slope).unwrap();
        assert_eq!(t.value(out)[(0, 0)], 1.0);
        assert_eq!(t.value(out)[(0, 1)], 1.0);
    }

    #[test]
    fn metapath_encode_matches_dense_oracle() {
        use super::super::{spmat_from_adj, AdjNorm};
        use crate::graph::SparseAdj;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        let mut pairs = Vec::new();
        for i in 0..n as u32 {
            for j in 0..n as u32 {
                if rng.random::<f64>() < 0.1 {
                    pairs.push((i, j));
                }
            }
        }
        let adj = SparseAdj::from_pairs(n, n, &pairs).with_self_loops();
        let h_val = Matrix::from_shape_fn((n, 6), |_| rng.random::<f64>() * 2.0 - 1.0);
        let slope_val = 0.25;

        let mut t = Tape::new();
        let slope = t.param(Matrix::from_elem((1, 1), slope_val));
        let sp = Rc::new(spmat_from_adj(&adj, AdjNorm::RowMean));
        let h = t.param(h_val.clone());
        let out = metapath_encode(&mut t, sp, h, slope).unwrap();

        // dense oracle: PReLU(D^{-1} A H)
        let mut dense = Matrix::zeros((n, n));
        for (i, j) in adj.iter_edges() {
            dense[(i as usize, j as usize)] = 1.0;
        }
        for i in 0..n {
            let deg: f64 = dense.row(i).sum();
            let mut row = dense.row_mut(i);
            row.mapv_inplace(|v| v / deg);
        }
        let expect = dense.dot(&h_val).mapv(|x| if x > 0.0 { x } else { slope_val * x });
        let diff = (t.value(out) - &expect)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "max deviation {diff}");
    }

    #[test]
    fn similarity_encode_hand_cases() {
        use super::super::{spmat_from_adj, AdjNorm};
        use crate::graph::SparseAdj;
        let mut t = Tape::new();
        let eye = t.param(Matrix::from_diag_elem(2, 1.0));

        // self-loop only, W = I: z = h
        let adj = SparseAdj::identity(2);
        let sp = Rc::new(spmat_from_adj(&adj, AdjNorm::None));
        let h = t.param(arr2(&[[0.3, -0.4], [1.0, 2.0]]));
        let z = encode_similarity(&mut t, sp, h, &[eye]).unwrap();
        assert_eq!(t.value(z), t.value(h));

        // two mutually similar nodes with identical features: z = 2f
        let adj = SparseAdj::from_pairs(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let sp = Rc::new(spmat_from_adj(&adj, AdjNorm::None));
        let h = t.param(arr2(&[[0.5, 1.5], [0.5, 1.5]]));
        let z = encode_similarity(&mut t, sp.clone(), h, &[eye]).unwrap();
        assert_eq!(t.value(z), &arr2(&[[1.0, 3.0], [1.0, 3.0]]));

        // edge 1 <-> 2 with h1 = (1,0), h2 = (0,1): z1 = (1,1)
        let h = t.param(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let z = encode_similarity(&mut t, sp, h, &[eye]).unwrap();
        assert_eq!(t.value(z)[(0, 0)], 1.0);
        assert_eq!(t.value(z)[(0, 1)], 1.0);
    }

    #[test]
    fn stacked_similarity_layers_interleave_elu() {
        use super::super::{spmat_from_adj, AdjNorm};
        use crate::graph::SparseAdj;
        let mut t = Tape::new();
        let adj = SparseAdj::identity(1);
        let sp = Rc::new(spmat_from_adj(&adj, AdjNorm::None));
        let w1 = t.param(arr2(&[[1.0]]));
        let w2 = t.param(arr2(&[[2.0]]));
        let h = t.param(arr2(&[[-1.0]]));
        let z = encode_similarity(&mut t, sp, h, &[w1, w2]).unwrap();
        // layer1: -1; ELU(-1) = e^{-1}-1; layer2 doubles it
        let expect = 2.0 * (f64::exp(-1.0) - 1.0);
        assert!((t.value(z)[(0, 0)] - expect).abs() < 1e-15);
    }
}
