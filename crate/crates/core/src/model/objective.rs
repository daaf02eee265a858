//! Shared projection head, local multi-positive contrast, global
//! node-versus-summary discrimination, and the combined objective.

use super::encoders::ViewEmbeds;
use super::{ParamVars, ViewKind};
use crate::tape::{Tape, TapeError, Var};
use std::rc::Rc;

/// Discriminator probabilities are clamped to [eps, 1-eps] before logs.
pub const DISC_CLAMP: f64 = 1e-7;

/// The three undirected view pairs in loss-term order; local weight
/// lambda_{1..3} and global weight lambda_{4..6} attach by position.
pub const VIEW_PAIRS: [(ViewKind, ViewKind); 3] = [
    (ViewKind::Fs, ViewKind::Lo),
    (ViewKind::Lo, ViewKind::Ho),
    (ViewKind::Ho, ViewKind::Fs),
];

/// Z' = W2 ELU(W1 Z + b1) + b2; the same head projects all three views.
pub fn project(tape: &mut Tape, z: Var, pv: &ParamVars) -> Result<Var, TapeError> {
    let (w1, b1, w2, b2) = pv.proj;
    let lin1 = tape.matmul(z, w1)?;
    let shifted = tape.add_row(lin1, b1)?;
    let hidden = tape.elu(shifted);
    let lin2 = tape.matmul(hidden, w2)?;
    tape.add_row(lin2, b2)
}

/// Per-node local contrast of projected view a against projected view b:
/// multi-positive InfoNCE over cosine similarities at temperature tau.
/// `unit_a` / `unit_b` must be row-normalized projections.
pub fn local_pair_loss(
    tape: &mut Tape,
    unit_a: Var,
    unit_b: Var,
    positives: Rc<Vec<Vec<u32>>>,
    tau: f64,
) -> Result<Var, TapeError> {
    tape.infonce(unit_a, unit_b, positives, tau)
}

/// J_local = mean_i sum_k lambda_k L_k(i) over the active pair losses.
pub fn local_objective(
    tape: &mut Tape,
    pair_losses: &[(f64, Var)],
    ) -> Result<Var, TapeError> {
    weighted_mean(tape, pair_losses, "local_objective")
}

fn weighted_mean(tape: &mut Tape, terms: &[(f64, Var)], op: &'static str) -> Result<Var, TapeError> {
    if terms.is_empty() {
        return Err(TapeError::Invalid {
            op: "weighted_mean",
            detail: format!("{op}: no loss terms"),
        });
    }
    if let Some(&(bad, _)) = terms.iter().find(|(l, _)| *l < 0.0 || !l.is_finite()) {
        return Err(TapeError::Invalid {
            op: "weighted_mean",
            detail: format!("{op}: negative weight {bad}"),
        });
    }
    let mut acc: Option<Var> = None;
    for &(lambda, loss) in terms {
        let scaled = tape.scale(loss, lambda);
        acc = Some(match acc {
            None => scaled,
            Some(prev) => tape.add(prev, scaled)?,
        });
    }
    Ok(tape.mean_all(acc.expect("nonempty")))
}

/// Graph summary of a projected view: column-wise mean over target nodes.
pub fn readout(tape: &mut Tape, z: Var) -> Var {
    tape.mean_rows(z)
}

/// D(z, s) = sigmoid(rho(z)^T B rho(s)) for every row z of `z_proj`.
pub fn discriminate(tape: &mut Tape, z_proj: Var, summary: Var, pv: &ParamVars) -> Result<Var, TapeError> {
    let (rho, bilin) = pv.disc;
    let rz = tape.matmul(z_proj, rho)?;
    let rs = tape.matmul(summary, rho)?;
    let zb = tape.matmul(rz, bilin)?;
    let scores = tape.matmul_nt(zb, rs)?;
    Ok(tape.sigmoid(scores))
}

/// Directed global term: positive scores of view a against its own
/// summary, negative scores of view b against that same summary.
/// L^{a,b}(i) = -log D(z_i^a, s_a) - log(1 - D(z_i^b, s_a)).
pub fn global_pair_loss(
    tape: &mut Tape,
    z_a: Var,
    z_b: Var,
    summary_a: Var,
    pv: &ParamVars,
    clamp_eps: f64,
) -> Result<Var, TapeError> {
    if !(0.0..0.5).contains(&clamp_eps) || clamp_eps == 0.0 {
        return Err(TapeError::Invalid {
            op: "global_pair_loss",
            detail: format!("clamp epsilon {clamp_eps} outside (0, 0.5)"),
        });
    }
    let d_pos = discriminate(tape, z_a, summary_a, pv)?;
    let d_neg = discriminate(tape, z_b, summary_a, pv)?;
    let d_pos = tape.clamp(d_pos, clamp_eps, 1.0 - clamp_eps);
    let d_neg = tape.clamp(d_neg, clamp_eps, 1.0 - clamp_eps);
    let log_pos = tape.log(d_pos)?;
    let neg_flipped = tape.scale(d_neg, -1.0);
    let one_minus = tape.add_const(neg_flipped, 1.0);
    let log_neg = tape.log(one_minus)?;
    let sum = tape.add(log_pos, log_neg)?;
    Ok(tape.scale(sum, -1.0))
}

/// J_global = mean_i sum_pairs lambda (L^{a,b} + L^{b,a}).
pub fn global_objective(tape: &mut Tape, terms: &[(f64, Var)]) -> Result<Var, TapeError> {
    weighted_mean(tape, terms, "global_objective")
}

/// J = mu J_local + (1 - mu) J_global.
pub fn total_objective(
    tape: &mut Tape,
    j_local: Var,
    j_global: Var,
    mu: f64,
) -> Result<Var, TapeError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(TapeError::Invalid {
            op: "total_objective",
            detail: format!("mu {mu} outside [0, 1]"),
        });
    }
    let a = tape.scale(j_local, mu);
    let b = tape.scale(j_global, 1.0 - mu);
    tape.add(a, b)
}

/// Objective hyperparameters consumed by [`contrastive_objective`].
#[derive(Debug, Clone)]
pub struct ObjectiveSettings {
    pub tau: f64,
    pub lambda_local: [f64; 3],
    pub lambda_global: [f64; 3],
    pub mu: f64,
    pub local_only: bool,
}

/// Projects every active view through the shared head and assembles the
/// full loss: local pair terms for each active view pair, and (unless
/// local-only) the six directed global terms folded per pair.
pub fn contrastive_objective(
    tape: &mut Tape,
    pv: &ParamVars,
    views: &ViewEmbeds,
    positives: Rc<Vec<Vec<u32>>>,
    settings: &ObjectiveSettings,
) -> Result<Var, TapeError> {
    let proj = |tape: &mut Tape, kind: ViewKind| -> Result<Option<(Var, Var)>, TapeError> {
        match views.get(kind) {
            None => Ok(None),
            Some(z) => {
                let p = project(tape, z, pv)?;
                let unit = tape.row_normalize(p)?;
                Ok(Some((p, unit)))
            }
        }
    };
    let fs = proj(tape, ViewKind::Fs)?;
    let lo = proj(tape, ViewKind::Lo)?;
    let ho = proj(tape, ViewKind::Ho)?;
    let get = |kind: ViewKind| match kind {
        ViewKind::Fs => fs,
        ViewKind::Lo => lo,
        ViewKind::Ho => ho,
    };

    let mut local_terms = Vec::new();
    for (k, (va, vb)) in VIEW_PAIRS.iter().enumerate() {
        let (Some((_, ua)), Some((_, ub))) = (get(*va), get(*vb)) else {
            continue;
        };
        let loss = local_pair_loss(tape, ua, ub, positives.clone(), settings.tau)?;
        local_terms.push((settings.lambda_local[k], loss));
    }
    let j_local = local_objective(tape, &local_terms)?;
    if settings.local_only {
        return Ok(j_local);
    }

    let summary = |tape: &mut Tape, v: Option<(Var, Var)>| v.map(|(p, _)| readout(tape, p));
    let s_fs = summary(tape, fs);
    let s_lo = summary(tape, lo);
    let s_ho = summary(tape, ho);
    let summary_of = |kind: ViewKind| match kind {
        ViewKind::Fs => s_fs,
        ViewKind::Lo => s_lo,
        ViewKind::Ho => s_ho,
    };

    let mut global_terms = Vec::new();
    for (k, (va, vb)) in VIEW_PAIRS.iter().enumerate() {
        let (Some((pa, _)), Some((pb, _))) = (get(*va), get(*vb)) else {
            continue;
        };
        let (Some(sa), Some(sb)) = (summary_of(*va), summary_of(*vb)) else {
            continue;
        };
        let fwd = global_pair_loss(tape, pa, pb, sa, pv, DISC_CLAMP)?;
        let rev = global_pair_loss(tape, pb, pa, sb, pv, DISC_CLAMP)?;
        let both = tape.add(fwd, rev)?;
        global_terms.push((settings.lambda_global[k], both));
    }
    let j_global = global_objective(tape, &global_terms)?;
    total_objective(tape, j_local, j_global, settings.mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::grad_fixture;
    use crate::model::ModelParams;
    use crate::tape::Matrix;
    use ndarray::arr2;

    fn head_vars(tape: &mut Tape) -> ParamVars {
        let g = grad_fixture();
        let params = ModelParams::init(&g, 2, 1, 5);
        ParamVars::insert(tape, &params)
    }

    #[test]
    fn projection_is_shared_across_views() {
        let mut t = Tape::new();
        let pv = head_vars(&mut t);
        let row = arr2(&[[0.4, -1.2]]);
        let as_fs = t.param(row.clone());
        let as_lo = t.param(row);
        let p1 = project(&mut t, as_fs, &pv).unwrap();
        let p2 = project(&mut t, as_lo, &pv).unwrap();
        assert_eq!(t.value(p1), t.value(p2));
    }

    #[test]
    fn projection_identity_weights() {
        let mut t = Tape::new();
        let g = grad_fixture();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.proj.0.value = Matrix::from_diag_elem(2, 1.0);
        params.proj.1.value = Matrix::zeros((1, 2));
        params.proj.2.value = Matrix::from_diag_elem(2, 1.0);
        params.proj.3.value = Matrix::zeros((1, 2));
        let pv = ParamVars::insert(&mut t, &params);
        let z = t.param(arr2(&[[0.5, 2.0]]));
        let p = project(&mut t, z, &pv).unwrap();
        assert_eq!(t.value(p), &arr2(&[[0.5, 2.0]]));
    }

    #[test]
    fn projection_hand_computed() {
        // W1 = [[1, 0.5], [-0.5, 1]], b1 = (0.1, -0.1),
        // W2 = [[2, 0], [0, 0.5]], b2 = (0, 1), input (1, 2):
        // lin1 = (1*1 + 2*-0.5 + 0.1, 1*0.5 + 2*1 - 0.1) = (0.1, 2.4)
        // ELU keeps positives; out = (0.2, 2.2)... computed below
        let mut t = Tape::new();
        let g = grad_fixture();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.proj.0.value = arr2(&[[1.0, 0.5], [-0.5, 1.0]]);
        params.proj.1.value = arr2(&[[0.1, -0.1]]);
        params.proj.2.value = arr2(&[[2.0, 0.0], [0.0, 0.5]]);
        params.proj.3.value = arr2(&[[0.0, 1.0]]);
        let pv = ParamVars::insert(&mut t, &params);
        let z = t.param(arr2(&[[1.0, 2.0]]));
        let p = project(&mut t, z, &pv).unwrap();
        let expect = [0.1 * 2.0, 2.4 * 0.5 + 1.0];
        assert!((t.value(p)[(0, 0)] - expect[0]).abs() < 1e-15);
        assert!((t.value(p)[(0, 1)] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn local_loss_matches_high_precision_reference() {
        // three unit embeddings with pairwise cosines (1, 0.5, 0) from
        // node 0, both views identical, tau = 0.5; reference values from
        // a 50-digit evaluation
        let mut t = Tape::new();
        let sqrt3 = 3.0f64.sqrt();
        let z = arr2(&[[1.0, 0.0], [0.5, sqrt3 / 2.0], [0.0, 1.0]]);
        let a = t.param(z.clone());
        let b = t.param(z);
        let ua = t.row_normalize(a).unwrap();
        let ub = t.row_normalize(b).unwrap();
        let pos = Rc::new(vec![vec![0u32, 1], vec![1], vec![2]]);
        let loss = local_pair_loss(&mut t, ua, ub, pos, 0.5).unwrap();
        let expect = [
            0.094344276926157470434,
            0.75744790140950322045,
            0.64200225854968842039,
        ];
        for i in 0..3 {
            assert!(
                (t.value(loss)[(i, 0)] - expect[i]).abs() < 1e-12,
                "node {i}: {} vs {}",
                t.value(loss)[(i, 0)],
                expect[i]
            );
        }
        let mean = t.mean_all(loss);
        assert!((t.value(mean)[(0, 0)] - 0.49793147896178303709).abs() < 1e-12);
    }

    #[test]
    fn local_objective_weighting() {
        let mut t = Tape::new();
        let l1 = t.param(Matrix::from_elem((4, 1), 0.3));
        let l2 = t.param(Matrix::from_elem((4, 1), 0.6));
        let l3 = t.param(Matrix::from_elem((4, 1), 0.9));
        let third = 1.0 / 3.0;
        let j = local_objective(&mut t, &[(third, l1), (third, l2), (third, l3)]).unwrap();
        assert!((t.value(j)[(0, 0)] - 0.6).abs() < 1e-15);

        // lambda = (1, 0, 0) equals the first term's mean
        let j = local_objective(&mut t, &[(1.0, l1), (0.0, l2), (0.0, l3)]).unwrap();
        assert!((t.value(j)[(0, 0)] - 0.3).abs() < 1e-15);

        // all zero losses give zero
        let z = t.param(Matrix::zeros((4, 1)));
        let j = local_objective(&mut t, &[(third, z)]).unwrap();
        assert_eq!(t.value(j)[(0, 0)], 0.0);

        // negative weight rejected
        assert!(local_objective(&mut t, &[(-0.1, l1)]).is_err());
    }

    #[test]
    fn readout_cases() {
        let mut t = Tape::new();
        let single = t.param(arr2(&[[0.7, -0.2]]));
        let s = readout(&mut t, single);
        assert_eq!(t.value(s), &arr2(&[[0.7, -0.2]]));

        let rows = t.param(arr2(&[[0.0, 2.0], [2.0, 0.0]]));
        let s = readout(&mut t, rows);
        assert_eq!(t.value(s), &arr2(&[[1.0, 1.0]]));
    }

    #[test]
    fn discriminator_fixed_points() {
        let g = grad_fixture();
        // B = 0 forces D = sigmoid(0) = 0.5
        let mut t = Tape::new();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.disc.1.value = Matrix::zeros((2, 2));
        let pv = ParamVars::insert(&mut t, &params);
        let z = t.param(arr2(&[[0.3, 0.9], [-1.0, 0.4]]));
        let s = t.param(arr2(&[[0.2, 0.1]]));
        let d = discriminate(&mut t, z, s, &pv).unwrap();
        assert!(t.value(d).iter().all(|&v| v == 0.5));

        // rho = I, B = I, z = s = (1, 0): sigmoid(1)
        let mut t = Tape::new();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.disc.0.value = Matrix::from_diag_elem(2, 1.0);
        params.disc.1.value = Matrix::from_diag_elem(2, 1.0);
        let pv = ParamVars::insert(&mut t, &params);
        let z = t.param(arr2(&[[1.0, 0.0]]));
        let s = t.param(arr2(&[[1.0, 0.0]]));
        let d = discriminate(&mut t, z, s, &pv).unwrap();
        assert!((t.value(d)[(0, 0)] - 0.73105857863000487925).abs() < 1e-15);
        assert!(t.value(d).iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn global_loss_forced_half_case() {
        // zero bilinear form: both discriminator outputs are 0.5 and each
        // directed loss is exactly 2 ln 2
        let g = grad_fixture();
        let mut t = Tape::new();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.disc.1.value = Matrix::zeros((2, 2));
        let pv = ParamVars::insert(&mut t, &params);
        let za = t.param(arr2(&[[0.1, 0.2], [0.5, -0.4]]));
        let zb = t.param(arr2(&[[-0.6, 0.1], [0.2, 0.3]]));
        let sa = readout(&mut t, za);
        let l = global_pair_loss(&mut t, za, zb, sa, &pv, DISC_CLAMP).unwrap();
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        for i in 0..2 {
            assert!((t.value(l)[(i, 0)] - two_ln2).abs() < 1e-12);
        }
    }

    #[test]
    fn global_loss_is_asymmetric_and_matches_reference() {
        // fixed rho, B, embeddings; expected values from a 50-digit
        // evaluation of -log D(a_i, s_a) - log(1 - D(b_i, s_a))
        let g = grad_fixture();
        let mut t = Tape::new();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.disc.0.value = arr2(&[[1.0, 0.5], [-0.25, 1.0]]);
        params.disc.1.value = arr2(&[[0.5, -1.0], [0.25, 0.75]]);
        let pv = ParamVars::insert(&mut t, &params);
        let za = t.param(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let zb = t.param(arr2(&[[1.0, 1.0], [2.0, 0.0]]));
        let sa = readout(&mut t, za);
        let sb = readout(&mut t, zb);
        let lab = global_pair_loss(&mut t, za, zb, sa, &pv, DISC_CLAMP).unwrap();
        let lba = global_pair_loss(&mut t, zb, za, sb, &pv, DISC_CLAMP).unwrap();
        let expect_ab = [1.8306227584798356834, 0.85806070746901974889];
        let expect_ba = [0.93438570404919898132, 2.256073820852440324];
        for i in 0..2 {
            assert!((t.value(lab)[(i, 0)] - expect_ab[i]).abs() < 1e-12);
            assert!((t.value(lba)[(i, 0)] - expect_ba[i]).abs() < 1e-12);
            assert!((t.value(lab)[(i, 0)] - t.value(lba)[(i, 0)]).abs() > 1e-3);
        }
    }

    #[test]
    fn global_objective_forced_arithmetic() {
        // with every D = 0.5, each directed term is 2 ln 2, each pair sum
        // 4 ln 2, so the objective is (l4 + l5 + l6) * 4 ln 2
        let g = grad_fixture();
        let mut t = Tape::new();
        let mut params = ModelParams::init(&g, 2, 1, 5);
        params.disc.1.value = Matrix::zeros((2, 2));
        let pv = ParamVars::insert(&mut t, &params);
        let mk = |t: &mut Tape, v: f64| t.param(Matrix::from_elem((3, 2), v));
        let (zf, zl, zh) = (mk(&mut t, 0.1), mk(&mut t, 0.4), mk(&mut t, -0.2));
        let lambdas = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        let mut terms = Vec::new();
        for (k, (a, b)) in [(zf, zl), (zl, zh), (zh, zf)].into_iter().enumerate() {
            let sa = readout(&mut t, a);
            let sb = readout(&mut t, b);
            let fwd = global_pair_loss(&mut t, a, b, sa, &pv, DISC_CLAMP).unwrap();
            let rev = global_pair_loss(&mut t, b, a, sb, &pv, DISC_CLAMP).unwrap();
            let sum = t.add(fwd, rev).unwrap();
            terms.push((lambdas[k], sum));
        }
        let j = global_objective(&mut t, &terms).unwrap();
        let expect = lambdas.iter().sum::<f64>() * 4.0 * std::f64::consts::LN_2;
        assert!((t.value(j)[(0, 0)] - expect).abs() < 1e-12);

        // lambda = 0 everywhere gives zero
        let zero_terms: Vec<(f64, Var)> = terms.iter().map(|&(_, v)| (0.0, v)).collect();
        let j = global_objective(&mut t, &zero_terms).unwrap();
        assert_eq!(t.value(j)[(0, 0)], 0.0);
    }

    #[test]
    fn total_objective_mixing() {
        let mut t = Tape::new();
        let jl = t.param(Matrix::from_elem((1, 1), 0.4));
        let jg = t.param(Matrix::from_elem((1, 1), 0.8));
        let j = total_objective(&mut t, jl, jg, 0.5).unwrap();
        assert!((t.value(j)[(0, 0)] - 0.6).abs() < 1e-15);
        let j = total_objective(&mut t, jl, jg, 1.0).unwrap();
        assert_eq!(t.value(j)[(0, 0)], 0.4);
        let j = total_objective(&mut t, jl, jg, 0.0).unwrap();
        assert_eq!(t.value(j)[(0, 0)], 0.8);
        assert!(total_objective(&mut t, jl, jg, 1.5).is_err());
    }
}
