//! Full-graph training: epoch schedule (re-masking, re-sampling), Adam
//! updates, early stopping on the self-supervised objective, and
//! eval-mode embedding export.

mod adam;
pub mod checkpoint;
pub mod export;

pub use adam::Adam;
pub use export::EmbeddingMatrix;

use crate::config::TrainConfig;
use crate::graph::{
    mask_features, one_hot_features, DataError, FeatureMatrix, HeteroGraph, MetaPath, NodeTypeId,
};
use crate::model::encoders::{encode_all_views, EncodeInputs};
use crate::model::objective::{contrastive_objective, ObjectiveSettings};
use crate::model::{
    spmat_from_adj, AdjNorm, ContrastMode, ModelParams, ParamVars, ViewKind,
};
use crate::sampling::{build_positive_sets, PositiveSets};
use crate::tape::{SpMat, Tape, TapeError};
use crate::views::{build_views, sample_type_neighbors, ViewBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("non-finite loss at epoch {epoch}; last finite trace: {trace:?}")]
    NonFinite { epoch: usize, trace: Vec<f64> },
    #[error("view '{0:?}' is not produced under the current view mode")]
    ViewUnavailable(ViewKind),
}

/// Stable sub-seed derivation: one master seed fans out to independent
/// streams per purpose and epoch.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is long enough"))
}

/// Everything about a run that is fixed across epochs.
pub struct TrainContext {
    pub graph: HeteroGraph,
    pub views: ViewBundle,
    pub pos_sets: PositiveSets,
    pub positives: Rc<Vec<Vec<u32>>>,
    pub ho_mats: Vec<Rc<SpMat>>,
    pub fs_mat: Rc<SpMat>,
    pub neighbor_budget: BTreeMap<NodeTypeId, usize>,
}

/// Resolves features (one-hot synthesis for attribute-less neighbor
/// types), meta-paths, the frozen similarity graph and the frozen
/// positive sets.
pub fn prepare(cfg: &TrainConfig, graph: &HeteroGraph) -> Result<TrainContext, TrainError> {
    let mut graph = graph.clone();
    for t in needed_types(&graph) {
        if graph.features(t).is_none() {
            graph = one_hot_features(graph, t)?;
        }
    }

    let metapaths: Vec<MetaPath> = match &cfg.metapaths {
        None => graph.metapaths().to_vec(),
        Some(specs) => specs
            .iter()
            .map(|s| MetaPath::resolve(&s.name, &s.relations, &graph))
            .collect::<Result<_, _>>()?,
    };
    if metapaths.is_empty() {
        return Err(DataError::Invalid("no meta-paths declared".into()).into());
    }
    let views = build_views_for(&graph, &metapaths, cfg.theta)?;

    let clean_target = match graph.features(graph.target_type()) {
        Some(FeatureMatrix::Dense(x)) => x.clone(),
        _ => return Err(DataError::Invalid("target type needs dense features".into()).into()),
    };
    let pos_sets = build_positive_sets(
        &views.high_order_base,
        clean_target.view(),
        cfg.k_struct,
        cfg.k_attr,
        cfg.sampling_mode,
    );
    let positives = Rc::new(pos_sets.positives.clone());

    let ho_mats: Vec<Rc<SpMat>> = views
        .high_order
        .iter()
        .map(|adj| Rc::new(spmat_from_adj(adj, AdjNorm::RowMean)))
        .collect();
    let fs_norm = if cfg.fs_normalize {
        AdjNorm::Symmetric
    } else {
        AdjNorm::None
    };
    let fs_mat = Rc::new(spmat_from_adj(&views.similarity, fs_norm));

    let mut neighbor_budget = BTreeMap::new();
    for t in graph.neighbor_types_of_target() {
        neighbor_budget.insert(t, cfg.neighbors_default);
    }
    for (name, &m) in &cfg.neighbors_per_type {
        let t = graph
            .type_id(name)
            .ok_or_else(|| DataError::UnknownType(name.clone()))?;
        neighbor_budget.insert(t, m);
    }

    Ok(TrainContext {
        graph,
        views,
        pos_sets,
        positives,
        ho_mats,
        fs_mat,
        neighbor_budget,
    })
}

fn build_views_for(
    g: &HeteroGraph,
    metapaths: &[MetaPath],
    theta: f64,
) -> Result<ViewBundle, DataError> {
    if metapaths == g.metapaths() {
        return build_views(g, theta);
    }
    // config override: restitch the bundle around the overridden paths
    let mut high_order = Vec::new();
    let mut high_order_base = Vec::new();
    for p in metapaths {
        let base = crate::graph::metapath_adjacency(g, p, false)?;
        high_order.push(base.with_self_loops());
        high_order_base.push(base);
    }
    let mut bundle = build_views(g, theta)?;
    bundle.high_order = high_order;
    bundle.high_order_base = high_order_base;
    Ok(bundle)
}

fn needed_types(g: &HeteroGraph) -> Vec<NodeTypeId> {
    let mut out = vec![g.target_type()];
    out.extend(g.neighbor_types_of_target());
    out
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub embeddings: EmbeddingMatrix,
    pub trace: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Improvements smaller than this do not reset the patience counter.
const MIN_IMPROVEMENT: f64 = 1e-5;

/// Trains from scratch and exports eval-mode embeddings of
/// `cfg.export_view` at the best-loss epoch.
pub fn train(cfg: &TrainConfig, graph: &HeteroGraph) -> Result<TrainOutcome, TrainError> {
    let ctx = prepare(cfg, graph)?;
    train_in_context(cfg, &ctx)
}

pub fn train_in_context(cfg: &TrainConfig, ctx: &TrainContext) -> Result<TrainOutcome, TrainError> {
    let g = &ctx.graph;
    let mut params = ModelParams::init(g, cfg.dim, cfg.fs_layers, derive_seed(cfg.seed, "init", 0));
    let mut opt = Adam::new(cfg.learning_rate, &params.params());

    let settings = ObjectiveSettings {
        tau: cfg.tau,
        lambda_local: cfg.lambda_local(),
        lambda_global: cfg.lambda_global(),
        mu: cfg.mu,
        local_only: cfg.contrast_mode == ContrastMode::LocalOnly,
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut since_improvement = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let loss = match run_epoch(cfg, ctx, &params, &settings, epoch) {
            Ok((loss, grads)) => {
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { epoch, trace });
                }
                for (p, grad) in params.params_mut().into_iter().zip(grads) {
                    p.grad = grad;
                }
                loss
            }
            Err(TapeError::NonFinite { .. }) => {
                return Err(TrainError::NonFinite { epoch, trace });
            }
            Err(e) => return Err(e.into()),
        };
        trace.push(loss);

        if loss < best_loss - MIN_IMPROVEMENT {
            best_loss = loss;
            best_epoch = epoch;
            best_params = params.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.patience {
                break;
            }
        }

        let mut slots = params.params_mut();
        opt.step(&mut slots);
        for p in slots {
            p.zero_grad();
        }
    }

    let embeddings = export_embeddings_in_context(&best_params, ctx, cfg, cfg.export_view)
        .map(|mut e| {
            e.epoch = best_epoch;
            e
        })?;
    Ok(TrainOutcome {
        params: best_params,
        embeddings,
        trace,
        best_epoch,
        epochs_run,
    })
}

type EpochGrads = (f64, Vec<crate::tape::Matrix>);

fn run_epoch(
    cfg: &TrainConfig,
    ctx: &TrainContext,
    params: &ModelParams,
    settings: &ObjectiveSettings,
    epoch: usize,
) -> Result<EpochGrads, TapeError> {
    let g = &ctx.graph;
    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "mask", epoch as u64));
    let mut masked: Vec<Option<FeatureMatrix>> = vec![None; g.n_types()];
    for t in needed_types(g) {
        let clean = g.features(t).expect("prepare synthesized all features");
        let m = mask_features(clean, cfg.mask_rate, &mut mask_rng)
            .map_err(|e| TapeError::Invalid {
                op: "mask_features",
                detail: e.to_string(),
            })?;
        masked[t.0] = Some(m);
    }
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sample", epoch as u64));
    let samples = sample_type_neighbors(g, &ctx.neighbor_budget, &mut sample_rng);
    let clean_target = g.features(g.target_type()).expect("validated in prepare");

    let mut tape = Tape::new();
    let pv = ParamVars::insert(&mut tape, params);
    let mut dropout_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout", epoch as u64));
    let inputs = EncodeInputs {
        graph: g,
        features: &masked,
        clean_target,
        samples: &samples,
        ho_mats: &ctx.ho_mats,
        fs_mat: &ctx.fs_mat,
        view_mode: cfg.view_mode,
        train: true,
        dropout: cfg.dropout,
    };
    let views = encode_all_views(&mut tape, &pv, &inputs, &mut dropout_rng)?;
    let loss = contrastive_objective(&mut tape, &pv, &views, ctx.positives.clone(), settings)?;
    let loss_value = tape.value(loss)[(0, 0)];
    let mut grads = tape.backward(loss)?;
    let flat = pv.flat();
    let out = flat
        .iter()
        .zip(params.params())
        .map(|(&v, p)| grads.take_or_zeros(v, p.value.dim()))
        .collect();
    Ok((loss_value, out))
}

/// Eval-mode forward of one view: no dropout, no masking, neighbor sets
/// capped at the per-type budget with the frozen export seed.
pub fn export_embeddings(
    params: &ModelParams,
    cfg: &TrainConfig,
    graph: &HeteroGraph,
    view: ViewKind,
) -> Result<EmbeddingMatrix, TrainError> {
    let ctx = prepare(cfg, graph)?;
    export_embeddings_in_context(params, &ctx, cfg, view)
}

pub fn export_embeddings_in_context(
    params: &ModelParams,
    ctx: &TrainContext,
    cfg: &TrainConfig,
    view: ViewKind,
) -> Result<EmbeddingMatrix, TrainError> {
    let g = &ctx.graph;
    let clean: Vec<Option<FeatureMatrix>> = (0..g.n_types())
        .map(|t| g.features(NodeTypeId(t)).cloned())
        .collect();
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "export", 0));
    let samples = sample_type_neighbors(g, &ctx.neighbor_budget, &mut sample_rng);
    let clean_target = g.features(g.target_type()).expect("validated in prepare");

    let mut tape = Tape::new();
    let pv = ParamVars::insert(&mut tape, params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = EncodeInputs {
        graph: g,
        features: &clean,
        clean_target,
        samples: &samples,
        ho_mats: &ctx.ho_mats,
        fs_mat: &ctx.fs_mat,
        view_mode: cfg.view_mode,
        train: false,
        dropout: 0.0,
    };
    let views = encode_all_views(&mut tape, &pv, &inputs, &mut dropout_rng)?;
    let z = views.get(view).ok_or(TrainError::ViewUnavailable(view))?;
    let values = tape.value(z).clone();
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(EmbeddingMatrix {
        values,
        config_hash: cfg.hash(),
        epoch: 0,
    })
}

/// Verifies analytic gradients of the full training objective on the
/// bundled 10-node fixture against central finite differences, returning
/// the maximum relative error over every parameter entry. Dropout and
/// masking are frozen (re-seeded per evaluation), so the objective is a
/// pure function of the parameters.
pub fn full_objective_grad_check(eps: f64) -> Result<f64, TrainError> {
    let graph = crate::graph::synthetic::grad_fixture();
    let cfg = TrainConfig {
        dim: 8,
        dropout: 0.25,
        mask_rate: 0.1,
        k_struct: 2,
        k_attr: 2,
        neighbors_default: 3,
        tau: 0.6,
        ..TrainConfig::default()
    };
    let ctx = prepare(&cfg, &graph)?;
    let g = &ctx.graph;

    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "mask", 1));
    let mut masked: Vec<Option<FeatureMatrix>> = vec![None; g.n_types()];
    for t in needed_types(g) {
        let clean = g.features(t).expect("prepared");
        masked[t.0] = Some(
            mask_features(clean, cfg.mask_rate, &mut mask_rng).expect("rate validated"),
        );
    }
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sample", 1));
    let samples = sample_type_neighbors(g, &ctx.neighbor_budget, &mut sample_rng);
    let settings = ObjectiveSettings {
        tau: cfg.tau,
        lambda_local: cfg.lambda_local(),
        lambda_global: cfg.lambda_global(),
        mu: cfg.mu,
        local_only: false,
    };

    let template = ModelParams::init(g, cfg.dim, cfg.fs_layers, derive_seed(cfg.seed, "init", 0));
    let values: Vec<crate::tape::Matrix> =
        template.params().iter().map(|p| p.value.clone()).collect();
    let err = crate::tape::grad_check(
        |tape, vars| {
            let pv = ParamVars::from_flat(&template, vars);
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout", 1));
            let inputs = EncodeInputs {
                graph: g,
                features: &masked,
                clean_target: g.features(g.target_type()).expect("prepared"),
                samples: &samples,
                ho_mats: &ctx.ho_mats,
                fs_mat: &ctx.fs_mat,
                view_mode: cfg.view_mode,
                train: true,
                dropout: cfg.dropout,
            };
            let views = encode_all_views(tape, &pv, &inputs, &mut dropout_rng)?;
            contrastive_objective(tape, &pv, &views, ctx.positives.clone(), &settings)
        },
        &values,
        eps,
    )?;
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{grad_fixture, sbm_fixture, SbmConfig};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            max_epochs: 12,
            patience: 50,
            learning_rate: 5e-3,
            dropout: 0.2,
            mask_rate: 0.1,
            k_struct: 2,
            k_attr: 2,
            neighbors_default: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_reproduces_trace_and_embeddings() {
        let g = grad_fixture();
        let cfg = tiny_cfg();
        let a = train(&cfg, &g).unwrap();
        let b = train(&cfg, &g).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.embeddings.values, b.embeddings.values);
        let c = train(
            &TrainConfig {
                seed: 1,
                ..tiny_cfg()
            },
            &g,
        )
        .unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn loss_decreases_on_sbm_fixture() {
        let g = sbm_fixture(&SbmConfig {
            n_target: 30,
            aux_pool: [5, 4],
            val_size: 9,
            test_size: 12,
            train_per_class: 2,
            ..SbmConfig::default()
        });
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 50,
            ..tiny_cfg()
        };
        let out = train(&cfg, &g).unwrap();
        assert!(
            out.trace.last().unwrap() < out.trace.first().unwrap(),
            "trace {:?}",
            out.trace
        );
        assert!(out.embeddings.values.iter().all(|v| v.is_finite()));
        assert_eq!(out.embeddings.values.dim(), (30, 8));
    }

    #[test]
    fn frozen_run_stops_after_patience_epochs() {
        let g = grad_fixture();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            patience: 5,
            max_epochs: 100,
            dropout: 0.0,
            mask_rate: 0.0,
            ..tiny_cfg()
        };
        let out = train(&cfg, &g).unwrap();
        assert_eq!(out.epochs_run, 6, "epoch 1 sets best, 5 stale epochs follow");
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn best_epoch_is_never_after_a_worse_tail() {
        let g = grad_fixture();
        let out = train(&tiny_cfg(), &g).unwrap();
        let best = out.trace[out.best_epoch - 1];
        assert!(out
            .trace
            .iter()
            .all(|&l| l >= best - 1e-12), "best epoch is the minimum");
    }

    #[test]
    fn export_views_differ_after_training() {
        let g = grad_fixture();
        let cfg = tiny_cfg();
        let out = train(&cfg, &g).unwrap();
        let ctx = prepare(&cfg, &g).unwrap();
        let fs = export_embeddings_in_context(&out.params, &ctx, &cfg, ViewKind::Fs).unwrap();
        let ho = export_embeddings_in_context(&out.params, &ctx, &cfg, ViewKind::Ho).unwrap();
        assert_ne!(fs.values, ho.values);
    }

    #[test]
    fn drop_lo_mode_cannot_export_lo() {
        let g = grad_fixture();
        let cfg = TrainConfig {
            view_mode: ViewMode::DropLo,
            ..tiny_cfg()
        };
        let out = train(&cfg, &g).unwrap();
        let ctx = prepare(&cfg, &g).unwrap();
        let err = export_embeddings_in_context(&out.params, &ctx, &cfg, ViewKind::Lo).unwrap_err();
        assert!(matches!(err, TrainError::ViewUnavailable(ViewKind::Lo)));
    }

    #[test]
    fn ablation_modes_train() {
        let g = grad_fixture();
        for vm in [ViewMode::DropLo, ViewMode::DropFs] {
            let cfg = TrainConfig {
                view_mode: vm,
                max_epochs: 4,
                ..tiny_cfg()
            };
            let out = train(&cfg, &g).unwrap();
            assert!(out.trace.iter().all(|l| l.is_finite()));
        }
        let cfg = TrainConfig {
            contrast_mode: ContrastMode::LocalOnly,
            max_epochs: 4,
            ..tiny_cfg()
        };
        train(&cfg, &g).unwrap();
    }

    #[test]
    fn derive_seed_streams_are_distinct() {
        let a = derive_seed(7, "mask", 1);
        let b = derive_seed(7, "mask", 2);
        let c = derive_seed(7, "sample", 1);
        let d = derive_seed(8, "mask", 1);
        assert!(a != b && a != c && a != d);
        assert_eq!(a, derive_seed(7, "mask", 1));
    }
}
