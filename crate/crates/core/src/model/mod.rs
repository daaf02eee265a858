//! Model parameters and the assembled three-view forward pass.

pub mod encoders;
pub mod objective;

use crate::graph::{HeteroGraph, NodeTypeId, SparseAdj};
use crate::tape::{Matrix, SpMat, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Which views are encoded and contrasted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewMode {
    All,
    /// Omit the low-order (first-order neighbor) view.
    DropLo,
    /// Omit the feature-similarity view.
    DropFs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastMode {
    LocalGlobal,
    LocalOnly,
}

/// Identifies one of the three views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewKind {
    /// Feature-similarity view.
    Fs,
    /// Low-order (first-order neighbor) view.
    Lo,
    /// High-order (meta-path) view.
    Ho,
}

impl ViewKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fs" => Some(ViewKind::Fs),
            "lo" => Some(ViewKind::Lo),
            "ho" => Some(ViewKind::Ho),
            _ => None,
        }
    }
}

/// All trainable tensors. Field order fixes the parameter iteration
/// order, which in turn fixes initialization draws, Adam state layout and
/// the checkpoint layout.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Per projected type: (type id, W: f_t x d, b: 1 x d).
    pub input_proj: Vec<(NodeTypeId, Parameter, Parameter)>,
    /// Node-level attention vector per low-order neighbor type (1 x 2d).
    pub attn: Vec<(NodeTypeId, Parameter)>,
    /// Type-level fusion: a (1 x d), W (d x d), b (1 x d).
    pub fuse_lo: (Parameter, Parameter, Parameter),
    /// Meta-path fusion: a (1 x d), W (d x d), b (1 x d).
    pub fuse_ho: (Parameter, Parameter, Parameter),
    /// PReLU slope of the high-order encoder (1 x 1).
    pub prelu_ho: Parameter,
    /// Similarity-view GCN weights, one d x d matrix per layer.
    pub w_fs: Vec<Parameter>,
    /// Shared projection head: W1 (d x d_h), b1, W2 (d_h x d_p), b2.
    pub proj: (Parameter, Parameter, Parameter, Parameter),
    /// Discriminator: projection rho (d_p x d_p) and bilinear form
    /// (d_p x d_p).
    pub disc: (Parameter, Parameter),
    pub dim: usize,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 * limit - limit)
}

impl ModelParams {
    /// Xavier-initializes every weight from the seeded generator in
    /// field order; biases start at zero and the PReLU slope at 0.25.
    pub fn init(g: &HeteroGraph, d: usize, fs_layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::SeedableRng;
        let _ = &mut rng; // single import point for SeedableRng

        let mut projected_types = vec![g.target_type()];
        projected_types.extend(g.neighbor_types_of_target());
        let input_proj = projected_types
            .iter()
            .map(|&t| {
                let f_t = g
                    .features(t)
                    .map(|f| f.n_cols())
                    .unwrap_or_else(|| g.node_count(t));
                let name = g.type_name(t);
                (
                    t,
                    Parameter::new(format!("input_proj.{name}.w"), xavier(&mut rng, f_t, d)),
                    Parameter::new(format!("input_proj.{name}.b"), Matrix::zeros((1, d))),
                )
            })
            .collect();
        let attn = g
            .neighbor_types_of_target()
            .into_iter()
            .map(|t| {
                let name = g.type_name(t);
                (
                    t,
                    Parameter::new(format!("attn.{name}"), xavier(&mut rng, 1, 2 * d)),
                )
            })
            .collect();
        let fusion = |rng: &mut ChaCha8Rng, tag: &str| {
            (
                Parameter::new(format!("fuse_{tag}.a"), xavier(rng, 1, d)),
                Parameter::new(format!("fuse_{tag}.w"), xavier(rng, d, d)),
                Parameter::new(format!("fuse_{tag}.b"), Matrix::zeros((1, d))),
            )
        };
        let fuse_lo = fusion(&mut rng, "lo");
        let fuse_ho = fusion(&mut rng, "ho");
        let prelu_ho = Parameter::new("prelu_ho", Matrix::from_elem((1, 1), 0.25));
        let w_fs = (0..fs_layers.max(1))
            .map(|l| Parameter::new(format!("w_fs.{l}"), xavier(&mut rng, d, d)))
            .collect();
        let proj = (
            Parameter::new("proj.w1", xavier(&mut rng, d, d)),
            Parameter::new("proj.b1", Matrix::zeros((1, d))),
            Parameter::new("proj.w2", xavier(&mut rng, d, d)),
            Parameter::new("proj.b2", Matrix::zeros((1, d))),
        );
        let disc = (
            Parameter::new("disc.rho", xavier(&mut rng, d, d)),
            Parameter::new("disc.bilinear", xavier(&mut rng, d, d)),
        );
        Self {
            input_proj,
            attn,
            fuse_lo,
            fuse_ho,
            prelu_ho,
            w_fs,
            proj,
            disc,
            dim: d,
        }
    }

    /// Fixed-order view of every parameter.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for (_, w, b) in &self.input_proj {
            out.push(w);
            out.push(b);
        }
        for (_, a) in &self.attn {
            out.push(a);
        }
        for p in [&self.fuse_lo, &self.fuse_ho] {
            out.push(&p.0);
            out.push(&p.1);
            out.push(&p.2);
        }
        out.push(&self.prelu_ho);
        out.extend(self.w_fs.iter());
        out.push(&self.proj.0);
        out.push(&self.proj.1);
        out.push(&self.proj.2);
        out.push(&self.proj.3);
        out.push(&self.disc.0);
        out.push(&self.disc.1);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        for (_, w, b) in &mut self.input_proj {
            out.push(w);
            out.push(b);
        }
        for (_, a) in &mut self.attn {
            out.push(a);
        }
        for p in [&mut self.fuse_lo, &mut self.fuse_ho] {
            out.push(&mut p.0);
            out.push(&mut p.1);
            out.push(&mut p.2);
        }
        out.push(&mut self.prelu_ho);
        out.extend(self.w_fs.iter_mut());
        out.push(&mut self.proj.0);
        out.push(&mut self.proj.1);
        out.push(&mut self.proj.2);
        out.push(&mut self.proj.3);
        out.push(&mut self.disc.0);
        out.push(&mut self.disc.1);
        out
    }

    pub fn n_entries(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Tape handles for every parameter, in the same layout as
/// [`ModelParams`].
pub struct ParamVars {
    pub input_proj: Vec<(NodeTypeId, Var, Var)>,
    pub attn: Vec<(NodeTypeId, Var)>,
    pub fuse_lo: (Var, Var, Var),
    pub fuse_ho: (Var, Var, Var),
    pub prelu_ho: Var,
    pub w_fs: Vec<Var>,
    pub proj: (Var, Var, Var, Var),
    pub disc: (Var, Var),
}

impl ParamVars {
    /// Leaves every parameter onto the tape as a trainable node.
    pub fn insert(tape: &mut Tape, params: &ModelParams) -> Self {
        let mut p = |m: &Parameter| tape.param(m.value.clone());
        Self {
            input_proj: params
                .input_proj
                .iter()
                .map(|(t, w, b)| (*t, p(w), p(b)))
                .collect(),
            attn: params.attn.iter().map(|(t, a)| (*t, p(a))).collect(),
            fuse_lo: (p(&params.fuse_lo.0), p(&params.fuse_lo.1), p(&params.fuse_lo.2)),
            fuse_ho: (p(&params.fuse_ho.0), p(&params.fuse_ho.1), p(&params.fuse_ho.2)),
            prelu_ho: p(&params.prelu_ho),
            w_fs: params.w_fs.iter().map(&mut p).collect(),
            proj: (
                p(&params.proj.0),
                p(&params.proj.1),
                p(&params.proj.2),
                p(&params.proj.3),
            ),
            disc: (p(&params.disc.0), p(&params.disc.1)),
        }
    }

    /// Rebuilds the structured view from a flat Var list laid out like
    /// `ModelParams::params()` (the inverse of [`ParamVars::flat`]).
    pub fn from_flat(template: &ModelParams, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), template.params().len());
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let input_proj = template
            .input_proj
            .iter()
            .map(|(t, _, _)| (*t, next(), next()))
            .collect();
        let attn = template.attn.iter().map(|(t, _)| (*t, next())).collect();
        let fuse_lo = (next(), next(), next());
        let fuse_ho = (next(), next(), next());
        let prelu_ho = next();
        let w_fs = template.w_fs.iter().map(|_| next()).collect();
        let proj = (next(), next(), next(), next());
        let disc = (next(), next());
        Self {
            input_proj,
            attn,
            fuse_lo,
            fuse_ho,
            prelu_ho,
            w_fs,
            proj,
            disc,
        }
    }

    /// Flat list matching `ModelParams::params()` order.
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (_, w, b) in &self.input_proj {
            out.push(*w);
            out.push(*b);
        }
        for (_, a) in &self.attn {
            out.push(*a);
        }
        for p in [&self.fuse_lo, &self.fuse_ho] {
            out.push(p.0);
            out.push(p.1);
            out.push(p.2);
        }
        out.push(self.prelu_ho);
        out.extend(self.w_fs.iter().copied());
        out.push(self.proj.0);
        out.push(self.proj.1);
        out.push(self.proj.2);
        out.push(self.proj.3);
        out.push(self.disc.0);
        out.push(self.disc.1);
        out
    }
}

/// Value normalization applied when turning an adjacency into a sparse
/// operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjNorm {
    /// Raw 0/1 values.
    None,
    /// Row values 1/deg(i) (mean aggregation).
    RowMean,
    /// Symmetric D^{-1/2} A D^{-1/2}.
    Symmetric,
}

pub fn spmat_from_adj(adj: &SparseAdj, norm: AdjNorm) -> SpMat {
    let n = adj.n_rows();
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .map(|i| {
            let nbrs = adj.row(i);
            match norm {
                AdjNorm::None => nbrs.iter().map(|&j| (j, 1.0)).collect(),
                AdjNorm::RowMean => {
                    let v = 1.0 / nbrs.len().max(1) as f64;
                    nbrs.iter().map(|&j| (j, v)).collect()
                }
                AdjNorm::Symmetric => nbrs
                    .iter()
                    .map(|&j| {
                        let dj = adj.degree(j as usize).max(1) as f64;
                        let di = nbrs.len().max(1) as f64;
                        (j, 1.0 / (di.sqrt() * dj.sqrt()))
                    })
                    .collect(),
            }
        })
        .collect();
    SpMat::from_rows(n, adj.n_cols(), &rows)
}
