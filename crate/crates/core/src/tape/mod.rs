//! Reverse-mode differentiation over rank-2 double-precision tensors.
//!
//! A [`Tape`] records every forward primitive; [`Tape::backward`] walks the
//! record in reverse and accumulates exact analytic gradients. The
//! primitive set is exactly what the three encoders and the contrastive
//! objective need; each backward rule is verified against central finite
//! differences (see [`gradcheck`] and the op-level tests).
//!
//! Reductions use fixed (index) order everywhere and matrix products are
//! row-chunked with a fixed chunk size, so results do not depend on the
//! rayon thread count.

mod linalg;
pub mod gradcheck;

pub use gradcheck::grad_check;
pub use linalg::par_matmul;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use std::rc::Rc;
use thiserror::Error;

/// Rank-2 tensor of f64 entries.
pub type Matrix = Array2<f64>;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("{op}: zero-norm row {row}")]
    ZeroNorm { op: &'static str, row: usize },
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse matrix with values in CSR layout, used as a constant operand of
/// the sparse-dense product. The transpose is precomputed for the backward
/// pass.
#[derive(Debug, Clone)]
pub struct SpMat {
    pub n_rows: usize,
    pub n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    t_indptr: Vec<usize>,
    t_indices: Vec<u32>,
    t_values: Vec<f64>,
}

impl SpMat {
    /// Build from per-row (index, value) entries; indices must be sorted
    /// per row.
    pub fn from_rows(n_rows: usize, n_cols: usize, rows: &[Vec<(u32, f64)>]) -> Self {
        assert_eq!(rows.len(), n_rows);
        let mut indptr = Vec::with_capacity(n_rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(j, v) in row {
                debug_assert!((j as usize) < n_cols);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        // transpose
        let mut t_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_cols];
        for i in 0..n_rows {
            for k in indptr[i]..indptr[i + 1] {
                t_rows[indices[k] as usize].push((i as u32, values[k]));
            }
        }
        let mut t_indptr = Vec::with_capacity(n_cols + 1);
        t_indptr.push(0);
        let mut t_indices = Vec::new();
        let mut t_values = Vec::new();
        for row in &t_rows {
            for &(j, v) in row {
                t_indices.push(j);
                t_values.push(v);
            }
            t_indptr.push(t_indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
            t_indptr,
            t_indices,
            t_values,
        }
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    /// out = S . a (rows evaluated independently, neighbor order fixed).
    pub fn dot(&self, a: &Matrix) -> Matrix {
        assert_eq!(self.n_cols, a.nrows());
        spmm(self.n_rows, |i| self.row(i), a)
    }

    /// out = S^T . a
    pub fn dot_t(&self, a: &Matrix) -> Matrix {
        assert_eq!(self.n_rows, a.nrows());
        spmm(self.n_cols, |i| {
            let r = self.t_indptr[i]..self.t_indptr[i + 1];
            (&self.t_indices[r.clone()], &self.t_values[r])
        }, a)
    }
}

fn spmm<'a, F>(n_out: usize, row: F, a: &Matrix) -> Matrix
where
    F: Fn(usize) -> (&'a [u32], &'a [f64]) + Sync,
{
    let d = a.ncols();
    let mut out = Matrix::zeros((n_out, d));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut orow)| {
            let (idx, vals) = row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                let arow = a.row(j as usize);
                for (o, &x) in orow.iter_mut().zip(arow.iter()) {
                    *o += v * x;
                }
            }
        });
    out
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    /// a . b^T
    MatmulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    /// (n x d) + broadcast (1 x d)
    AddRow(Var, Var),
    /// (n x m) + broadcast (n x 1)
    AddCol(Var, Var),
    /// (n x d) * broadcast (n x 1)
    MulCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    /// input, learnable slope (1 x 1)
    Prelu(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    RowSoftmax(Var),
    /// softmax per row restricted to mask-true entries
    MaskedRowSoftmax(Var),
    MeanRows(Var),
    MeanAll(Var),
    Gather(Var, Rc<Vec<usize>>),
    /// scatter-add rows into an n_out-row matrix
    Scatter(Var, Rc<Vec<usize>>),
    Spmm(Rc<SpMat>, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    Reshape(Var, usize, usize),
    RepeatRows(Var),
    /// sum consecutive groups of `m` rows
    SumRowGroups(Var, usize),
    Dropout(Var, Rc<Matrix>, f64),
    RowNormalize(Var),
    Clamp(Var, f64, f64),
    /// per-anchor multi-positive InfoNCE over cosine rows; inputs are
    /// unit-normalized, output is the n x 1 per-node loss
    InfoNce {
        a: Var,
        b: Var,
        pos: Rc<Vec<Vec<u32>>>,
        tau: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradient store produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a variable, densified to zeros when it never received
    /// a contribution.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(shape))
    }
}

/// Forward recorder + reverse differentiator.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const INFONCE_BLOCK: usize = 128;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let v = &self.nodes[v.0].value;
        (v.nrows(), v.ncols())
    }

    /// Trainable leaf: gradients flow to it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is accumulated for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite entries pushed by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape_err(op: &'static str, detail: String) -> TapeError {
        TapeError::Shape { op, detail }
    }

    // ---- binary ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Self::shape_err("matmul", format!("{ar}x{ac} . {br}x{bc}")));
        }
        let v = par_matmul(self.value(a).view(), self.value(b).view());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Matmul(a, b), needs))
    }

    /// a . b^T
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(Self::shape_err(
                "matmul_nt",
                format!("{ar}x{ac} . ({br}x{bc})^T"),
            ));
        }
        let v = par_matmul(self.value(a).view(), self.value(b).t());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatmulNT(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                "sub",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = self.value(a) - self.value(b);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), needs))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                "mul_elem",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MulElem(a, b), needs))
    }

    /// (n x d) + row vector (1 x d), broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TapeError> {
        let (_, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(Self::shape_err(
                "add_row",
                format!("{:?} + {rr}x{rc}", self.shape(a)),
            ));
        }
        let v = self.value(a) + &self.value(row).row(0);
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(v, Op::AddRow(a, row), needs))
    }

    /// (n x m) + column vector (n x 1), broadcast over columns.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, TapeError> {
        let (ar, _) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cc != 1 || cr != ar {
            return Err(Self::shape_err(
                "add_col",
                format!("{:?} + {cr}x{cc}", self.shape(a)),
            ));
        }
        let mut v = self.value(a).clone();
        let c = self.value(col);
        for (i, mut r) in v.axis_iter_mut(Axis(0)).enumerate() {
            r += c[(i, 0)];
        }
        let needs = self.needs(a) || self.needs(col);
        Ok(self.push(v, Op::AddCol(a, col), needs))
    }

    /// (n x d) * column vector (n x 1), broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TapeError> {
        let (ar, _) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cc != 1 || cr != ar {
            return Err(Self::shape_err(
                "mul_col",
                format!("{:?} * {cr}x{cc}", self.shape(a)),
            ));
        }
        let mut v = self.value(a).clone();
        let c = self.value(col);
        for (i, mut r) in v.axis_iter_mut(Axis(0)).enumerate() {
            r *= c[(i, 0)];
        }
        let needs = self.needs(a) || self.needs(col);
        Ok(self.push(v, Op::MulCol(a, col), needs))
    }

    // ---- scalar / elementwise ops ----

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let needs = self.needs(a);
        self.push(v, Op::Scale(a, c), needs)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        let needs = self.needs(a);
        self.push(v, Op::AddConst(a), needs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let needs = self.needs(a);
        self.push(v, Op::LeakyRelu(a, slope), needs)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        let needs = self.needs(a);
        self.push(v, Op::Elu(a), needs)
    }

    /// PReLU with a learnable scalar slope (1 x 1 parameter).
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var, TapeError> {
        if self.shape(slope) != (1, 1) {
            return Err(Self::shape_err(
                "prelu",
                format!("slope must be 1x1, got {:?}", self.shape(slope)),
            ));
        }
        let s = self.value(slope)[(0, 0)];
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { s * x });
        let needs = self.needs(a) || self.needs(slope);
        Ok(self.push(v, Op::Prelu(a, slope), needs))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let needs = self.needs(a);
        self.push(v, Op::Tanh(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(v, Op::Sigmoid(a), needs)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TapeError> {
        if self.value(a).iter().any(|&x| x <= 0.0) {
            return Err(TapeError::Invalid {
                op: "log",
                detail: "non-positive input".into(),
            });
        }
        let v = self.value(a).mapv(f64::ln);
        let needs = self.needs(a);
        Ok(self.push(v, Op::Log(a), needs))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let needs = self.needs(a);
        self.push(v, Op::Exp(a), needs)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        let needs = self.needs(a);
        self.push(v, Op::Clamp(a, lo, hi), needs)
    }

    // ---- softmax / reductions ----

    /// Numerically stable softmax along each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let needs = self.needs(a);
        self.push(v, Op::RowSoftmax(a), needs)
    }

    /// Softmax per row over the mask-true entries only; masked-out
    /// outputs are exactly zero. Every row must have at least one true
    /// entry.
    pub fn masked_row_softmax(&mut self, a: Var, mask: Rc<Array2<bool>>) -> Result<Var, TapeError> {
        let x = self.value(a);
        if mask.dim() != x.dim() {
            return Err(Self::shape_err(
                "masked_row_softmax",
                format!("mask {:?} vs input {:?}", mask.dim(), x.dim()),
            ));
        }
        let mut v = Matrix::zeros(x.dim());
        for i in 0..x.nrows() {
            let mut m = f64::NEG_INFINITY;
            for j in 0..x.ncols() {
                if mask[(i, j)] {
                    m = m.max(x[(i, j)]);
                }
            }
            if m == f64::NEG_INFINITY {
                return Err(TapeError::Invalid {
                    op: "masked_row_softmax",
                    detail: format!("row {i} has no unmasked entry"),
                });
            }
            let mut s = 0.0;
            for j in 0..x.ncols() {
                if mask[(i, j)] {
                    let e = (x[(i, j)] - m).exp();
                    v[(i, j)] = e;
                    s += e;
                }
            }
            for j in 0..x.ncols() {
                v[(i, j)] /= s;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(v, Op::MaskedRowSoftmax(a), needs))
    }

    /// Column means: (n x d) -> (1 x d).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        let needs = self.needs(a);
        self.push(v, Op::MeanRows(a), needs)
    }

    /// Mean of all entries: (n x d) -> (1 x 1).
    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::from_elem((1, 1), x.sum() / x.len() as f64);
        let needs = self.needs(a);
        self.push(v, Op::MeanAll(a), needs)
    }

    // ---- structural ops ----

    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ar) {
            return Err(TapeError::Invalid {
                op: "gather",
                detail: format!("index {bad} out of range for {ar} rows"),
            });
        }
        let x = self.value(a);
        let mut v = Matrix::zeros((idx.len(), ac));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&x.row(i));
        }
        let needs = self.needs(a);
        Ok(self.push(v, Op::Gather(a, idx), needs))
    }

    /// Scatter-add the rows of `a` into an `n_out`-row zero matrix.
    pub fn scatter(&mut self, a: Var, idx: Rc<Vec<usize>>, n_out: usize) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        if idx.len() != ar {
            return Err(Self::shape_err(
                "scatter",
                format!("{} indices for {ar} rows", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(TapeError::Invalid {
                op: "scatter",
                detail: format!("index {bad} out of range for {n_out} rows"),
            });
        }
        let x = self.value(a);
        let mut v = Matrix::zeros((n_out, ac));
        for (r, &i) in idx.iter().enumerate() {
            let mut dst = v.row_mut(i);
            dst += &x.row(r);
        }
        let needs = self.needs(a);
        Ok(self.push(v, Op::Scatter(a, idx), needs))
    }

    /// Sparse-dense product with a constant sparse matrix.
    pub fn spmm(&mut self, s: Rc<SpMat>, a: Var) -> Result<Var, TapeError> {
        let (ar, _) = self.shape(a);
        if s.n_cols != ar {
            return Err(Self::shape_err(
                "spmm",
                format!("{}x{} . {:?}", s.n_rows, s.n_cols, self.shape(a)),
            ));
        }
        let v = s.dot(self.value(a));
        let needs = self.needs(a);
        Ok(self.push(v, Op::Spmm(s, a), needs))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(Self::shape_err(
                "concat_cols",
                format!("{ar}x{ac} | {br}x{bc}"),
            ));
        }
        let mut v = Matrix::zeros((ar, ac + bc));
        v.slice_mut(s![.., ..ac]).assign(self.value(a));
        v.slice_mut(s![.., ac..]).assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::ConcatCols(a, b), needs))
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Result<Var, TapeError> {
        let (_, ac) = self.shape(a);
        if from >= to || to > ac {
            return Err(Self::shape_err(
                "slice_cols",
                format!("[{from}..{to}) of {ac} columns"),
            ));
        }
        let v = self.value(a).slice(s![.., from..to]).to_owned();
        let needs = self.needs(a);
        Ok(self.push(v, Op::SliceCols(a, from, to), needs))
    }

    /// Row-major reinterpretation to (rows x cols).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        if ar * ac != rows * cols {
            return Err(Self::shape_err(
                "reshape",
                format!("{ar}x{ac} -> {rows}x{cols}"),
            ));
        }
        let data: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Matrix::from_shape_vec((rows, cols), data).expect("size checked");
        let needs = self.needs(a);
        Ok(self.push(v, Op::Reshape(a, ar, ac), needs))
    }

    /// Broadcast a (1 x d) row to (n x d).
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        if ar != 1 {
            return Err(Self::shape_err("repeat_rows", format!("{ar}x{ac} input")));
        }
        let row = self.value(a).row(0).to_owned();
        let v = Matrix::from_shape_fn((n, ac), |(_, j)| row[j]);
        let needs = self.needs(a);
        Ok(self.push(v, Op::RepeatRows(a), needs))
    }

    /// Sum consecutive groups of `m` rows: ((g*m) x d) -> (g x d).
    pub fn sum_row_groups(&mut self, a: Var, m: usize) -> Result<Var, TapeError> {
        let (ar, ac) = self.shape(a);
        if m == 0 || ar % m != 0 {
            return Err(Self::shape_err(
                "sum_row_groups",
                format!("{ar} rows not divisible into groups of {m}"),
            ));
        }
        let x = self.value(a);
        let g = ar / m;
        let mut v = Matrix::zeros((g, ac));
        for t in 0..g {
            for p in 0..m {
                let src = x.row(t * m + p);
                let mut dst = v.row_mut(t);
                dst += &src;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(v, Op::SumRowGroups(a, m), needs))
    }

    /// Inverted dropout with a seeded mask; scales kept entries by
    /// 1/(1-p). `p = 0` is the identity and records nothing.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var, TapeError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TapeError::Invalid {
                op: "dropout",
                detail: format!("rate {p} outside [0, 1)"),
            });
        }
        if p == 0.0 {
            return Ok(a);
        }
        let shape = self.shape(a);
        let mask = Matrix::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { 1.0 });
        let scale = 1.0 / (1.0 - p);
        let v = self.value(a) * &mask * scale;
        let needs = self.needs(a);
        Ok(self.push(v, Op::Dropout(a, Rc::new(mask), scale), needs))
    }

    /// L2-normalize each row. A zero-norm row is an error (a collapsed
    /// embedding upstream of a cosine).
    pub fn row_normalize(&mut self, a: Var) -> Result<Var, TapeError> {
        let x = self.value(a);
        let mut v = x.clone();
        for (i, mut row) in v.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.iter().map(|&x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TapeError::ZeroNorm {
                    op: "row_normalize",
                    row: i,
                });
            }
            row.mapv_inplace(|x| x / norm);
        }
        let needs = self.needs(a);
        Ok(self.push(v, Op::RowNormalize(a), needs))
    }

    /// Multi-positive InfoNCE per anchor: rows of `a` and `b` must be
    /// unit vectors; entry i of the output is
    /// ln(1 + sum_neg exp(c_ij/tau) / sum_pos exp(c_ij/tau)) with
    /// c = a . b^T, which is -log of the positive mass ratio and is
    /// non-negative by construction (exactly zero when every candidate is
    /// a positive). Row blocks of c are streamed, never materialized.
    pub fn infonce(
        &mut self,
        a: Var,
        b: Var,
        pos: Rc<Vec<Vec<u32>>>,
        tau: f64,
    ) -> Result<Var, TapeError> {
        let (n, d) = self.shape(a);
        if self.shape(b) != (n, d) {
            return Err(Self::shape_err(
                "infonce",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        if tau <= 0.0 {
            return Err(TapeError::Invalid {
                op: "infonce",
                detail: format!("temperature {tau} must be positive"),
            });
        }
        if pos.len() != n {
            return Err(TapeError::Invalid {
                op: "infonce",
                detail: format!("{} positive sets for {n} anchors", pos.len()),
            });
        }
        for (i, p) in pos.iter().enumerate() {
            if p.is_empty() {
                return Err(TapeError::Invalid {
                    op: "infonce",
                    detail: format!("anchor {i} has an empty positive set"),
                });
            }
            if p.windows(2).any(|w| w[0] >= w[1]) || *p.last().unwrap() as usize >= n {
                return Err(TapeError::Invalid {
                    op: "infonce",
                    detail: format!("positive set of anchor {i} not sorted/in-range"),
                });
            }
        }
        let av = self.value(a);
        let bv = self.value(b);
        let pos_rows: &[Vec<u32>] = pos.as_ref();
        let mut losses = Matrix::zeros((n, 1));
        let mut start = 0;
        while start < n {
            let end = (start + INFONCE_BLOCK).min(n);
            let c = par_matmul(av.slice(s![start..end, ..]), bv.t());
            let rows: Vec<f64> = (0..end - start)
                .into_par_iter()
                .map(|r| {
                    let i = start + r;
                    let pos = pos_rows;
                    let crow = c.row(r);
                    let m = crow.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
                    let mut sum_pos = 0.0;
                    let mut pk = 0usize;
                    let mut sum_neg = 0.0;
                    for (j, &cij) in crow.iter().enumerate() {
                        let e = (cij / tau - m).exp();
                        if pk < pos[i].len() && pos[i][pk] as usize == j {
                            sum_pos += e;
                            pk += 1;
                        } else {
                            sum_neg += e;
                        }
                    }
                    (sum_neg / sum_pos).ln_1p()
                })
                .collect();
            for (r, l) in rows.into_iter().enumerate() {
                losses[(start + r, 0)] = l;
            }
            start = end;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(losses, Op::InfoNce { a, b, pos, tau }, needs))
    }

    // ---- backward ----

    /// Reverse pass from a scalar (1 x 1) loss. Returns per-variable
    /// gradients; variables that the loss does not depend on have none.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        if self.shape(loss) != (1, 1) {
            return Err(TapeError::Invalid {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", self.shape(loss)),
            });
        }
        if !self.value(loss)[(0, 0)].is_finite() {
            return Err(TapeError::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_elem((1, 1), 1.0));

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, contrib: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &contrib,
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    let da = par_matmul(g.view(), self.value(*b).t());
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = par_matmul(self.value(*a).t(), g.view());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatmulNT(a, b) => {
                if self.needs(*a) {
                    let da = par_matmul(g.view(), self.value(*b).view());
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = par_matmul(g.t(), self.value(*a).view());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::MulElem(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*row) {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::AddCol(a, col) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*col) {
                    let dc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col);
                if self.needs(*a) {
                    let mut da = g.clone();
                    for (i, mut r) in da.axis_iter_mut(Axis(0)).enumerate() {
                        r *= c[(i, 0)];
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*col) {
                    let prod = g * self.value(*a);
                    let dc = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::LeakyRelu(a, s) => {
                let x = self.value(*a);
                let da = ndarray::Zip::from(g)
                    .and(x)
                    .map_collect(|&g, &x| if x > 0.0 { g } else { s * g });
                self.accumulate(grads, *a, da);
            }
            Op::Elu(a) => {
                // d/dx ELU = 1 for x > 0, exp(x) = out + 1 otherwise
                let x = self.value(*a);
                let da = ndarray::Zip::from(g)
                    .and(x)
                    .and(out)
                    .map_collect(|&g, &x, &o| if x > 0.0 { g } else { g * (o + 1.0) });
                self.accumulate(grads, *a, da);
            }
            Op::Prelu(a, slope) => {
                let x = self.value(*a);
                let s = self.value(*slope)[(0, 0)];
                if self.needs(*a) {
                    let da = ndarray::Zip::from(g)
                        .and(x)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { s * g });
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*slope) {
                    let ds: f64 = g
                        .iter()
                        .zip(x.iter())
                        .map(|(&g, &x)| if x > 0.0 { 0.0 } else { g * x })
                        .sum();
                    self.accumulate(grads, *slope, Matrix::from_elem((1, 1), ds));
                }
            }
            Op::Tanh(a) => {
                let da = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&g, &o| g * (1.0 - o * o));
                self.accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&g, &o| g * o * (1.0 - o));
                self.accumulate(grads, *a, da);
            }
            Op::Log(a) => {
                let da = g / self.value(*a);
                self.accumulate(grads, *a, da);
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, g * out);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let da = ndarray::Zip::from(g)
                    .and(x)
                    .map_collect(|&g, &x| if x > *lo && x < *hi { g } else { 0.0 });
                self.accumulate(grads, *a, da);
            }
            Op::RowSoftmax(a) | Op::MaskedRowSoftmax(a) => {
                // masked entries have p = 0, so the dense formula covers
                // both cases
                let p = out;
                let mut da = Matrix::zeros(p.dim());
                for i in 0..p.nrows() {
                    let dot: f64 = (0..p.ncols()).map(|j| g[(i, j)] * p[(i, j)]).sum();
                    for j in 0..p.ncols() {
                        da[(i, j)] = p[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let (n, d) = self.shape(*a);
                let mut da = Matrix::zeros((n, d));
                for mut row in da.axis_iter_mut(Axis(0)) {
                    for j in 0..d {
                        row[j] = g[(0, j)] / n as f64;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::MeanAll(a) => {
                let (n, d) = self.shape(*a);
                let v = g[(0, 0)] / (n * d) as f64;
                self.accumulate(grads, *a, Matrix::from_elem((n, d), v));
            }
            Op::Gather(a, idx) => {
                let (n, d) = self.shape(*a);
                let mut da = Matrix::zeros((n, d));
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = da.row_mut(i);
                    dst += &g.row(r);
                }
                self.accumulate(grads, *a, da);
            }
            Op::Scatter(a, idx) => {
                let (n, d) = self.shape(*a);
                let mut da = Matrix::zeros((n, d));
                for (r, &i) in idx.iter().enumerate() {
                    da.row_mut(r).assign(&g.row(i));
                }
                self.accumulate(grads, *a, da);
            }
            Op::Spmm(s, a) => {
                let da = s.dot_t(g);
                self.accumulate(grads, *a, da);
            }
            Op::ConcatCols(a, b) => {
                let (_, ac) = self.shape(*a);
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.slice(s![.., ..ac]).to_owned());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.slice(s![.., ac..]).to_owned());
                }
            }
            Op::SliceCols(a, from, to) => {
                let (n, d) = self.shape(*a);
                let mut da = Matrix::zeros((n, d));
                da.slice_mut(s![.., *from..*to]).assign(g);
                self.accumulate(grads, *a, da);
            }
            Op::Reshape(a, ar, ac) => {
                let data: Vec<f64> = g.iter().copied().collect();
                let da = Matrix::from_shape_vec((*ar, *ac), data).expect("same size");
                self.accumulate(grads, *a, da);
            }
            Op::RepeatRows(a) => {
                let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, *a, dr);
            }
            Op::SumRowGroups(a, m) => {
                let (ar, ac) = self.shape(*a);
                let mut da = Matrix::zeros((ar, ac));
                for t in 0..ar / m {
                    for p in 0..*m {
                        da.row_mut(t * m + p).assign(&g.row(t));
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Dropout(a, mask, scale) => {
                let da = g * mask.as_ref() * *scale;
                self.accumulate(grads, *a, da);
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut da = Matrix::zeros(x.dim());
                for i in 0..x.nrows() {
                    let norm = x.row(i).iter().map(|&v| v * v).sum::<f64>().sqrt();
                    let u = out.row(i);
                    let dot: f64 = g.row(i).iter().zip(u.iter()).map(|(&a, &b)| a * b).sum();
                    for j in 0..x.ncols() {
                        da[(i, j)] = (g[(i, j)] - dot * u[j]) / norm;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::InfoNce { a, b, pos, tau } => {
                let (n, _) = self.shape(*a);
                let av = self.value(*a);
                let bv = self.value(*b);
                let pos_rows: &[Vec<u32>] = pos.as_ref();
                let mut da = Matrix::zeros(av.dim());
                let mut db = Matrix::zeros(bv.dim());
                let mut start = 0;
                while start < n {
                    let end = (start + INFONCE_BLOCK).min(n);
                    let c = par_matmul(av.slice(s![start..end, ..]), bv.t());
                    // w[r, j] = g_i/tau * (p_all - p_pos)
                    let mut w = Matrix::zeros((end - start, n));
                    w.axis_iter_mut(Axis(0))
                        .into_par_iter()
                        .enumerate()
                        .for_each(|(r, mut wrow)| {
                            let i = start + r;
                            let pos = pos_rows;
                            let gi = g[(i, 0)] / tau;
                            let crow = c.row(r);
                            let m = crow.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
                            let mut s_all = 0.0;
                            let mut s_pos = 0.0;
                            let mut pk = 0usize;
                            for (j, &cij) in crow.iter().enumerate() {
                                let e = (cij / tau - m).exp();
                                wrow[j] = e;
                                s_all += e;
                                if pk < pos[i].len() && pos[i][pk] as usize == j {
                                    s_pos += e;
                                    pk += 1;
                                }
                            }
                            let mut pk = 0usize;
                            for j in 0..n {
                                let mut v = wrow[j] / s_all;
                                if pk < pos[i].len() && pos[i][pk] as usize == j {
                                    v -= wrow[j] / s_pos;
                                    pk += 1;
                                }
                                wrow[j] = gi * v;
                            }
                        });
                    da.slice_mut(s![start..end, ..])
                        .assign(&par_matmul(w.view(), bv.view()));
                    db += &par_matmul(w.t(), av.slice(s![start..end, ..]));
                    start = end;
                }
                if self.needs(*a) {
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, db);
                }
            }
        }
    }
}
