//! Deterministic row-chunked matrix product.

use super::Matrix;
use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

/// Rows per parallel chunk. Fixed (not derived from the thread count) so
/// the chunk decomposition, and with it every accumulation order, is
/// identical no matter how many rayon workers run.
const CHUNK: usize = 64;

/// `a . b` with the row dimension split into fixed chunks evaluated in
/// parallel. Each output element is a k-ordered dot product regardless of
/// chunking, so the result is bitwise equal to the serial product (see
/// `chunking_is_bitwise_invariant`).
pub fn par_matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Matrix {
    let (n, k) = a.dim();
    let m = b.dim().1;
    if n * m * k < 1 << 16 || n <= CHUNK {
        return a.dot(&b);
    }
    let mut out = Matrix::zeros((n, m));
    out.axis_chunks_iter_mut(Axis(0), CHUNK)
        .into_par_iter()
        .zip(a.axis_chunks_iter(Axis(0), CHUNK).into_par_iter())
        .for_each(|(mut oc, ac)| {
            oc.assign(&ac.dot(&b));
        });
    out
}
