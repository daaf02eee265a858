//! Central finite-difference verification of tape gradients.

use super::{Matrix, Tape, TapeError, Var};

/// Entries whose analytic and numeric magnitudes are both below this floor
/// are compared absolutely; above it the error is relative.
const REL_FLOOR: f64 = 1e-3;

/// Builds a deterministic scalar computation from parameter leaves and
/// compares the tape's analytic gradient of every parameter entry against
/// the central difference (f(x+eps) - f(x-eps)) / (2 eps). Returns the
/// maximum relative error over all entries.
///
/// The builder must be a pure function of the leaf values: any dropout or
/// masking inside has to be frozen (same seed per call).
pub fn grad_check<F>(build: F, params: &[Matrix], eps: f64) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    let eval = |values: &[Matrix]| -> Result<f64, TapeError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        if tape.shape(loss) != (1, 1) {
            return Err(TapeError::Invalid {
                op: "grad_check",
                detail: format!("loss must be scalar, got {:?}", tape.shape(loss)),
            });
        }
        let v = tape.value(loss)[(0, 0)];
        if !v.is_finite() {
            return Err(TapeError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|m| tape.param(m.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss)[(0, 0)].is_finite() {
        return Err(TapeError::NonFinite { op: "grad_check" });
    }
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.dim()))
        .collect();

    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        for idx in (0..p.nrows()).flat_map(|r| (0..p.ncols()).map(move |c| (r, c))) {
            let orig = work[pi][idx];
            work[pi][idx] = orig + eps;
            let plus = eval(&work)?;
            work[pi][idx] = orig - eps;
            let minus = eval(&work)?;
            work[pi][idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
