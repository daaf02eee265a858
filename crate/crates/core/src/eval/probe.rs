//! Linear-probe classification of frozen embeddings: multinomial
//! logistic regression trained by full-batch gradient descent with L2
//! regularization, model-selected on the validation split.

use super::metrics::{auc_ovr_macro, confusion, macro_f1, micro_f1};
use super::EvalError;
use crate::tape::Matrix;
use ndarray::{Array1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const L2_WEIGHT: f64 = 1e-4;
const MAX_ITERS: usize = 1000;
const LEARNING_RATE: f64 = 0.5;

/// Mean and standard deviation (over probe repetitions) of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MetricStat {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationReport {
    pub split: String,
    pub macro_f1: MetricStat,
    pub micro_f1: MetricStat,
    pub auc: MetricStat,
    pub runs: usize,
}

/// Per-feature standardization fitted on the train split; keeps the
/// fixed-step gradient descent well-conditioned regardless of embedding
/// scale.
struct Standardizer {
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl Standardizer {
    fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var: Array1<f64> = Array1::zeros(x.ncols());
        for row in x.rows() {
            for (j, (&v, &m)) in row.iter().zip(mean.iter()).enumerate() {
                var[j] += (v - m) * (v - m);
            }
        }
        let inv_std = var.mapv(|v| 1.0 / (v / n).sqrt().max(1e-8));
        Self { mean, inv_std }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Matrix {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) * self.inv_std[j];
            }
        }
        out
    }
}

fn softmax_rows(logits: &mut Matrix) {
    for mut row in logits.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

struct FittedProbe {
    w: Matrix,
    b: Array1<f64>,
}

impl FittedProbe {
    fn scores(&self, x: ArrayView2<'_, f64>) -> Matrix {
        let mut logits = x.dot(&self.w);
        for mut row in logits.rows_mut() {
            row += &self.b;
        }
        softmax_rows(&mut logits);
        logits
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<u32> {
        self.scores(x)
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                    .map(|(i, _)| i as u32)
                    .expect("nonempty row")
            })
            .collect()
    }
}

fn fit_probe(
    x_train: ArrayView2<'_, f64>,
    y_train: &[u32],
    x_val: ArrayView2<'_, f64>,
    y_val: &[u32],
    n_classes: usize,
    seed: u64,
) -> FittedProbe {
    let (n, d) = x_train.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Matrix::from_shape_fn((d, n_classes), |_| (rng.random::<f64>() - 0.5) * 0.02);
    let mut b: Array1<f64> = Array1::zeros(n_classes);

    let mut onehot = Matrix::zeros((n, n_classes));
    for (i, &c) in y_train.iter().enumerate() {
        onehot[(i, c as usize)] = 1.0;
    }

    let mut best = FittedProbe {
        w: w.clone(),
        b: b.clone(),
    };
    let mut best_val = -1.0f64;
    for _ in 0..MAX_ITERS {
        let mut probs = x_train.dot(&w);
        for mut row in probs.rows_mut() {
            row += &b;
        }
        softmax_rows(&mut probs);
        let diff = &probs - &onehot;
        let grad_w = x_train.t().dot(&diff) / n as f64 + &w * (2.0 * L2_WEIGHT);
        let grad_b = diff.sum_axis(Axis(0)) / n as f64;
        w -= &(&grad_w * LEARNING_RATE);
        b -= &(&grad_b * LEARNING_RATE);

        let candidate = FittedProbe {
            w: w.clone(),
            b: b.clone(),
        };
        let val_pred = candidate.predict(x_val);
        let val_micro = micro_f1(&confusion(y_val, &val_pred, n_classes));
        if val_micro > best_val {
            best_val = val_micro;
            best = candidate;
        }
    }
    best
}

/// Fits the probe `seeds.len()` times (one seed per repetition, in
/// parallel) and reports test-split metrics as mean and standard
/// deviation. The split name is carried through for reporting.
pub fn linear_probe(
    emb: ArrayView2<'_, f64>,
    labels: &[u32],
    n_classes: usize,
    split_name: &str,
    train_idx: &[u32],
    val_idx: &[u32],
    test_idx: &[u32],
    seeds: &[u64],
) -> Result<ClassificationReport, EvalError> {
    if labels.len() != emb.nrows() {
        return Err(EvalError::Invalid(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            emb.nrows()
        )));
    }
    let take = |idx: &[u32]| -> (Matrix, Vec<u32>) {
        let mut x = Matrix::zeros((idx.len(), emb.ncols()));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&emb.row(i as usize));
            y.push(labels[i as usize]);
        }
        (x, y)
    };
    let (x_train_raw, y_train) = take(train_idx);
    let (x_val_raw, y_val) = take(val_idx);
    let (x_test_raw, y_test) = take(test_idx);
    for c in 0..n_classes as u32 {
        if !y_train.contains(&c) {
            return Err(EvalError::MissingClass {
                class: c,
                split: split_name.to_string(),
            });
        }
    }
    let std = Standardizer::fit(x_train_raw.view());
    let x_train = std.apply(x_train_raw.view());
    let x_val = std.apply(x_val_raw.view());
    let x_test = std.apply(x_test_raw.view());

    let metrics: Vec<(f64, f64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let probe = fit_probe(
                x_train.view(),
                &y_train,
                x_val.view(),
                &y_val,
                n_classes,
                seed,
            );
            let pred = probe.predict(x_test.view());
            let m = confusion(&y_test, &pred, n_classes);
            let scores = probe.scores(x_test.view());
            (
                macro_f1(&m),
                micro_f1(&m),
                auc_ovr_macro(&y_test, scores.view()),
            )
        })
        .collect();

    let mac: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    let mic: Vec<f64> = metrics.iter().map(|m| m.1).collect();
    let auc: Vec<f64> = metrics.iter().map(|m| m.2).collect();
    Ok(ClassificationReport {
        split: split_name.to_string(),
        macro_f1: stat(&mac),
        micro_f1: stat(&mic),
        auc: stat(&auc),
        runs: seeds.len(),
    })
}
