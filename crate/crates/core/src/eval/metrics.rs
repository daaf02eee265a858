//! Classification metrics over frozen embeddings: confusion-matrix F1
//! scores and rank-based one-vs-rest AUC.

use ndarray::{Array2, ArrayView2};

/// counts[(t, p)] = how often true class t was predicted as p.
pub fn confusion(y_true: &[u32], y_pred: &[u32], n_classes: usize) -> Array2<usize> {
    assert_eq!(y_true.len(), y_pred.len());
    let mut m = Array2::zeros((n_classes, n_classes));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[(t as usize, p as usize)] += 1;
    }
    m
}

/// Unweighted mean of per-class F1 (a class with no true or predicted
/// members scores 0).
pub fn macro_f1(confusion: &Array2<usize>) -> f64 {
    let c = confusion.nrows();
    let mut sum = 0.0;
    for k in 0..c {
        let tp = confusion[(k, k)] as f64;
        let fp: f64 = (0..c).filter(|&t| t != k).map(|t| confusion[(t, k)] as f64).sum();
        let fn_: f64 = (0..c).filter(|&p| p != k).map(|p| confusion[(k, p)] as f64).sum();
        let denom = 2.0 * tp + fp + fn_;
        sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    sum / c as f64
}

/// F1 from pooled true/false positives and negatives. For single-label
/// multiclass prediction this pools to accuracy, but it is computed from
/// the pooled counts as defined.
pub fn micro_f1(confusion: &Array2<usize>) -> f64 {
    let c = confusion.nrows();
    let tp: f64 = (0..c).map(|k| confusion[(k, k)] as f64).sum();
    let total: f64 = confusion.iter().map(|&v| v as f64).sum();
    let fp = total - tp;
    let fn_ = total - tp;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

/// One-vs-rest AUC for one class from per-sample scores, using the
/// rank-statistic form with average ranks on ties.
pub fn binary_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // average ranks over tied score groups
    let mut ranks = vec![0.0f64; labels.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l)
        .map(|(_, &r)| r)
        .sum();
    let auc = (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Some(auc)
}

/// Macro average of per-class one-vs-rest AUC; classes without both a
/// positive and a negative example in `y_true` are skipped.
pub fn auc_ovr_macro(y_true: &[u32], scores: ArrayView2<'_, f64>) -> f64 {
    let n_classes = scores.ncols();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..n_classes {
        let labels: Vec<bool> = y_true.iter().map(|&t| t as usize == c).collect();
        let col: Vec<f64> = scores.column(c).to_vec();
        if let Some(auc) = binary_auc(&labels, &col) {
            sum += auc;
            counted += 1;
        }
    }
    if counted == 0 {
        0.5
    } else {
        sum / counted as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive per-class F1 straight from TP/FP/FN counting over the raw
    /// label vectors, independent of the confusion-matrix path.
    fn naive_f1s(y_true: &[u32], y_pred: &[u32], c: usize) -> (f64, f64) {
        let mut f1s = Vec::new();
        for k in 0..c as u32 {
            let tp = y_true
                .iter()
                .zip(y_pred)
                .filter(|(&t, &p)| t == k && p == k)
                .count() as f64;
            let fp = y_true
                .iter()
                .zip(y_pred)
                .filter(|(&t, &p)| t != k && p == k)
                .count() as f64;
            let fnn = y_true
                .iter()
                .zip(y_pred)
                .filter(|(&t, &p)| t == k && p != k)
                .count() as f64;
            f1s.push(if 2.0 * tp + fp + fnn == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fnn)
            });
        }
        let macro_ = f1s.iter().sum::<f64>() / c as f64;
        let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count() as f64;
        let micro = correct / y_true.len() as f64;
        (macro_, micro)
    }

    #[test]
    fn f1_matches_naive_oracle_on_random_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = 200;
            let c = 4;
            let y_true: Vec<u32> = (0..n).map(|_| rng.random_range(0..c as u32)).collect();
            let y_pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..c as u32)).collect();
            let m = confusion(&y_true, &y_pred, c);
            let (ema, emi) = naive_f1s(&y_true, &y_pred, c);
            assert!((macro_f1(&m) - ema).abs() < 1e-12);
            assert!((micro_f1(&m) - emi).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = vec![0u32, 1, 2, 0, 1, 2];
        let m = confusion(&y, &y, 3);
        assert_eq!(macro_f1(&m), 1.0);
        assert_eq!(micro_f1(&m), 1.0);
    }

    #[test]
    fn auc_perfect_and_chance() {
        let labels = vec![true, true, false, false];
        assert_eq!(binary_auc(&labels, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(binary_auc(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 0.0);
        // constant scores: every pair tied, AUC 0.5
        assert_eq!(binary_auc(&labels, &[0.5; 4]).unwrap(), 0.5);
    }

    #[test]
    fn auc_invariant_to_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<bool> = (0..100).map(|_| rng.random::<f64>() < 0.3).collect();
        let scores: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 7.0).collect();
        let a = binary_auc(&labels, &scores).unwrap();
        let b = binary_auc(&labels, &transformed).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn macro_auc_averages_over_classes() {
        let y = vec![0u32, 0, 1, 1];
        let scores = arr2(&[[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]]);
        assert_eq!(auc_ovr_macro(&y, scores.view()), 1.0);
    }
}
