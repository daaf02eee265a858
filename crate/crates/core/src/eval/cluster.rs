//! K-means clustering of embeddings and agreement metrics against the
//! ground-truth classes (NMI with arithmetic-mean normalization, ARI).

use super::EvalError;
use crate::tape::Matrix;
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const MAX_ITERS: usize = 300;
const CENTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ClusteringReport {
    pub nmi: f64,
    pub ari: f64,
    pub restarts: usize,
    pub per_restart: Vec<(f64, f64)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns per-point cluster
/// assignments.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Vec<u32>, EvalError> {
    let n = x.nrows();
    let d = x.ncols();
    if k == 0 || n < k {
        return Err(EvalError::Invalid(format!("{n} points for {k} clusters")));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    {
        let mut distinct: Vec<&Vec<f64>> = Vec::new();
        for r in &rows {
            if !distinct.iter().any(|d| *d == r) {
                distinct.push(r);
                if distinct.len() >= k {
                    break;
                }
            }
        }
        if distinct.len() < k {
            return Err(EvalError::Invalid(format!(
                "fewer than {k} distinct points"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining mass on duplicates of chosen centers; fall
            // back to the first point at positive distance or uniform
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(rows[next].clone());
        for (i, r) in rows.iter().enumerate() {
            let nd = sq_dist(r, centers.last().expect("just pushed"));
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }

    let mut assign = vec![0u32; n];
    for _ in 0..MAX_ITERS {
        for (i, r) in rows.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dist = sq_dist(r, center);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            assign[i] = best as u32;
        }
        let mut new_centers = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            let c = assign[i] as usize;
            counts[c] += 1;
            for (acc, &v) in new_centers[c].iter_mut().zip(r) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // adopt the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&rows[a], &centers[assign[a] as usize]);
                        let db = sq_dist(&rows[b], &centers[assign[b] as usize]);
                        da.partial_cmp(&db).expect("finite")
                    })
                    .expect("n >= k >= 1");
                new_centers[c] = rows[far].clone();
                assign[far] = c as u32;
            } else {
                for v in new_centers[c].iter_mut() {
                    *v /= counts[c] as f64;
                }
            }
        }
        let shift = centers
            .iter()
            .zip(&new_centers)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centers = new_centers;
        if shift < CENTER_TOL {
            break;
        }
    }
    Ok(assign)
}

fn contingency(a: &[u32], b: &[u32]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
    let ka = a.iter().max().map(|&m| m as usize + 1).unwrap_or(0);
    let kb = b.iter().max().map(|&m| m as usize + 1).unwrap_or(0);
    let mut table = vec![vec![0usize; kb]; ka];
    let mut ra = vec![0usize; ka];
    let mut rb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1;
        ra[x as usize] += 1;
        rb[y as usize] += 1;
    }
    (table, ra, rb)
}

/// Normalized mutual information with arithmetic-mean normalization:
/// I(a; b) / ((H(a) + H(b)) / 2). Two single-cluster partitions score 1;
/// zero information against a split partition scores 0.
pub fn nmi(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (table, ra, rb) = contingency(a, b);
    let h = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = h(&ra);
    let hb = h(&rb);
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij / (ra[i] as f64 / n * rb[j] as f64 / n)).ln();
            }
        }
    }
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let denom = 0.5 * (ha + hb);
    if denom == 0.0 || mi <= 0.0 {
        return 0.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

fn comb2(x: usize) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index via the pair-counting formula.
pub fn ari(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let (table, ra, rb) = contingency(a, b);
    let sum_ij: i128 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: i128 = ra.iter().map(|&c| comb2(c)).sum();
    let sum_b: i128 = rb.iter().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0 {
        return 1.0;
    }
    let expected = (sum_a as f64) * (sum_b as f64) / (total as f64);
    let max_index = 0.5 * (sum_a + sum_b) as f64;
    if (max_index - expected).abs() < f64::EPSILON {
        return if (sum_ij as f64 - expected).abs() < f64::EPSILON {
            1.0
        } else {
            0.0
        };
    }
    (sum_ij as f64 - expected) / (max_index - expected)
}

/// Runs k-means `restarts` times (k-means++ seeding, 300-iteration cap,
/// 1e-6 center-shift tolerance) and averages the agreement metrics over
/// the restarts.
pub fn cluster_eval(
    emb: ArrayView2<'_, f64>,
    labels: &[u32],
    n_classes: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusteringReport, EvalError> {
    if n_classes < 2 {
        return Err(EvalError::Invalid(format!(
            "clustering needs >= 2 classes, got {n_classes}"
        )));
    }
    if labels.len() != emb.nrows() {
        return Err(EvalError::Invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            emb.nrows()
        )));
    }
    let per_restart: Result<Vec<(f64, f64)>, EvalError> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let assign = kmeans(emb, n_classes, seed.wrapping_add(r))?;
            Ok((nmi(labels, &assign), ari(labels, &assign)))
        })
        .collect();
    let per_restart = per_restart?;
    let n = per_restart.len() as f64;
    Ok(ClusteringReport {
        nmi: per_restart.iter().map(|m| m.0).sum::<f64>() / n,
        ari: per_restart.iter().map(|m| m.1).sum::<f64>() / n,
        restarts,
        per_restart,
    })
}

/// Test helper: well-separated Gaussian-ish blobs.
pub fn blobs(n_per: usize, k: usize, d: usize, seed: u64) -> (Matrix, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per * k;
    let mut x = Matrix::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        for i in 0..n_per {
            let row = c * n_per + i;
            for j in 0..d {
                let center = if j == c % d { 8.0 * (c / d + 1) as f64 } else { 0.0 };
                x[(row, j)] = center + rng.random::<f64>() - 0.5;
            }
            labels.push(c as u32);
        }
    }
    (x, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_partitions_score_one() {
        let labels = vec![0u32, 0, 1, 1, 2, 2];
        assert_eq!(nmi(&labels, &labels), 1.0);
        assert_eq!(ari(&labels, &labels), 1.0);
    }

    #[test]
    fn metrics_invariant_to_label_permutation() {
        let a = vec![0u32, 0, 1, 1, 2, 2, 0, 1];
        let b: Vec<u32> = a.iter().map(|&c| (c + 1) % 3).collect();
        assert!((nmi(&a, &b) - 1.0).abs() < 1e-12);
        assert!((ari(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_permutation_null_has_near_zero_ari() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 1000;
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..4u32)).collect();
        let mut sum = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let mut shuffled = labels.clone();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            sum += ari(&labels, &shuffled);
        }
        let mean = sum / trials as f64;
        assert!(mean.abs() < 0.02, "mean ARI under the null was {mean}");
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let (x, labels) = blobs(40, 3, 6, 3);
        let report = cluster_eval(x.view(), &labels, 3, 10, 0).unwrap();
        assert!(report.nmi > 0.95, "NMI {}", report.nmi);
        assert!(report.ari > 0.95, "ARI {}", report.ari);
    }

    #[test]
    fn too_few_distinct_points_is_an_error() {
        let x = Matrix::zeros((5, 2));
        assert!(matches!(
            kmeans(x.view(), 2, 0),
            Err(EvalError::Invalid(_))
        ));
    }

    #[test]
    fn cluster_eval_is_deterministic() {
        let (x, labels) = blobs(20, 3, 4, 9);
        let a = cluster_eval(x.view(), &labels, 3, 10, 5).unwrap();
        let b = cluster_eval(x.view(), &labels, 3, 10, 5).unwrap();
        assert_eq!(a.per_restart, b.per_restart);
    }

    #[test]
    fn nmi_degenerate_cases() {
        // one partition trivial, the other split: zero information
        let a = vec![0u32; 6];
        let b = vec![0u32, 1, 0, 1, 0, 1];
        assert_eq!(nmi(&a, &b), 0.0);
        // both trivial: identical partitions
        assert_eq!(nmi(&a, &a), 1.0);
    }
}
