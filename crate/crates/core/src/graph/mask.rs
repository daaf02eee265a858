//! Feature-mask augmentation: independently zero each feature entry.
//! Never applied to the feature-similarity view's input, which always
//! consumes clean features.

use super::{DataError, FeatureMatrix};
use rand::Rng;

/// Returns a masked copy of `x`: each scalar entry is zeroed independently
/// with probability `rate`. The input is untouched. Draw order is
/// row-major, so a fixed seed reproduces the mask bitwise.
///
/// One-hot features stay symbolic: off-diagonal entries are already zero,
/// so only the n diagonal entries consume draws.
pub fn mask_features(
    x: &FeatureMatrix,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<FeatureMatrix, DataError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::Invalid(format!(
            "mask rate {rate} outside [0, 1]"
        )));
    }
    Ok(match x {
        FeatureMatrix::Dense(m) => {
            let mut out = m.clone();
            for v in out.iter_mut() {
                if rng.random::<f64>() < rate {
                    *v = 0.0;
                }
            }
            FeatureMatrix::Dense(out)
        }
        FeatureMatrix::OneHot(n) => {
            let diag = (0..*n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 })
                .collect();
            FeatureMatrix::Diagonal(diag)
        }
        FeatureMatrix::Diagonal(d) => {
            let diag = d
                .iter()
                .map(|&v| if rng.random::<f64>() < rate { 0.0 } else { v })
                .collect();
            FeatureMatrix::Diagonal(diag)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_zero_is_identity() {
        let x = FeatureMatrix::Dense(Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = mask_features(&x, 0.0, &mut rng).unwrap();
        assert_eq!(y.to_dense(), x.to_dense());
    }

    #[test]
    fn rate_one_zeroes_everything() {
        let x = FeatureMatrix::Dense(Array2::ones((5, 5)));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = mask_features(&x, 1.0, &mut rng).unwrap();
        assert_eq!(y.to_dense(), Array2::<f64>::zeros((5, 5)));
    }

    #[test]
    fn rate_out_of_range_rejected() {
        let x = FeatureMatrix::Dense(Array2::ones((2, 2)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mask_features(&x, -0.1, &mut rng).is_err());
        assert!(mask_features(&x, 1.5, &mut rng).is_err());
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let x = FeatureMatrix::Dense(Array2::from_shape_fn((20, 20), |(i, j)| {
            (i * 20 + j) as f64 * 0.1
        }));
        let a = mask_features(&x, 0.3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = mask_features(&x, 0.3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn zeroed_fraction_matches_binomial_statistics() {
        // rate 0.5 on 100x100 ones over 1000 seeds: the mean zeroed
        // fraction over 10^7 Bernoulli draws has standard error
        // sqrt(0.25 / 1e7), so a 3-sigma band around 0.5 is ~4.7e-4 wide.
        let x = FeatureMatrix::Dense(Array2::ones((100, 100)));
        let mut zeroed = 0usize;
        for seed in 0..1000u64 {
            let y = mask_features(&x, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            zeroed += y.to_dense().iter().filter(|&&v| v == 0.0).count();
        }
        let frac = zeroed as f64 / 1e7;
        let three_se = 3.0 * (0.25f64 / 1e7).sqrt();
        assert!(
            (frac - 0.5).abs() <= three_se,
            "zeroed fraction {frac} outside 0.5 +/- {three_se}"
        );
    }

    #[test]
    fn one_hot_masking_stays_diagonal() {
        let x = FeatureMatrix::OneHot(50);
        let y = mask_features(&x, 0.4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        match &y {
            FeatureMatrix::Diagonal(d) => {
                assert_eq!(d.len(), 50);
                assert!(d.iter().all(|&v| v == 0.0 || v == 1.0));
                assert!(d.iter().any(|&v| v == 0.0));
                assert!(d.iter().any(|&v| v == 1.0));
            }
            other => panic!("expected diagonal features, got {other:?}"),
        }
    }
}
