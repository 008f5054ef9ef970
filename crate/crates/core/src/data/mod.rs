//! Dataset ingestion, covariates, training windows and the pipes simulator.

mod covariates;
mod dataset;
mod pipes;

use rand::Rng;

use crate::error::{Error, Result};

pub use covariates::{embedding_width, CovariateBuilder, CovariateSpec};
pub use dataset::{parse_timestamp, Domain, Frequency, SeriesDataset};
pub use pipes::{pipes_dataset, simulate_pipes, NoiseReading, PipesConfig, PipesMode};

/// Uniformly random start offset of a length-`window` slice of a series of
/// length `total`.
pub fn sample_window(total: usize, window: usize, rng: &mut impl Rng) -> Result<usize> {
    if window == 0 || window > total {
        return Err(Error::InsufficientLength(format!(
            "window of {window} steps from a series of {total}"
        )));
    }
    Ok(if window == total {
        0
    } else {
        rng.random_range(0..=total - window)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_window_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_window(12, 12, &mut rng).unwrap(), 0);
        assert!(sample_window(12, 13, &mut rng).is_err());
    }

    #[test]
    fn offsets_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            counts[sample_window(19, 10, &mut rng).unwrap()] += 1;
        }
        let p = 0.1;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn fixed_seed_fixed_windows() {
        let draw = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..20)
                .map(|_| sample_window(100, 7, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }
}
