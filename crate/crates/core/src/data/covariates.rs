use chrono::NaiveDateTime;

use crate::error::{Error, Result};

use super::{Frequency, SeriesDataset};

/// Embedding width for a categorical feature of the given cardinality.
pub fn embedding_width(cardinality: usize) -> usize {
    if cardinality == 0 {
        return 0;
    }
    ((cardinality as f64).powf(0.25).ceil() as usize).clamp(1, 8)
}

/// Layout of the numeric covariate vector `c_t`: calendar features, then per
/// lag the D lagged (scaled) values followed by a validity flag, then the
/// dynamic real features. Categorical embeddings are trainable and appended
/// by the model.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateSpec {
    pub freq: Frequency,
    pub dim: usize,
    pub lags: Vec<usize>,
    pub dynamic_features: usize,
    pub cardinality: usize,
    pub embedding_dim: usize,
}

impl CovariateSpec {
    pub fn for_dataset(ds: &SeriesDataset) -> Self {
        let cardinality = ds.cardinality();
        Self {
            freq: ds.freq,
            dim: ds.dim(),
            lags: ds.freq.lags().to_vec(),
            dynamic_features: ds.dynamic.len(),
            cardinality,
            embedding_dim: embedding_width(cardinality),
        }
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }

    /// Width of the numeric part built by [`CovariateBuilder::row`].
    pub fn numeric_width(&self) -> usize {
        self.freq.calendar_width() + self.lags.len() * (self.dim + 1) + self.dynamic_features
    }

    pub fn embedding_block_width(&self) -> usize {
        self.dim * self.embedding_dim
    }

    pub fn width(&self) -> usize {
        self.numeric_width() + self.embedding_block_width()
    }
}

/// Builds numeric covariate rows indexed by absolute step (0 = dataset start).
#[derive(Clone, Debug)]
pub struct CovariateBuilder {
    pub spec: CovariateSpec,
    start: NaiveDateTime,
    dynamic: Vec<Vec<f64>>,
}

impl CovariateBuilder {
    pub fn new(spec: CovariateSpec, ds: &SeriesDataset) -> Self {
        Self {
            spec,
            start: ds.start,
            dynamic: ds.dynamic.clone(),
        }
    }

    /// Last absolute step (exclusive) for which covariates exist.
    pub fn available(&self) -> Option<usize> {
        self.dynamic.first().map(Vec::len)
    }

    pub fn check_horizon(&self, end: usize) -> Result<()> {
        match self.available() {
            Some(n) if end > n => Err(Error::CovariateHorizon {
                available: n,
                required: end,
            }),
            _ => Ok(()),
        }
    }

    /// Covariates describing step `t`. `history` is time-major with `dim`
    /// columns covering absolute steps `[offset, offset + history.len() / dim)`;
    /// lag `l` reads step `t - l` and is zero with flag 0 when out of range.
    pub fn row(&self, t: usize, history: &[f64], offset: usize) -> Vec<f64> {
        let d = self.spec.dim;
        let known = offset + history.len() / d;
        let ts = self.start + self.spec.freq.step() * t as i32;
        let mut out = self.spec.freq.calendar_features(ts);
        out.reserve(self.spec.numeric_width() - out.len());
        for &l in &self.spec.lags {
            if t >= l + offset && t - l < known {
                let s = (t - l - offset) * d;
                out.extend_from_slice(&history[s..s + d]);
                out.push(1.0);
            } else {
                out.extend(std::iter::repeat_n(0.0, d + 1));
            }
        }
        for f in &self.dynamic {
            out.push(f.get(t).copied().unwrap_or(0.0));
        }
        out
    }

    /// Rows for steps `[start, end)`, flattened.
    pub fn rows(&self, start: usize, end: usize, history: &[f64], offset: usize) -> Vec<f64> {
        (start..end)
            .flat_map(|t| self.row(t, history, offset))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_timestamp, Domain};

    fn dataset(freq: Frequency, d: usize, t: usize) -> SeriesDataset {
        let values = (0..d)
            .map(|i| (0..t).map(|k| (i * 100 + k) as f64).collect())
            .collect();
        SeriesDataset::new(
            parse_timestamp("2021-03-01").unwrap(),
            freq,
            values,
            Domain::Real,
        )
        .unwrap()
    }

    #[test]
    fn embedding_widths() {
        assert_eq!(embedding_width(1), 1);
        assert_eq!(embedding_width(16), 2);
        assert_eq!(embedding_width(17), 3);
        assert_eq!(embedding_width(370), 5);
        assert_eq!(embedding_width(1_000_000), 8);
    }

    #[test]
    fn hour_zero_is_minus_half() {
        let ds = dataset(Frequency::Hourly, 1, 3);
        let b = CovariateBuilder::new(CovariateSpec::for_dataset(&ds), &ds);
        assert_eq!(b.row(0, &[], 0)[0], -0.5);
    }

    #[test]
    fn lags_are_padded_and_flagged() {
        let ds = dataset(Frequency::Daily, 2, 20);
        let spec = CovariateSpec::for_dataset(&ds);
        assert_eq!(spec.lags, vec![1, 7, 14]);
        assert_eq!(spec.numeric_width(), 1 + 3 * 3);
        let b = CovariateBuilder::new(spec, &ds);
        let hist = ds.time_major(0, 20);
        let r = b.row(8, &hist, 0);
        assert_eq!(b.row(8, &hist[2..], 1), r);
        assert_eq!(&r[1..4], &[7.0, 107.0, 1.0]);
        assert_eq!(&r[4..7], &[1.0, 101.0, 1.0]);
        assert_eq!(&r[7..10], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_timestamps_identical_covariates() {
        let ds = dataset(Frequency::Hourly, 2, 400);
        let b = CovariateBuilder::new(CovariateSpec::for_dataset(&ds), &ds);
        let hist = ds.time_major(0, 400);
        assert_eq!(
            b.rows(200, 210, &hist, 0)[..],
            b.rows(190, 220, &hist, 0)[10 * b.spec.numeric_width()..20 * b.spec.numeric_width()]
        );
    }

    #[test]
    fn dynamic_features_bound_the_horizon() {
        let mut ds = dataset(Frequency::Daily, 1, 5);
        ds.dynamic = vec![vec![0.0; 8]];
        let b = CovariateBuilder::new(CovariateSpec::for_dataset(&ds), &ds);
        assert!(b.check_horizon(8).is_ok());
        assert!(matches!(
            b.check_horizon(9),
            Err(Error::CovariateHorizon {
                available: 8,
                required: 9
            })
        ));
    }
}
