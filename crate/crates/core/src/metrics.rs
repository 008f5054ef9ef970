//! Probabilistic and point forecast metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::forecaster::ForecastSamples;
use crate::par::{map_indexed, Execution};
use crate::tensor::Tensor;

/// CRPS of the empirical distribution of `samples` against observation `x`,
/// computed exactly from the sorted samples:
/// `mean|X - x| - 1/(2n^2) sum_ij |X_i - X_j|`.
pub fn crps_empirical(samples: &[f64], x: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("CRPS needs at least one sample".into()));
    }
    if !x.is_finite() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CRPS input".into()));
    }
    let n = samples.len() as f64;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let abs_err = s.iter().map(|v| (v - x).abs()).sum::<f64>() / n;
    // sum_ij |X_i - X_j| = 2 sum_i (2i - n - 1) X_(i) with 1-based ranks.
    let spread = s
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - n - 1.0) * v)
        .sum::<f64>();
    Ok((abs_err - spread / (n * n)).max(0.0))
}

fn check_shapes(paths: &ForecastSamples, actuals: &Tensor) -> Result<()> {
    if paths.samples == 0 {
        return Err(Error::Empty("no sample paths".into()));
    }
    if actuals.dims() != (paths.horizon, paths.dim) {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: vec![paths.horizon, paths.dim],
            right: actuals.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-step, per-dimension marginal CRPS as `[horizon, D]`.
pub fn crps_table(paths: &ForecastSamples, actuals: &Tensor, exec: Execution) -> Result<Tensor> {
    check_shapes(paths, actuals)?;
    let (h, d) = (paths.horizon, paths.dim);
    let cells = map_indexed(h * d, exec, |k| {
        crps_empirical(&paths.marginal(k / d, k % d), actuals.get(k / d, k % d))
    });
    Ok(Tensor::matrix(
        h,
        d,
        cells.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Mean marginal CRPS over dimensions and horizon.
pub fn crps_mean(paths: &ForecastSamples, actuals: &Tensor, exec: Execution) -> Result<f64> {
    let t = crps_table(paths, actuals, exec)?;
    Ok(t.data().iter().sum::<f64>() / t.len().max(1) as f64)
}

/// CRPS of the across-dimension sum, averaged over the horizon.
pub fn crps_sum(paths: &ForecastSamples, actuals: &Tensor, exec: Execution) -> Result<f64> {
    Ok(crps_sum_steps(paths, actuals, exec)?.iter().sum::<f64>() / paths.horizon.max(1) as f64)
}

fn crps_sum_steps(paths: &ForecastSamples, actuals: &Tensor, exec: Execution) -> Result<Vec<f64>> {
    check_shapes(paths, actuals)?;
    map_indexed(paths.horizon, exec, |t| {
        crps_empirical(&paths.summed(t), actuals.row(t).iter().sum())
    })
    .into_iter()
    .collect()
}

/// Mean squared error over all entries.
pub fn mse(forecast: &Tensor, actuals: &Tensor) -> Result<f64> {
    if forecast.dims() != actuals.dims() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: forecast.shape().to_vec(),
            right: actuals.shape().to_vec(),
        });
    }
    let n = forecast.len().max(1) as f64;
    Ok(forecast
        .data()
        .iter()
        .zip(actuals.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `D x D` matrix whose `(i, j)` entry is the sample covariance of `x_t^i`
/// and `x_{t+lag}^j` over the `T - lag` valid pairs (divisor `T - lag - 1`).
pub fn cross_covariance(series: &Tensor, lag: usize) -> Result<Tensor> {
    let (t, d) = series.dims();
    if t < lag + 2 {
        return Err(Error::InsufficientLength(format!(
            "cross-covariance at lag {lag} needs more than {} steps, got {t}",
            lag + 1
        )));
    }
    let n = t - lag;
    let mean =
        |off: usize, j: usize| (0..n).map(|k| series.get(k + off, j)).sum::<f64>() / n as f64;
    let lead: Vec<f64> = (0..d).map(|i| mean(0, i)).collect();
    let lagged: Vec<f64> = (0..d).map(|j| mean(lag, j)).collect();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let s: f64 = (0..n)
                .map(|k| (series.get(k, i) - lead[i]) * (series.get(k + lag, j) - lagged[j]))
                .sum();
            out[i * d + j] = s / (n - 1) as f64;
        }
    }
    Ok(Tensor::matrix(d, d, out))
}

/// Summary metrics of one forecast against realized values.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub samples: usize,
    pub horizon: usize,
    pub dim: usize,
    pub crps: f64,
    /// CRPS summed over cells divided by the summed absolute actuals.
    pub crps_normalized: f64,
    pub crps_sum: f64,
    /// Summed CRPS of the aggregate divided by the summed absolute aggregate.
    pub crps_sum_normalized: f64,
    pub mse: f64,
    pub crps_per_dim: Vec<f64>,
    pub mse_per_dim: Vec<f64>,
}

impl EvaluationReport {
    pub fn compute(paths: &ForecastSamples, actuals: &Tensor, exec: Execution) -> Result<Self> {
        let table = crps_table(paths, actuals, exec)?;
        let sums = crps_sum_steps(paths, actuals, exec)?;
        let mean = paths.mean();
        let (h, d) = (paths.horizon, paths.dim);
        let per_dim = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            (0..d)
                .map(|j| (0..h).map(|t| f(t, j)).sum::<f64>() / h.max(1) as f64)
                .collect()
        };
        let abs_total: f64 = actuals.data().iter().map(|v| v.abs()).sum();
        let abs_sum_total: f64 = (0..h)
            .map(|t| actuals.row(t).iter().sum::<f64>().abs())
            .sum();
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        Ok(Self {
            samples: paths.samples,
            horizon: h,
            dim: d,
            crps: table.data().iter().sum::<f64>() / table.len().max(1) as f64,
            crps_normalized: ratio(table.data().iter().sum(), abs_total),
            crps_sum: sums.iter().sum::<f64>() / h.max(1) as f64,
            crps_sum_normalized: ratio(sums.iter().sum(), abs_sum_total),
            mse: mse(&mean, actuals)?,
            crps_per_dim: per_dim(&|t, j| table.get(t, j)),
            mse_per_dim: per_dim(&|t, j| (mean.get(t, j) - actuals.get(t, j)).powi(2)),
        })
    }

    /// One `key = value` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "crps = {}", self.crps);
        let _ = writeln!(s, "crps_normalized = {}", self.crps_normalized);
        let _ = writeln!(s, "crps_sum = {}", self.crps_sum);
        let _ = writeln!(s, "crps_sum_normalized = {}", self.crps_sum_normalized);
        let _ = writeln!(s, "mse = {}", self.mse);
        let _ = writeln!(s, "crps_per_dim = {}", list(&self.crps_per_dim));
        let _ = writeln!(s, "mse_per_dim = {}", list(&self.mse_per_dim));
        s
    }
}

/// Render a matrix as `key = a,b;c,d` (rows separated by `;`).
pub fn matrix_line(key: &str, m: &Tensor) -> String {
    let rows: Vec<String> = (0..m.rows())
        .map(|r| {
            m.row(r)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    format!("{key} = {}\n", rows.join(";"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        assert_eq!(crps_empirical(&[0.0, 1.0], 0.0).unwrap(), 0.25);
        assert_eq!(crps_empirical(&[0.0, 1.0], 2.0).unwrap(), 1.25);
        assert_eq!(crps_empirical(&[3.0, 3.0, 3.0], 3.0).unwrap(), 0.0);
        assert!(crps_empirical(&[], 1.0).is_err());
    }

    #[test]
    fn summed_worked_value() {
        let p = ForecastSamples::new(2, 1, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let a = Tensor::zeros(1, 2);
        assert_eq!(crps_sum(&p, &a, Execution::Serial).unwrap(), 0.5);
    }

    #[test]
    fn mse_worked_value() {
        let f = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![0.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(mse(&f, &a).unwrap(), 1.25);
        assert!(mse(&f, &Tensor::zeros(1, 2)).is_err());
    }

    #[test]
    fn shifted_copy_covariance() {
        // x2_{t+1} = x1_t.
        let x1 = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.0];
        let mut rows = Vec::new();
        for t in 0..x1.len() {
            rows.push(vec![x1[t], if t == 0 { 0.0 } else { x1[t - 1] }]);
        }
        let c = cross_covariance(&Tensor::from_rows(&rows).unwrap(), 1).unwrap();
        let head = &x1[..x1.len() - 1];
        let m = head.iter().sum::<f64>() / head.len() as f64;
        let var = head.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (head.len() - 1) as f64;
        assert!((c.get(0, 1) - var).abs() < 1e-12);
        assert!(cross_covariance(&Tensor::zeros(2, 2), 1).is_err());
    }

    #[test]
    fn report_is_zero_for_perfect_samples() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = ForecastSamples::new(3, 2, 2, a.data().repeat(3)).unwrap();
        let r = EvaluationReport::compute(&p, &a, Execution::Parallel).unwrap();
        assert_eq!((r.crps, r.crps_sum, r.mse), (0.0, 0.0, 0.0));
        let text = r.to_text();
        for key in ["crps = ", "crps_sum = ", "mse = "] {
            assert!(text.contains(key));
        }
    }
}
