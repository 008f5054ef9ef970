use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear-interpolation empirical quantile of unsorted values.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `S x horizon x D` sample paths in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSamples {
    pub samples: usize,
    pub horizon: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl ForecastSamples {
    pub fn new(samples: usize, horizon: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != samples * horizon * dim {
            return Err(Error::InvalidShape {
                shape: vec![samples, horizon, dim],
                reason: format!("{} values supplied", data.len()),
            });
        }
        Ok(Self {
            samples,
            horizon,
            dim,
            data,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, s: usize, t: usize, d: usize) -> f64 {
        self.data[(s * self.horizon + t) * self.dim + d]
    }

    /// Path `s` as a `[horizon, D]` tensor.
    pub fn path(&self, s: usize) -> Tensor {
        let n = self.horizon * self.dim;
        Tensor::matrix(
            self.horizon,
            self.dim,
            self.data[s * n..(s + 1) * n].to_vec(),
        )
    }

    /// All samples of dimension `d` at step `t`.
    pub fn marginal(&self, t: usize, d: usize) -> Vec<f64> {
        (0..self.samples).map(|s| self.get(s, t, d)).collect()
    }

    /// Sum over dimensions of each sample at step `t`.
    pub fn summed(&self, t: usize) -> Vec<f64> {
        (0..self.samples)
            .map(|s| (0..self.dim).map(|d| self.get(s, t, d)).sum())
            .collect()
    }

    /// Per-step, per-dimension empirical quantile as `[horizon, D]`.
    pub fn quantile(&self, q: f64) -> Tensor {
        let mut out = Vec::with_capacity(self.horizon * self.dim);
        for t in 0..self.horizon {
            for d in 0..self.dim {
                out.push(empirical_quantile(&self.marginal(t, d), q));
            }
        }
        Tensor::matrix(self.horizon, self.dim, out)
    }

    /// Per-step sample mean as `[horizon, D]`.
    pub fn mean(&self) -> Tensor {
        let mut out = vec![0.0; self.horizon * self.dim];
        for s in 0..self.samples {
            let n = self.horizon * self.dim;
            for (o, v) in out.iter_mut().zip(&self.data[s * n..(s + 1) * n]) {
                *o += v;
            }
        }
        let k = self.samples.max(1) as f64;
        out.iter_mut().for_each(|v| *v /= k);
        Tensor::matrix(self.horizon, self.dim, out)
    }

    /// Header of three little-endian u64 (S, horizon, D), then the values as
    /// little-endian f64 in sample, step, dimension order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.data.len());
        for n in [self.samples, self.horizon, self.dim] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::InvalidShape {
                shape: vec![bytes.len()],
                reason: "samples file shorter than its header".into(),
            });
        }
        let word = |k: usize| {
            u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes")) as usize
        };
        let (s, h, d) = (word(0), word(1), word(2));
        let n = s
            .checked_mul(h)
            .and_then(|v| v.checked_mul(d))
            .filter(|n| bytes.len() - 24 == n * 8)
            .ok_or_else(|| Error::InvalidShape {
                shape: vec![s, h, d],
                reason: format!(
                    "header does not match a payload of {} bytes",
                    bytes.len() - 24
                ),
            })?;
        let data = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect::<Vec<_>>();
        debug_assert_eq!(data.len(), n);
        Self::new(s, h, d, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Plot-ready quantile table: `step,dim,q05,q50,q95`.
    pub fn quantile_csv(&self) -> String {
        let qs = [self.quantile(0.05), self.quantile(0.5), self.quantile(0.95)];
        let mut out = String::from("step,dim,q05,q50,q95\n");
        for t in 0..self.horizon {
            for d in 0..self.dim {
                out.push_str(&format!(
                    "{t},{d},{},{},{}\n",
                    qs[0].get(t, d),
                    qs[1].get(t, d),
                    qs[2].get(t, d)
                ));
            }
        }
        out
    }
}
