use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};

use super::{parse_timestamp, Domain, Frequency, SeriesDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipesMode {
    /// Every step is an independent draw of the whole system.
    Static,
    /// Flow moves one pipe per step: S1 and S2 split the previous S0, S3
    /// collects the previous S1 and S2.
    Propagating,
}

/// How the second argument of the noise distribution N(0, q) is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseReading {
    Variance,
    StdDev,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipesConfig {
    pub mode: PipesMode,
    pub noise: NoiseReading,
    pub noise_param: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub offset: f64,
    pub beta: f64,
}

impl Default for PipesConfig {
    fn default() -> Self {
        Self {
            mode: PipesMode::Propagating,
            noise: NoiseReading::Variance,
            noise_param: 0.1,
            gamma_shape: 1.0,
            gamma_scale: 0.2,
            offset: 3.0,
            beta: 0.5,
        }
    }
}

impl PipesConfig {
    pub fn noise_sd(&self) -> f64 {
        match self.noise {
            NoiseReading::Variance => self.noise_param.sqrt(),
            NoiseReading::StdDev => self.noise_param,
        }
    }
}

/// Simulate `n` steps of the four-pipe system; returns `[S0, S1, S2, S3]`.
///
/// `S0 = X + offset`, `X ~ Gamma(shape, scale)`, `V1, V2 ~ Beta(b, b)`,
/// `Si = Vi / (V1 + V2) * S0 + ei` for i = 1, 2 and `S3 = S1 + S2 + e3`.
pub fn simulate_pipes(n: usize, cfg: &PipesConfig, rng: &mut impl Rng) -> Result<[Vec<f64>; 4]> {
    if n == 0 {
        return Err(Error::Empty(
            "pipes simulation needs at least one step".into(),
        ));
    }
    let gamma = Gamma::new(cfg.gamma_shape, cfg.gamma_scale)
        .map_err(|e| Error::Config(format!("gamma: {e}")))?;
    let beta = Beta::new(cfg.beta, cfg.beta).map_err(|e| Error::Config(format!("beta: {e}")))?;
    let noise =
        Normal::new(0.0, cfg.noise_sd()).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut s: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for t in 0..n {
        let s0 = gamma.sample(rng) + cfg.offset;
        let v1: f64 = beta.sample(rng);
        let v2: f64 = beta.sample(rng);
        let w = v1 / (v1 + v2);
        let (e1, e2, e3) = (noise.sample(rng), noise.sample(rng), noise.sample(rng));
        let (src0, src12) = match cfg.mode {
            PipesMode::Propagating if t > 0 => (s[0][t - 1], s[1][t - 1] + s[2][t - 1]),
            _ => (s0, f64::NAN),
        };
        let s1 = w * src0 + e1;
        let s2 = (1.0 - w) * src0 + e2;
        let s3 = if src12.is_nan() { s1 + s2 } else { src12 } + e3;
        s[0].push(s0);
        s[1].push(s1);
        s[2].push(s2);
        s[3].push(s3);
    }
    Ok(s)
}

/// Pipes data as a daily dataset starting 2000-01-01.
pub fn pipes_dataset(n: usize, cfg: &PipesConfig, rng: &mut impl Rng) -> Result<SeriesDataset> {
    let series = simulate_pipes(n, cfg, rng)?;
    SeriesDataset::new(
        parse_timestamp("2000-01-01").expect("valid literal"),
        Frequency::Daily,
        series.to_vec(),
        Domain::Real,
    )
}
