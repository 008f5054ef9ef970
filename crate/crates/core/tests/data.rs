use flowcast::data::{
    pipes_dataset, simulate_pipes, CovariateBuilder, CovariateSpec, Domain, Frequency,
    NoiseReading, PipesConfig, PipesMode, SeriesDataset,
};
use flowcast::metrics::cross_covariance;
use flowcast::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

fn as_matrix(series: &[Vec<f64>; 4]) -> Tensor {
    let n = series[0].len();
    Tensor::matrix(
        n,
        4,
        (0..n)
            .flat_map(|t| series.iter().map(move |s| s[t]))
            .collect(),
    )
}

/// Moments of `W = V1 / (V1 + V2)` with `V1, V2 ~ Beta(b, b)`, estimated
/// directly rather than through the simulator.
fn split_variance(b: f64) -> f64 {
    let beta = Beta::new(b, b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v1: f64 = beta.sample(&mut rng);
        let v2: f64 = beta.sample(&mut rng);
        let w = v1 / (v1 + v2);
        s += w;
        s2 += w * w;
    }
    let m = s / n as f64;
    s2 / n as f64 - m * m
}

#[test]
fn propagating_pipes_covariances_follow_the_generating_equations() {
    let cfg = PipesConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = simulate_pipes(400_000, &cfg, &mut rng).unwrap();
    let m = as_matrix(&s);
    let c0 = cross_covariance(&m, 0).unwrap();
    let c1 = cross_covariance(&m, 1).unwrap();

    let var_s0 = cfg.gamma_shape * cfg.gamma_scale.powi(2);
    let mean_s0 = cfg.gamma_shape * cfg.gamma_scale + cfg.offset;
    let var_w = split_variance(cfg.beta);
    let noise = cfg.noise_sd().powi(2);
    // S1 and S2 split the same source with complementary shares, so the
    // share variance makes them strongly negatively correlated.
    let cov12 = (0.25 - var_w) * var_s0 - var_w * mean_s0 * mean_s0;
    assert!(cov12 < -0.5);
    assert!(
        (c0.get(1, 2) - cov12).abs() < 0.02,
        "{} vs {cov12}",
        c0.get(1, 2)
    );
    // Source to each branch one step later: E[W] Var(S0).
    assert!((c1.get(0, 1) - 0.5 * var_s0).abs() < 0.005);
    assert!((c1.get(0, 2) - 0.5 * var_s0).abs() < 0.005);
    // Branch to sink one step later: S1 + S2 = S0 + noise.
    assert!((c1.get(1, 3) - (0.5 * var_s0 + noise)).abs() < 0.01);
    // No reverse flow.
    assert!(c1.get(3, 1).abs() < 0.01);
}

#[test]
fn static_pipes_balance_every_step() {
    let cfg = PipesConfig {
        mode: PipesMode::Static,
        noise: NoiseReading::StdDev,
        noise_param: 0.0,
        ..PipesConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = simulate_pipes(1000, &cfg, &mut rng).unwrap();
    for t in 0..1000 {
        assert!((s[1][t] + s[2][t] - s[0][t]).abs() < 1e-12);
        assert!((s[3][t] - s[0][t]).abs() < 1e-12);
        assert!(s[0][t] >= cfg.offset);
    }
}

#[test]
fn pipes_dataset_round_trips_through_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = pipes_dataset(50, &PipesConfig::default(), &mut rng).unwrap();
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.freq, Frequency::Daily);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pipes.json");
    ds.save(&path).unwrap();
    let back = SeriesDataset::load(&path).unwrap();
    assert_eq!(back.values, ds.values);
    assert_eq!(back.start, ds.start);
}

#[test]
fn malformed_files_report_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        "{\"start\": \"2020-01-01\", \"freq\": \"D\", \"target\": [[1, 2], [3]]}\n",
    )
    .unwrap();
    let err = SeriesDataset::load(&path).unwrap_err().to_string();
    assert!(err.contains("bad.json"), "{err}");

    std::fs::write(
        &path,
        "{\"start\": \"2020-01-01\", \"freq\": \"D\", \"target\": [[1, 2]], \"colour\": 1}\n",
    )
    .unwrap();
    assert!(SeriesDataset::load(&path).is_err());
}

#[test]
fn count_data_must_be_non_negative_integers() {
    let start = flowcast::data::parse_timestamp("2020-01-01").unwrap();
    assert!(
        SeriesDataset::new(start, Frequency::Daily, vec![vec![1.0, 2.5]], Domain::Count).is_err()
    );
    assert!(SeriesDataset::new(
        start,
        Frequency::Daily,
        vec![vec![1.0, -2.0]],
        Domain::Count
    )
    .is_err());
    assert!(
        SeriesDataset::new(start, Frequency::Daily, vec![vec![1.0, 2.0]], Domain::Count).is_ok()
    );
}

#[test]
fn lag_covariates_read_absolute_history() {
    let start = flowcast::data::parse_timestamp("2021-03-01").unwrap();
    let values = vec![(0..30).map(f64::from).collect::<Vec<_>>()];
    let ds = SeriesDataset::new(start, Frequency::Daily, values, Domain::Real).unwrap();
    let spec = CovariateSpec::for_dataset(&ds);
    let builder = CovariateBuilder::new(spec.clone(), &ds);
    let history = ds.time_major(0, 30);
    let cal = Frequency::Daily.calendar_width();
    let row = builder.row(20, &history, 0);
    assert_eq!(row.len(), spec.numeric_width());
    for (k, &lag) in spec.lags.iter().enumerate() {
        let (value, flag) = (row[cal + 2 * k], row[cal + 2 * k + 1]);
        if lag <= 20 {
            assert_eq!((value, flag), ((20 - lag) as f64, 1.0), "lag {lag}");
        } else {
            assert_eq!((value, flag), (0.0, 0.0), "lag {lag}");
        }
    }
    // The same row from a history that starts later.
    let tail = ds.time_major(5, 30);
    let shifted = builder.row(20, &tail, 5);
    for (k, &lag) in spec.lags.iter().enumerate() {
        if lag <= 15 {
            assert_eq!(shifted[cal + 2 * k], row[cal + 2 * k]);
        }
    }
}
