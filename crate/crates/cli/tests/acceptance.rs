//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run a subset by passing criterion numbers: `cargo test -p flowcast-cli
//! --test acceptance -- 1 4`. The process exits 0 after reporting unless
//! `FLOWCAST_STRICT_ACCEPTANCE` is set, in which case any failure exits 1.

use std::path::Path;
use std::time::Instant;

use flowcast::conditioner::CellKind;
use flowcast::data::{
    parse_timestamp, pipes_dataset, Domain, Frequency, PipesConfig, SeriesDataset,
};
use flowcast::flow::{BatchNormBijection, CouplingLayer, FlowStack, Layer, MafLayer, Mode};
use flowcast::forecaster::{
    predict, train, ForecastSamples, Model, ModelConfig, ModelKind, ScaleVector, TrainConfig,
};
use flowcast::metrics::{cross_covariance, crps_empirical, crps_sum};
use flowcast::par::Execution;
use flowcast::tensor::{Graph, ParamId, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- flows

fn random_stack(
    store: &mut ParamStore,
    dim: usize,
    cond: usize,
    k: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> FlowStack {
    let mut stack = FlowStack::new(dim, cond);
    let mut bounds: Vec<ParamId> = Vec::new();
    for i in 0..k {
        let name = format!("l{i}");
        let layer = match rng.random_range(0..3) {
            0 => {
                let c = CouplingLayer::new(store, &name, dim, cond, 16, i % 2 == 1, rng).unwrap();
                bounds.push(c.scale_bound);
                Layer::Coupling(c)
            }
            1 => {
                let mut order: Vec<usize> = (0..dim).collect();
                order.shuffle(rng);
                let m = MafLayer::new(store, &name, dim, cond, 16, order, true, rng).unwrap();
                bounds.push(m.log_scale_bound);
                Layer::Maf(m)
            }
            _ => {
                let mut bn = BatchNormBijection::new(store, &name, dim);
                let mean = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
                let var = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
                bn.set_statistics(mean, var).unwrap();
                Layer::BatchNorm(bn)
            }
        };
        stack.push(layer).unwrap();
    }
    for id in stack.params() {
        let bound = bounds.contains(&id);
        for v in store.value_mut(id).data_mut() {
            *v = if bound {
                rng.random_range(0.3..1.0)
            } else {
                rng.random_range(-spread..spread)
            };
        }
    }
    stack.set_mode(Mode::Inference);
    stack
}

fn forward_row(stack: &FlowStack, store: &ParamStore, x: &[f64], h: &[f64]) -> (Vec<f64>, f64) {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::row_vector(x.to_vec()));
    let hv = (!h.is_empty()).then(|| g.constant(Tensor::row_vector(h.to_vec())));
    let pass = stack.forward(&mut g, store, xv, hv).unwrap();
    (g.value(pass.z).data().to_vec(), g.value(pass.logdet).item())
}

fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        let pivot = a[c][c];
        total += pivot.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / pivot;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    total
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_inv, mut worst_ld) = (0.0f64, 0.0f64);
    let eps = 1e-6;
    for case in 0..200 {
        let dim = [2, 3, 6][case % 3];
        let k = [1, 3, 5][(case / 3) % 3];
        let cond = 3;
        let mut store = ParamStore::new();
        let stack = random_stack(&mut store, dim, cond, k, 0.6, &mut rng);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h: Vec<f64> = (0..cond).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (z, logdet) = forward_row(&stack, &store, &x, &h);
        let back = stack
            .inverse(
                &store,
                &Tensor::row_vector(z),
                Some(&Tensor::row_vector(h.clone())),
            )
            .unwrap();
        for (a, b) in back.data().iter().zip(&x) {
            worst_inv = worst_inv.max((a - b).abs());
        }
        let mut jac = vec![vec![0.0; dim]; dim];
        for j in 0..dim {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += eps;
            xm[j] -= eps;
            let (zp, _) = forward_row(&stack, &store, &xp, &h);
            let (zm, _) = forward_row(&stack, &store, &xm, &h);
            for i in 0..dim {
                jac[i][j] = (zp[i] - zm[i]) / (2.0 * eps);
            }
        }
        worst_ld = worst_ld.max((log_abs_det(jac) - logdet).abs());
    }
    outcome(
        worst_inv < 1e-7 && worst_ld < 1e-4,
        format!("200 stacks: max |f^-1(f(x)) - x| = {worst_inv:.2e} (< 1e-7), max log-det error = {worst_ld:.2e} (< 1e-4)"),
    )
}

// ---------------------------------------------------------------- gradients

fn gaussian_dataset(dim: usize, len: usize, seed: u64) -> SeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..dim)
        .map(|d| {
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    2.0 + d as f64 + z
                })
                .collect()
        })
        .collect();
    SeriesDataset::new(
        parse_timestamp("2020-01-01").unwrap(),
        Frequency::Daily,
        values,
        Domain::Real,
    )
    .unwrap()
}

fn small_config(kind: ModelKind, ds: &SeriesDataset) -> ModelConfig {
    let mut c = ModelConfig::for_dataset(kind, ds);
    c.flow_blocks = 2;
    c.flow_hidden = 12;
    c.rnn_hidden = 8;
    c.rnn_layers = 2;
    c.cell = CellKind::Lstm;
    c.attention.d_model = 8;
    c.attention.heads = 2;
    c.attention.encoder_layers = 1;
    c.attention.decoder_layers = 1;
    c.attention.ff_width = 12;
    c.attention.dropout = 0.0;
    c.context_length = 4;
    c
}

fn gradient_probes(kind: ModelKind, probes: usize, seed: u64) -> f64 {
    let ds = gaussian_dataset(3, 40, seed);
    let mut model = Model::new(small_config(kind, &ds), ScaleVector::fit(&ds), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Move away from the initialization so no gradient is structurally tiny.
    for id in model.store.ids().collect::<Vec<_>>() {
        for v in model.store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let builder = model.covariate_builder(&ds).unwrap();
    let hist = model.scaled_history(&ds);
    let windows: Vec<_> = [0, 9, 20, 31]
        .iter()
        .map(|&s| model.make_window(&ds, &builder, &hist, s, 8, &mut rng))
        .collect();
    let loss = |m: &Model| {
        let mut g = Graph::new();
        let (l, _) = m.negative_log_likelihood(&mut g, &windows, None).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let (l, _) = model
        .negative_log_likelihood(&mut g, &windows, None)
        .unwrap();
    g.backward(l).unwrap();
    model.store.zero_grad();
    model.store.accumulate_grads(&g);
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < probes {
        let id = ids[rng.random_range(0..ids.len())];
        let n = model.store.value(id).len();
        let k = rng.random_range(0..n);
        let analytic = model.store.grad(id).data()[k];
        let orig = model.store.value(id).data()[k];
        let eps = 1e-5;
        model.store.value_mut(id).data_mut()[k] = orig + eps;
        let up = loss(&model);
        model.store.value_mut(id).data_mut()[k] = orig - eps;
        let down = loss(&model);
        model.store.value_mut(id).data_mut()[k] = orig;
        let fd = (up - down) / (2.0 * eps);
        let scale = analytic.abs().max(fd.abs());
        if scale < 1e-6 {
            // Both vanish; a relative error is meaningless here.
            continue;
        }
        worst = worst.max((analytic - fd).abs() / scale);
        done += 1;
    }
    worst
}

fn criterion_2() -> Outcome {
    let rnn = gradient_probes(ModelKind::RnnRealNvp, 50, 7);
    let maf = gradient_probes(ModelKind::RnnMaf, 50, 8);
    let att = gradient_probes(ModelKind::TransformerMaf, 50, 9);
    let worst = rnn.max(maf).max(att);
    outcome(
        worst < 1e-4,
        format!(
            "D=3, T=8, 50 probes per model: max relative error rnn-realnvp {rnn:.2e}, rnn-maf {maf:.2e}, transformer-maf {att:.2e} (< 1e-4)"
        ),
    )
}

// ---------------------------------------------------------------- density

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut store = ParamStore::new();
    let stack = random_stack(&mut store, 2, 2, 5, 0.3, &mut rng);
    let h = [0.4, -0.7];
    let n = 800;
    let (lo, hi) = (-8.0, 8.0);
    let step = (hi - lo) / n as f64;
    let mut mass = 0.0;
    for i in 0..n {
        let a = lo + step * (i as f64 + 0.5);
        let pts: Vec<f64> = (0..n)
            .flat_map(|j| [a, lo + step * (j as f64 + 0.5)])
            .collect();
        let hs: Vec<f64> = (0..n).flat_map(|_| h).collect();
        let lp = stack
            .log_prob_values(
                &store,
                &Tensor::matrix(n, 2, pts),
                Some(&Tensor::matrix(n, 2, hs)),
            )
            .unwrap();
        mass += lp.iter().map(|v| v.exp()).sum::<f64>();
    }
    mass *= step * step;
    outcome(
        (0.99..=1.01).contains(&mass),
        format!("D=2, K=5: mass over [-8, 8]^2 = {mass:.5} (within [0.99, 1.01])"),
    )
}

// ---------------------------------------------------------------- CRPS

/// Midpoint quadrature of `int (F(y) - 1{y >= x})^2 dy` on a grid refined
/// between consecutive breakpoints. Outside the breakpoints the integrand
/// vanishes.
fn crps_quadrature(samples: &[f64], x: f64, per_interval: usize) -> f64 {
    let mut pts: Vec<f64> = samples.iter().copied().chain([x]).collect();
    pts.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let h = (w[1] - w[0]) / per_interval as f64;
        for k in 0..per_interval {
            let y = w[0] + h * (k as f64 + 0.5);
            let f = samples.iter().filter(|&&s| s <= y).count() as f64 / n;
            let step = if y >= x { 1.0 } else { 0.0 };
            total += (f - step).powi(2) * h;
        }
    }
    total
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = 1 + case % 50;
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let x = rng.random_range(-6.0..6.0);
        let closed = crps_empirical(&samples, x).unwrap();
        worst = worst.max((closed - crps_quadrature(&samples, x, 8)).abs());
    }
    let a = crps_empirical(&[0.0, 1.0], 0.0).unwrap();
    let b = crps_empirical(&[0.0, 1.0], 2.0).unwrap();
    outcome(
        worst < 1e-6 && a == 0.25 && b == 1.25,
        format!("100 cases: max |closed form - quadrature| = {worst:.2e} (< 1e-6); worked values {a} and {b} (0.25, 1.25)"),
    )
}

// ---------------------------------------------------------------- pipes

/// Average over trajectories of the per-trajectory cross-covariance.
fn trajectory_cross_covariance(paths: &ForecastSamples, lag: usize) -> Tensor {
    let d = paths.dim;
    let mut acc = vec![0.0; d * d];
    for s in 0..paths.samples {
        let c = cross_covariance(&paths.path(s), lag).unwrap();
        for (a, v) in acc.iter_mut().zip(c.data()) {
            *a += v / paths.samples as f64;
        }
    }
    Tensor::matrix(d, d, acc)
}

/// The CLI simulate summary over the default 1000 steps.
fn simulated_cov12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = flowcast_cli::config::RunConfig::default();
    cfg.output_dir = tmp.path().to_path_buf();
    let out = flowcast_cli::commands::simulate(&cfg).unwrap();
    let cov: f64 = out
        .summary
        .lines()
        .find_map(|l| l.strip_prefix("cov_s1_s2 = "))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    outcome(
        cov > 0.0,
        format!("simulate summary cov_s1_s2 over 1000 steps = {cov:.4} (> 0 required; complementary shares of one source make it negative)"),
    )
}

fn criterion_5() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let ds = pipes_dataset(5000, &PipesConfig::default(), &mut rng).unwrap();
    let mut config = ModelConfig::for_dataset(ModelKind::RnnRealNvp, &ds);
    config.flow_blocks = 4;
    config.flow_hidden = 32;
    config.rnn_hidden = 32;
    config.rnn_layers = 1;
    let mut model = Model::new(config, ScaleVector::fit(&ds), 5).unwrap();
    let tc = TrainConfig {
        batch_size: 32,
        batches_per_epoch: 60,
        epochs: 10,
        learning_rate: 3e-3,
        window: 32,
        clip_norm: None,
        seed: 5,
    };
    let trace = train(&mut model, &ds, &tc, |_, _| {}).unwrap();
    let paths = predict(&model, &ds, 100, 100, 55, Execution::Parallel).unwrap();
    let c0 = trajectory_cross_covariance(&paths, 0);
    let c1 = trajectory_cross_covariance(&paths, 1);
    let cov12 = c0.get(1, 2);
    let a = outcome(
        cov12 > 0.0,
        format!(
            "Cov(S1,S2) from 100 trajectories = {cov12:.4} (> 0 required; the generating equations give about -0.92; final train NLL {:.3})",
            trace.last().map_or(f64::NAN, |e| e.mean_nll)
        ),
    );
    let structure = [(0, 1), (0, 2), (1, 3), (2, 3)];
    let mut off: Vec<f64> = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .filter(|p| !structure.contains(p))
        .map(|(i, j)| c1.get(i, j).abs())
        .collect();
    off.sort_by(f64::total_cmp);
    let median = 0.5 * (off[off.len() / 2 - 1] + off[off.len() / 2]);
    let (s01, s02) = (c1.get(0, 1), c1.get(0, 2));
    let b = outcome(
        s01 > 0.0 && s02 > 0.0 && s01 >= 2.0 * median && s02 >= 2.0 * median,
        format!("lag-1 S0->S1 = {s01:.4}, S0->S2 = {s02:.4}, median |off-structure| = {median:.4} (need > 0 and >= 2x median)"),
    );
    (a, b)
}

// ---------------------------------------------------------------- multivariate benefit

/// Ten series sharing one autoregressive latent factor plus a weekly
/// pattern; idiosyncratic noise is small next to the factor innovations.
fn factor_dataset(len: usize, seed: u64) -> SeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 10;
    let loadings: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
    let phases: Vec<f64> = (0..d)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let mut factor = 0.0;
    let mut values: Vec<Vec<f64>> = (0..d).map(|_| Vec::with_capacity(len)).collect();
    for t in 0..len {
        let eta: f64 = StandardNormal.sample(&mut rng);
        factor = 0.5 * factor + eta;
        let week = std::f64::consts::TAU * (t % 7) as f64 / 7.0;
        for i in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            values[i].push(10.0 + loadings[i] * factor + 1.5 * (week + phases[i]).sin() + 0.3 * e);
        }
    }
    SeriesDataset::new(
        parse_timestamp("2015-01-05").unwrap(),
        Frequency::Daily,
        values,
        Domain::Real,
    )
    .unwrap()
}

fn holdout_crps_sum(autoregressive: bool, seed: u64) -> f64 {
    let ds = factor_dataset(1000, 600 + seed);
    let horizon = 7;
    let origins = 5;
    let train_len = ds.len() - horizon * origins;
    let train_ds = ds.slice(0, train_len).unwrap();
    let mut config = ModelConfig::for_dataset(ModelKind::RnnMaf, &train_ds);
    config.flow_blocks = 3;
    config.flow_hidden = 48;
    config.rnn_hidden = 32;
    config.rnn_layers = 1;
    config.autoregressive = autoregressive;
    let mut model = Model::new(config, ScaleVector::fit(&train_ds), seed).unwrap();
    let tc = TrainConfig {
        batch_size: 32,
        batches_per_epoch: 40,
        epochs: 8,
        learning_rate: 3e-3,
        window: 32,
        clip_norm: None,
        seed,
    };
    train(&mut model, &train_ds, &tc, |_, _| {}).unwrap();
    let mut total = 0.0;
    for o in 0..origins {
        let start = train_len + o * horizon;
        let hist = ds.slice(0, start).unwrap();
        let paths = predict(
            &model,
            &hist,
            horizon,
            100,
            1000 + seed,
            Execution::Parallel,
        )
        .unwrap();
        let actuals = Tensor::matrix(horizon, ds.dim(), ds.time_major(start, start + horizon));
        total += crps_sum(&paths, &actuals, Execution::Parallel).unwrap();
    }
    total / origins as f64
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

fn criterion_6() -> Outcome {
    let seeds = [1, 2, 3];
    let full = seeds.map(|s| holdout_crps_sum(true, s));
    let diag = seeds.map(|s| holdout_crps_sum(false, s));
    let (mf, md) = (median3(full), median3(diag));
    let gain = 1.0 - mf / md;
    outcome(
        gain >= 0.10,
        format!(
            "D=10 factor data, 3 seeds: median CRPS_sum rnn-maf {mf:.4} vs independent-Gaussian ablation {md:.4}, {:.1}% lower (>= 10%)",
            100.0 * gain
        ),
    )
}

// ---------------------------------------------------------------- determinism

fn cli(args: &[&str]) -> i32 {
    flowcast_cli::run(std::iter::once("flowcast").chain(args.iter().copied()))
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("sim");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut codes = vec![cli(&[
        "--seed",
        "7",
        "--out-dir",
        &s(&data),
        "simulate",
        "--steps",
        "300",
    ])];
    let dataset = s(&data.join("pipes.json"));
    for run in ["a", "b"] {
        let dir = s(&root.join(run));
        codes.push(cli(&[
            "--seed",
            "11",
            "--out-dir",
            &dir,
            "train",
            "--data",
            &dataset,
            "--holdout",
            "10",
            "--kind",
            "rnn-maf",
            "--epochs",
            "2",
            "--batches-per-epoch",
            "4",
            "--batch-size",
            "8",
            "--window",
            "20",
        ]));
        let ckpt = s(&root.join(run).join("model.ckpt"));
        codes.push(cli(&[
            "--seed",
            "12",
            "--out-dir",
            &dir,
            "forecast",
            "--data",
            &dataset,
            "--checkpoint",
            &ckpt,
            "--holdout",
            "10",
            "--samples",
            "40",
        ]));
    }
    let serial_dir = s(&root.join("serial"));
    let ckpt = s(&root.join("a").join("model.ckpt"));
    codes.push(cli(&[
        "--seed",
        "12",
        "--out-dir",
        &serial_dir,
        "forecast",
        "--data",
        &dataset,
        "--checkpoint",
        &ckpt,
        "--holdout",
        "10",
        "--samples",
        "40",
        "--serial",
    ]));
    let files = ["model.ckpt", "loss.csv", "samples.bin", "quantiles.csv"];
    let identical = files.iter().all(|f| {
        let a = read(&root.join("a").join(f));
        !a.is_empty() && a == read(&root.join("b").join(f))
    });
    let serial_same = {
        let a = read(&root.join("a").join("samples.bin"));
        !a.is_empty() && a == read(&root.join("serial").join("samples.bin"))
    };
    outcome(
        codes.iter().all(|&c| c == 0) && identical && serial_same,
        format!(
            "exit codes {codes:?}; two seeded train+forecast runs byte-identical: {identical}; serial vs parallel samples identical: {serial_same}"
        ),
    )
}

// ---------------------------------------------------------------- complexity

fn counters(kind: ModelKind, t: usize) -> (u64, u64) {
    let ds = gaussian_dataset(3, 4 * t, 1);
    let mut config = small_config(kind, &ds);
    config.context_length = t / 2;
    let model = Model::new(config, ScaleVector::fit(&ds), 1).unwrap();
    let builder = model.covariate_builder(&ds).unwrap();
    let hist = model.scaled_history(&ds);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let windows = vec![model.make_window(&ds, &builder, &hist, 0, t, &mut rng)];
    let mut g = Graph::new();
    model
        .negative_log_likelihood(&mut g, &windows, None)
        .unwrap();
    (g.counters().attention_score_macs, g.counters().rnn_steps)
}

fn criterion_8() -> Outcome {
    let t = 64;
    let (att_t, _) = counters(ModelKind::TransformerMaf, t);
    let (att_2t, _) = counters(ModelKind::TransformerMaf, 2 * t);
    let (_, rnn_t) = counters(ModelKind::RnnMaf, t);
    let (_, rnn_2t) = counters(ModelKind::RnnMaf, 2 * t);
    let ra = att_2t as f64 / att_t as f64;
    let rr = rnn_2t as f64 / rnn_t as f64;
    outcome(
        (ra / 4.0 - 1.0).abs() <= 0.05 && (rr / 2.0 - 1.0).abs() <= 0.05,
        format!("T {t} -> {}: attention score MACs x{ra:.3} ({att_t} -> {att_2t}), RNN steps x{rr:.3} ({rnn_t} -> {rnn_2t})", 2 * t),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(String, Outcome, f64)> = Vec::new();
    let mut run = |label: &str, f: &dyn Fn() -> Vec<Outcome>| {
        let started = Instant::now();
        let outs = f();
        let secs = started.elapsed().as_secs_f64();
        let many = outs.len() > 1;
        for (k, o) in outs.into_iter().enumerate() {
            let name = if many {
                format!("{label}({})", (b'a' + k as u8) as char)
            } else {
                label.to_string()
            };
            let line = format!(
                "[{}] criterion {name}: {} [{secs:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            println!("{line}");
            results.push((name, o, secs));
        }
    };
    if want(1) {
        run("1 bijectivity and log-det", &|| vec![criterion_1()]);
    }
    if want(2) {
        run("2 gradient fidelity", &|| vec![criterion_2()]);
    }
    if want(3) {
        run("3 density normalization", &|| vec![criterion_3()]);
    }
    if want(4) {
        run("4 CRPS oracle", &|| vec![criterion_4()]);
    }
    if want(5) {
        run("5 pipes dependency structure", &|| {
            let (a, b) = criterion_5();
            vec![a, b, simulated_cov12()]
        });
    }
    if want(6) {
        run("6 multivariate benefit", &|| vec![criterion_6()]);
    }
    if want(7) {
        run("7 determinism", &|| vec![criterion_7()]);
    }
    if want(8) {
        run("8 complexity counters", &|| vec![criterion_8()]);
    }
    let failed = results.iter().filter(|(_, o, _)| !o.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 && std::env::var_os("FLOWCAST_STRICT_ACCEPTANCE").is_some() {
        std::process::exit(1);
    }
}
