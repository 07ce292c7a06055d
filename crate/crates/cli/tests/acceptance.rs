//! End-to-end acceptance criteria. Everything runs inside one test so the
//! per-criterion runtime limits are measured without other tests competing
//! for the CPU. Each criterion prints one PASS/FAIL line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use dmimo_beam::cgan::GanConfig;
use dmimo_beam::dataio::apply_mask;
use dmimo_beam::evaluation::{build_report, nearest_rank, wasserstein1};
use dmimo_beam::forest::ForestParams;
use dmimo_beam::missforest::{mean_mode_init, mf_impute, MfParams};
use dmimo_beam::neuralnet::{bce_batch, smooth_l1_batch, Activation, NetParams};
use dmimo_beam::pipeline::{ModelKind, SearchOutcome};
use dmimo_beam::scenario::{generate_scenario, ScenarioConfig};
use dmimo_beam_cli::config::ExperimentConfig;
use dmimo_beam_cli::experiment::{fit_models, sweep, ExperimentData};
use dmimo_beam_cli::{cmd_evaluate, cmd_generate, cmd_train};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

/// Writes straight to stdout so the lines survive output capture.
fn announce(id: u32, name: &str, v: &Verdict, elapsed: Duration) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} [{tag}] {name}: {} ({:.1?})\n", v.detail, elapsed);
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

// ---------------------------------------------------------------------------
// 1. W1 against grid integration

/// Midpoint rule for the integral of |F_a - F_b| with `per_unit` cells per
/// unit. Samples on a 1/4 lattice fall on cell edges, so the rule is exact.
fn grid_w1(a: &[f64], b: &[f64], per_unit: usize) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let lo = sa[0].min(sb[0]);
    let hi = sa[sa.len() - 1].max(sb[sb.len() - 1]);
    let steps = ((hi - lo) * per_unit as f64).round() as usize;
    if steps == 0 {
        return 0.0;
    }
    let h = (hi - lo) / steps as f64;
    let cdf = |s: &[f64], x: f64| s.partition_point(|v| *v <= x) as f64 / s.len() as f64;
    (0..steps)
        .map(|i| {
            let x = lo + (i as f64 + 0.5) * h;
            (cdf(&sa, x) - cdf(&sb, x)).abs() * h
        })
        .sum()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut equal = 0;
    for i in 0..200 {
        let na = rng.random_range(1..=50);
        let nb = if i % 2 == 0 { na } else { rng.random_range(1..=50) };
        equal += usize::from(na == nb);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-120..=120) as f64 / 4.0).collect() };
        let (a, b) = (draw(na), draw(nb));
        let w = wasserstein1(&a, &b).unwrap();
        worst = worst.max((w - grid_w1(&a, &b, 400)).abs());
    }
    Verdict::new(worst < 1e-6, format!("200 pairs ({equal} equal-size), max |W1 - grid| = {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 2. Gradients against central differences

const H: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
enum Loss {
    SmoothL1,
    Bce,
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

fn loss_of(loss: Loss, net: &NetParams<f64>, x: &Array2<f64>, target: &Array2<f64>, select: &Array2<bool>) -> f64 {
    let out = net.predict_batch(x.view()).unwrap();
    match loss {
        Loss::SmoothL1 => smooth_l1_batch(out.view(), target.view(), select.view()).unwrap().0,
        Loss::Bce => bce_batch(out.view(), target.view()).unwrap().0,
    }
}

/// Worst relative error over each layer's parameters and over the input,
/// for one random network and batch.
fn gradient_errors(loss: Loss, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(2..=6)];
    let mut acts = Vec::new();
    for _ in 0..depth - 1 {
        widths.push(rng.random_range(2..=8));
        acts.push(if rng.random_bool(0.5) { Activation::LeakyRelu } else { Activation::Sigmoid });
    }
    widths.push(rng.random_range(1..=4));
    acts.push(match loss {
        Loss::SmoothL1 => Activation::None,
        Loss::Bce => Activation::Sigmoid,
    });
    let mut net = NetParams::new(&widths, &acts, seed).unwrap();
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let (n_in, n_out) = (widths[0], *widths.last().unwrap());
    let batch = rng.random_range(1..=5);
    let x = Array2::from_shape_fn((batch, n_in), |_| rng.random_range(-2.0..2.0));
    let target = match loss {
        Loss::SmoothL1 => Array2::from_shape_fn((batch, n_out), |_| rng.random_range(-3.0..3.0)),
        Loss::Bce => Array2::from_shape_fn((batch, n_out), |_| f64::from(rng.random_range(0..2u8))),
    };
    let mut select = Array2::from_shape_fn((batch, n_out), |_| rng.random_bool(0.7));
    select[[0, 0]] = true;

    let (out, cache) = net.forward_batch(x.view()).unwrap();
    let d_out = match loss {
        Loss::SmoothL1 => smooth_l1_batch(out.view(), target.view(), select.view()).unwrap().1,
        Loss::Bce => bce_batch(out.view(), target.view()).unwrap().1,
    };
    let (grads, d_input) = net.backward(&cache, d_out.view()).unwrap();
    let f = |n: &NetParams<f64>, x: &Array2<f64>| loss_of(loss, n, x, &target, &select);

    let mut errors = Vec::new();
    for l in 0..net.layers.len() {
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let (rows, cols) = net.layers[l].weights.dim();
        for i in 0..rows {
            for j in 0..=cols {
                let mut plus = net.clone();
                let mut minus = net.clone();
                if j < cols {
                    plus.layers_mut()[l].weights[[i, j]] += H;
                    minus.layers_mut()[l].weights[[i, j]] -= H;
                    analytic.push(grads.layers[l].weights[[i, j]]);
                } else {
                    plus.layers_mut()[l].bias[i] += H;
                    minus.layers_mut()[l].bias[i] -= H;
                    analytic.push(grads.layers[l].bias[i]);
                }
                numeric.push((f(&plus, &x) - f(&minus, &x)) / (2.0 * H));
            }
        }
        errors.push(rel_error(&analytic, &numeric));
    }
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for idx in ndarray::indices(x.dim()) {
        let mut xp = x.clone();
        xp[idx] += H;
        let mut xm = x.clone();
        xm[idx] -= H;
        numeric.push((f(&net, &xp) - f(&net, &xm)) / (2.0 * H));
        analytic.push(d_input[idx]);
    }
    errors.push(rel_error(&analytic, &numeric));
    errors
}

fn criterion_2() -> Verdict {
    let mut worst = 0.0f64;
    let mut checks = 0;
    for loss in [Loss::SmoothL1, Loss::Bce] {
        for seed in 0..10 {
            for e in gradient_errors(loss, 1000 + seed) {
                worst = worst.max(e);
                checks += 1;
            }
        }
    }
    Verdict::new(worst < 1e-4, format!("{checks} layer/input checks over 2 losses x 10 configs, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. MissForest against mean imputation

fn rmse_missing(truth: &Array2<f64>, masked: &Array2<f64>, out: &Array2<f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (idx, v) in masked.indexed_iter() {
        if v.is_nan() {
            s += (out[idx] - truth[idx]).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

fn criterion_3() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for data_seed in 1..=3u64 {
        let cfg = ScenarioConfig {
            ue_count: 2000,
            seed: data_seed,
            ..Default::default()
        };
        let ds = generate_scenario::<f64>(&cfg).unwrap();
        let width = ds.shape().len();
        let truth = Array2::from_shape_fn((ds.rows.len(), width), |(r, c)| ds.rows[r].grid[c]);
        let mut masked = truth.clone();
        for (r, row) in ds.rows.iter().enumerate() {
            let m = apply_mask(row, 0.5, dmimo_beam::seed::derive_seed(data_seed, r as u64)).unwrap();
            for c in 0..width {
                if m.mask[c] {
                    masked[[r, c]] = f64::NAN;
                }
            }
        }
        let params = MfParams {
            forest: ForestParams {
                n_trees: 4,
                mtry: Some(12),
                ..Default::default()
            },
            max_iter: 10,
            seed: data_seed,
        };
        let result = mf_impute(masked.view(), &params).unwrap();
        let mf = rmse_missing(&truth, &masked, &result.matrix);
        let mean = rmse_missing(&truth, &masked, &mean_mode_init(masked.view()).unwrap().0);
        let passes = result.diff_history.len();
        ok &= mf <= 0.8 * mean && passes <= 10;
        parts.push(format!("seed {data_seed}: mf {mf:.2} vs mean {mean:.2} dB ({:.0}% lower, {passes} passes)", 100.0 * (1.0 - mf / mean)));
    }
    Verdict::new(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 4, 5, 6, 8. The evaluation sweep

fn sweep_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.scenario.ue_count = 1500;
    c.masking.split_fraction = 0.2;
    c.masking.train_p = 0.8;
    c.masking.test_ps = vec![0.8, 0.95];
    c.ks = vec![1, 2, 4, 8, 16];
    c.models.enabled = ["rf", "mf", "cgan", "mean", "random"].iter().map(|s| s.to_string()).collect();
    c
}

struct SweepRun {
    outcomes: Vec<SearchOutcome<f64>>,
    violations: usize,
    test_rows: usize,
    elapsed: Duration,
    config: ExperimentConfig,
    models: Vec<ModelKind>,
}

fn run_sweep_once() -> SweepRun {
    let t = Instant::now();
    let config = sweep_config();
    let models = config.enabled_models().unwrap();
    let data = ExperimentData::build(&config).unwrap();
    let set = fit_models(&config, &data, &models).unwrap();
    let result = sweep(&config, &data, &set, &models).unwrap();
    SweepRun {
        outcomes: result.outcomes,
        violations: result.passthrough_violations,
        test_rows: data.test_idx.len(),
        elapsed: t.elapsed(),
        config,
        models,
    }
}

fn criterion_4(run: &SweepRun) -> Verdict {
    let report = build_report(&run.outcomes, &run.config.ks, &run.config.masking.test_ps, &run.models).unwrap();
    let mut ok = run.test_rows >= 300 && within(run.elapsed, 15 * 60);
    let mut parts = vec![format!("{} test UEs, sweep {:.0?}", run.test_rows, run.elapsed)];
    for m in [ModelKind::Rf, ModelKind::Mf, ModelKind::Cgan] {
        let w: Vec<f64> = run.config.ks.iter().map(|&k| report.cell(m, 0.95, k).unwrap().w1).collect();
        let monotone = w.windows(2).all(|p| p[1] <= p[0]);
        let halved = w[w.len() - 1] < 0.5 * w[0];
        ok &= monotone && halved;
        let series: Vec<String> = w.iter().map(|v| format!("{v:.2}")).collect();
        parts.push(format!("{m} W1 [{}] ({:.1}x)", series.join(", "), w[0] / w[w.len() - 1]));
    }
    Verdict::new(ok, parts.join("; "))
}

fn gaps(run: &SweepRun, model: ModelKind, p: f64, k: usize) -> Vec<f64> {
    run.outcomes
        .iter()
        .filter(|o| o.model == model && o.p == p && o.k == k)
        .map(|o| o.gap)
        .collect()
}

fn criterion_5(run: &SweepRun) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [ModelKind::Rf, ModelKind::Mf] {
        let g = gaps(run, m, 0.8, 16);
        let median = nearest_rank(&g, 50.0).unwrap();
        let p95 = nearest_rank(&g, 95.0).unwrap();
        ok &= median <= 5.0;
        parts.push(format!("{m} median {median:.2} dB, p95 {p95:.2} dB"));
    }
    Verdict::new(ok, format!("p = 0.8, k = 16: {}", parts.join("; ")))
}

fn criterion_6(run: &SweepRun) -> Verdict {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let rf = mean(gaps(run, ModelKind::Rf, 0.95, 16));
    let random = mean(gaps(run, ModelKind::Random, 0.95, 16));
    Verdict::new(rf < random, format!("p = 0.95, k = 16: rf mean gap {rf:.2} dB vs random {random:.2} dB"))
}

fn criterion_8(run: &SweepRun) -> Verdict {
    let negative = run.outcomes.iter().filter(|o| o.gap < 0.0).count();
    let mut by_series: BTreeMap<(usize, ModelKind, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for o in &run.outcomes {
        by_series.entry((o.ue_id, o.model, o.p.to_bits())).or_default().push((o.k, o.gap));
    }
    let mut rising = 0;
    for series in by_series.values_mut() {
        series.sort_by_key(|(k, _)| *k);
        rising += series.windows(2).filter(|w| w[1].1 > w[0].1).count();
    }
    let ok = negative == 0 && rising == 0 && run.violations == 0;
    Verdict::new(
        ok,
        format!(
            "{} outcomes: {negative} negative gaps, {rising} gap increases in k, {} passthrough violations",
            run.outcomes.len(),
            run.violations
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Architecture

fn criterion_7() -> Verdict {
    let cfg = GanConfig::default();
    let width = ScenarioConfig::default().shape().len();
    let gen = cfg.new_generator::<f64>(width, 0).unwrap();
    let disc = cfg.new_discriminator::<f64>(width, 0).unwrap();
    // Generator input: latent 100 + condition 320 + mask 320.
    let gen_expected = (740 * 128 + 128) + (128 * 256 + 256) + (256 * 256 + 256) + (256 * 128 + 128) + (128 * 320 + 320);
    // Discriminator input: completed grid 320 + mask 320 + condition 320.
    let disc_expected = (960 * 64 + 64) + 2 * (64 * 64 + 64) + (64 + 1);
    let (g, d) = (gen.param_count(), disc.param_count());
    Verdict::new(
        g == gen_expected && d == disc_expected,
        format!("generator {g} (closed form {gen_expected}), discriminator {d} (closed form {disc_expected})"),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism of generate -> train(rf) -> evaluate

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_9() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let mut config = ExperimentConfig::parse(
            "ks = [1, 2, 4, 8, 16]\n\
             [scenario]\nue_count = 200\n\
             [masking]\ntest_ps = [0.8, 0.95]\n\
             [models]\nenabled = [\"rf\", \"random\"]\n\
             [models.rf]\nn_trees = 5\n",
        )
        .unwrap();
        config.output_dir = root.path().join(run);
        cmd_generate(&config).unwrap();
        cmd_train(&config, Some(ModelKind::Rf)).unwrap();
        cmd_evaluate(&config, None).unwrap();
        let mut files = read_dir_bytes(&config.report_dir());
        files.insert("outcomes.csv".into(), std::fs::read(config.outcomes_path()).unwrap());
        reports.push(files);
    }
    let same = reports[0] == reports[1];
    Verdict::new(same && !reports[0].is_empty(), format!("{} files compared, byte-identical: {same}", reports[0].len()))
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    let mut record = |id: u32, name: &str, v: Verdict, elapsed: Duration| {
        announce(id, name, &v, elapsed);
        if !v.pass {
            failed.push(id);
        }
    };

    let t = Instant::now();
    let v = criterion_1();
    let e = t.elapsed();
    record(1, "W1 matches grid integration", Verdict::new(v.pass && within(e, 5), v.detail), e);

    let t = Instant::now();
    let v = criterion_2();
    let e = t.elapsed();
    record(2, "gradients match finite differences", Verdict::new(v.pass && within(e, 10), v.detail), e);

    let t = Instant::now();
    let v = criterion_3();
    let e = t.elapsed();
    record(3, "MissForest beats mean imputation by 20%", Verdict::new(v.pass && within(e, 5 * 60), v.detail), e);

    let run = run_sweep_once();
    record(4, "top-k W1 monotone and halved at p = 0.95", criterion_4(&run), run.elapsed);
    record(5, "median gap at most 5 dB at p = 0.8, k = 16", criterion_5(&run), run.elapsed);
    record(6, "directed search beats random at k = 16", criterion_6(&run), run.elapsed);

    let t = Instant::now();
    record(7, "c-GAN parameter counts", criterion_7(), t.elapsed());

    record(8, "pipeline invariants over the sweep", criterion_8(&run), run.elapsed);

    let t = Instant::now();
    let v = criterion_9();
    record(9, "generate, train and evaluate are deterministic", v, t.elapsed());

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
