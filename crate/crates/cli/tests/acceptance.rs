//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS or FAIL line; exits non-zero on failure.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pdiff_cli::commands::{self, Paths, RunRow};
use pdiff_cli::config::RunConfig;
use pdiff_core::codec::LatentCodec;
use pdiff_core::dataset::{load_split, Split};
use pdiff_core::denoiser::{
    implied_carrier, mlp_gradient, v_target, v_target_at, Denoiser, DenoiserInput, LinearDenoiser, MlpDenoiser, OracleDenoiser,
    TrainingExample, VPredictor,
};
use pdiff_core::metrics::{depth_metrics, normal_metrics, DepthEvalConfig};
use pdiff_core::paradigm::Paradigm;
use pdiff_core::rng::{gaussian_latent, keyed_rng, Domain};
use pdiff_core::sampler::{infer_latent, initial_noise, CarrierSign, InferenceConfig};
use pdiff_core::schedule::{ScheduleKind, VarianceSchedule};
use pdiff_core::tensor::{ImageTensor, Latent, Provenance, Shape};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    check(took < budget, format!("took {took:.2?}, budget {budget:?}"))?;
    Ok(took)
}

fn latent(seed: u64, idx: u64, shape: Shape, prov: Provenance) -> Latent {
    gaussian_latent(&mut keyed_rng(seed, Domain::Init, idx, 101), shape).with_provenance(prov)
}

/// Runs the full 1000-step chain from each start with an oracle bound to it.
fn oracle_chain(paradigm: Paradigm) -> Result<(f64, f64), String> {
    let s = VarianceSchedule::default();
    let shape = Shape::new(16, 16, 4);
    let codec = LatentCodec::identity(4);
    let ab_t = s.alpha_bar(s.total_steps()).unwrap();
    let (mut worst, mut printed_best) = (0.0f64, f64::INFINITY);
    for i in 0..100u64 {
        let z_x = latent(1, i, shape, Provenance::Image);
        let z_y = latent(2, i, shape, Provenance::Label);
        let cfg = InferenceConfig {
            n_steps: 1000,
            seed: 17,
            sample_index: i,
            ..InferenceConfig::default()
        };
        let start = match paradigm {
            Paradigm::StochasticMs => initial_noise(cfg.seed, i, 0, shape),
            _ => z_x.clone(),
        };
        let oracle = OracleDenoiser::single(z_y.clone(), Some(implied_carrier(ab_t, &z_y, &start).unwrap())).unwrap();
        let r = infer_latent(paradigm, &oracle, &codec, &s, &z_x, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max(r.latent.max_abs_diff(&z_y).unwrap());
        if paradigm == Paradigm::DeterministicMs {
            let printed = InferenceConfig {
                carrier_sign: CarrierSign::Printed,
                ..cfg
            };
            let bad = infer_latent(paradigm, &oracle, &codec, &s, &z_x, &printed).map_err(|e| e.to_string())?;
            printed_best = printed_best.min(bad.latent.max_abs_diff(&z_y).unwrap());
        }
    }
    Ok((worst, printed_best))
}

fn c1_stochastic_oracle() -> Outcome {
    let t0 = Instant::now();
    let (worst, _) = oracle_chain(Paradigm::StochasticMs)?;
    check(worst <= 1e-6, format!("max abs error {worst:e}"))?;
    let took = within(t0, Duration::from_secs(30))?;
    Ok(format!("max abs error {worst:.2e} over 100 latents, {took:.2?}"))
}

fn c2_deterministic_oracle() -> Outcome {
    let (worst, printed) = oracle_chain(Paradigm::DeterministicMs)?;
    check(worst <= 1e-6, format!("max abs error {worst:e}"))?;
    check(printed > 0.1, format!("printed sign still recovers the target (error {printed:e})"))?;
    Ok(format!("max abs error {worst:.2e}; printed sign error >= {printed:.3}"))
}

fn random_denoiser(seed: u64, shape: Shape, total: usize) -> Denoiser {
    let mut rng = keyed_rng(seed, Domain::Init, 202, 0);
    if seed % 2 == 0 {
        let mut d = LinearDenoiser::zeros(shape, false, total, 3).unwrap();
        for b in 0..d.buckets() {
            let w = (0..d.in_dim() * d.out_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
            let bias = (0..d.out_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
            d.set_bucket(b, w, bias).unwrap();
        }
        Denoiser::Linear(d)
    } else {
        Denoiser::Mlp(MlpDenoiser::init(shape, false, total, 16, &mut rng).unwrap())
    }
}

fn c3_collapse() -> Outcome {
    let t0 = Instant::now();
    for i in 0..50u64 {
        let mut rng = keyed_rng(i, Domain::Init, 203, 0);
        let shape = Shape::new(rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..5));
        let total = rng.random_range(1..1001);
        let s = VarianceSchedule::new(ScheduleKind::ConstantOne, total, 1.0, 1.0).unwrap();
        let d = random_denoiser(i, shape, total);
        let codec = LatentCodec::identity(shape.channels);
        let z_x = latent(3, i, shape, Provenance::Image);
        let cfg = InferenceConfig {
            n_steps: rng.random_range(1..=total),
            ..InferenceConfig::default()
        };
        let ms = infer_latent(Paradigm::DeterministicMs, &d, &codec, &s, &z_x, &cfg).map_err(|e| e.to_string())?;
        let one = infer_latent(Paradigm::OneStep, &d, &codec, &s, &z_x, &cfg).map_err(|e| e.to_string())?;
        let same = ms.prediction.data().iter().zip(one.prediction.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        check(same, format!("pair {i}: outputs differ"))?;
    }
    let took = within(t0, Duration::from_secs(5))?;
    Ok(format!("50 pairs bitwise identical, {took:.2?}"))
}

fn c4_v_target() -> Outcome {
    let shape = Shape::new(5, 7, 3);
    for i in 0..20u64 {
        let y = latent(4, i, shape, Provenance::Label);
        let c = latent(5, i, shape, Provenance::Noise);
        let v = v_target_at(0.0, &y, &c).unwrap();
        let exact = v.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == (-b).to_bits());
        check(exact, format!("case {i}: target at alpha_bar = 0 is not -z"))?;
    }
    let s = VarianceSchedule::default();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let t = keyed_rng(6, Domain::Timestep, i, 0).random_range(1..=s.total_steps());
        let y = latent(7, i, shape, Provenance::Label);
        let carrier = latent(8, i, shape, Provenance::Noise);
        let cond = latent(9, i, shape, Provenance::Image);
        let state = s.blend_forward(t, &y, &carrier).unwrap();
        let input = DenoiserInput::new(&s, t, &state, Some(&cond)).unwrap();
        let expect = v_target(&s, t, &y, &carrier).unwrap();
        for oracle in [
            OracleDenoiser::single(y.clone(), Some(carrier.clone())).unwrap(),
            OracleDenoiser::single(y.clone(), None).unwrap(),
        ] {
            worst = worst.max(oracle.predict_v(&input).unwrap().max_abs_diff(&expect).unwrap());
        }
    }
    check(worst <= 1e-12, format!("oracle disagreement {worst:e}"))?;
    Ok(format!("alpha_bar = 0 exact on 20 cases; oracle max deviation {worst:.2e}"))
}

fn gradient_error(seed: u64) -> f64 {
    let mut rng = keyed_rng(seed, Domain::Init, 204, 0);
    let shape = Shape::new(rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3));
    let mut net = MlpDenoiser::init(shape, rng.random_bool(0.5), 100, rng.random_range(1..10), &mut rng).unwrap();
    let flat: Vec<f64> = (0..net.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_flat_parameters(&flat).unwrap();
    let batch: Vec<TrainingExample> = (0..rng.random_range(1..5))
        .map(|_| TrainingExample {
            features: (0..net.in_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            target: (0..net.out_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let analytic: Vec<f64> = mlp_gradient(&net, &refs).unwrap().1.blocks().concat();
    let h = 1e-3;
    let mut probe = net.clone();
    let mut loss_at = |i: usize, x: f64| {
        let mut p = flat.clone();
        p[i] = x;
        probe.set_flat_parameters(&p).unwrap();
        probe.batch_loss(&refs).unwrap()
    };
    let numeric: Vec<f64> = (0..flat.len()).map(|i| (loss_at(i, flat[i] + h) - loss_at(i, flat[i] - h)) / (2.0 * h)).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn c5_gradients() -> Outcome {
    let t0 = Instant::now();
    let worst = (0..32).map(gradient_error).fold(0.0, f64::max);
    check(worst <= 1e-4, format!("relative error {worst:e}"))?;
    let took = within(t0, Duration::from_secs(10))?;
    Ok(format!("32 configurations, worst relative error {worst:.2e}, {took:.2?}"))
}

fn c6_affine_invariance() -> Outcome {
    let cfg = DepthEvalConfig::default();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = keyed_rng(i, Domain::Init, 205, 0);
        let n = rng.random_range(16..256);
        let shape = Shape::new(1, n, 1);
        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..10.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| 0.2 * g + 0.5 + rng.random_range(-0.5..0.5)).collect();
        let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.85)).collect();
        let gt = ImageTensor::from_vec(shape, gt).unwrap();
        let base = depth_metrics(&ImageTensor::from_vec(shape, pred.clone()).unwrap(), &gt, &valid, &cfg).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let (a, b) = (10f64.powf(rng.random_range(-2.0..2.0)), rng.random_range(-20.0..20.0));
            let moved = ImageTensor::from_vec(shape, pred.iter().map(|p| a * p + b).collect()).unwrap();
            let m = depth_metrics(&moved, &gt, &valid, &cfg).map_err(|e| e.to_string())?;
            worst = worst.max((m.absrel - base.absrel).abs()).max((m.delta1 - base.delta1).abs());
        }
    }
    check(worst <= 1e-9, format!("metric drift {worst:e}"))?;
    Ok(format!("200 transforms, max metric drift {worst:.2e}"))
}

fn c7_rotation_field() -> Outcome {
    let n = 1000;
    let mut rng = keyed_rng(7, Domain::Init, 206, 0);
    let (mut gt, mut pred) = (Vec::new(), Vec::new());
    let unit = |v: [f64; 3]| {
        let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / l)
    };
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let (sin, cos) = 10f64.to_radians().sin_cos();
    for _ in 0..n {
        let g = unit([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.05..1.0)]);
        let tangent = unit(cross(g, unit([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])));
        gt.extend(g);
        pred.extend((0..3).map(|k| cos * g[k] + sin * tangent[k]));
    }
    let shape = Shape::new(20, 50, 3);
    let m = normal_metrics(&ImageTensor::from_vec(shape, pred).unwrap(), &ImageTensor::from_vec(shape, gt).unwrap(), &vec![true; n])
        .map_err(|e| e.to_string())?;
    for (name, v) in [("mean", m.mean), ("median", m.median), ("rmse", m.rmse)] {
        check((v - 10.0).abs() <= 1e-6, format!("{name} = {v}"))?;
    }
    check(m.pct_11_25 == 1.0, format!("pct_11_25 = {}", m.pct_11_25))?;
    Ok(format!("mean {:.9} median {:.9} rmse {:.9}, pct_11_25 = 1", m.mean, m.median, m.rmse))
}

fn config(pairs: &[(&str, &str)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in pairs {
        cfg.set(k, *v).unwrap();
    }
    cfg
}

fn paths(out: PathBuf, data: &Path) -> Paths {
    Paths {
        out,
        data: Some(data.to_path_buf()),
        model: None,
        pred: None,
    }
}

fn small_data(root: &Path, count: &str, res: &str) -> Result<PathBuf, String> {
    let dir = root.join("data");
    let cfg = config(&[("data.count", count), ("data.res", res), ("run.seed", "5")]);
    commands::gen_data(&cfg, &paths(dir.clone(), &dir)).map_err(|e| e.to_string())?;
    Ok(dir)
}

fn c8_evaluation_accounting() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = small_data(tmp.path(), "60", "32")?;
    let (m, n) = (4, 5);
    let cfg = config(&[("compare.ensemble", "4"), ("infer.steps", "5"), ("train.epochs", "20")]);
    let rows = commands::compare_paradigms(&cfg, &paths(tmp.path().join("cmp"), &data)).map_err(|e| e.to_string())?;
    let by: BTreeMap<&str, &RunRow> = rows.iter().map(|r| (r.label.as_str(), r)).collect();
    for r in &rows {
        check(r.ok(), format!("{} failed: {:?}", r.label, r.status))?;
    }
    let evals: Vec<usize> = ["stochastic_ensemble", "stochastic_single", "deterministic_ms", "one_step"]
        .iter()
        .map(|l| by.get(l).map(|r| r.evaluations).ok_or(format!("missing row {l}")))
        .collect::<Result<_, _>>()?;
    check(evals == [m * n, n, n, 1], format!("evaluations {evals:?}"))?;
    let (one, ens) = (by["one_step"].wall_clock, by["stochastic_ensemble"].wall_clock);
    check(one < ens, format!("one-step {one:?} not below ensemble {ens:?}"))?;
    Ok(format!("evaluations {evals:?} for m={m}, n={n}; wall clock one-step {one:.2?} < ensemble {ens:.2?}"))
}

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn c9_learning() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let t0 = Instant::now();
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = tmp.path().join("data");
        let base = [("data.count", "600"), ("data.res", "64"), ("data.train_frac", "0.8333333333333334")];
        commands::gen_data(&config(&base), &paths(data.clone(), &data)).map_err(|e| e.to_string())?;
        let test = load_split(&data, Split::Test).map_err(|e| e.to_string())?;
        let train_n = load_split(&data, Split::Train).map_err(|e| e.to_string())?.len();
        check((train_n, test.len()) == (500, 100), format!("split {train_n}/{}", test.len()))?;

        let run = |kind: &str| -> Result<(f64, Vec<f64>), String> {
            let dir = tmp.path().join(kind);
            let cfg = config(&[("denoiser.kind", kind), ("run.paradigm", "one_step")]);
            let model = commands::train(&cfg, &paths(dir.join("model"), &data)).map_err(|e| e.to_string())?;
            let p = Paths {
                model: Some(dir.join("model")),
                ..paths(dir.join("pred"), &data)
            };
            commands::infer(&cfg, &p).map_err(|e| e.to_string())?;
            let e = Paths {
                pred: Some(dir.join("pred")),
                ..paths(dir.join("eval"), &data)
            };
            let report = commands::eval(&cfg, &e).map_err(|e| e.to_string())?;
            Ok((report.aggregate_of("absrel").unwrap(), model.report.loss_trace))
        };
        let (linear, _) = run("linear")?;
        let (mlp, trace) = run("mlp")?;

        let baseline = test
            .iter()
            .map(|s| {
                let vals: Vec<f64> = s.raw_depth.data().iter().zip(&s.valid).filter(|(_, &v)| v).map(|(d, _)| *d).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|g| (mean - g).abs() / g).sum::<f64>() / vals.len() as f64
            })
            .sum::<f64>()
            / test.len() as f64;
        println!("    constant per-image mean baseline AbsRel {baseline:.4}");

        let ma = moving_average(&trace, 10);
        let rises = ma.windows(2).filter(|w| w[1] >= w[0]).count();
        check(ma.len() > 1 && rises == 0, format!("10-epoch moving average rises {rises} times"))?;
        check(linear <= 0.25, format!("linear AbsRel {linear:.4}"))?;
        check(mlp <= 0.15, format!("MLP AbsRel {mlp:.4}"))?;
        let took = within(t0, Duration::from_secs(600))?;
        Ok(format!("MLP AbsRel {mlp:.4}, linear {linear:.4}, loss {:.4} -> {:.4}, {took:.1?}", trace[0], trace[trace.len() - 1]))
    })
}

fn c10_beta_sweep() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = small_data(tmp.path(), "60", "32")?;
    let out = tmp.path().join("ablate");
    let rows = commands::ablate_beta(&config(&[("train.epochs", "20")]), &paths(out.clone(), &data)).map_err(|e| e.to_string())?;
    check(rows.len() == 5, format!("{} rows", rows.len()))?;
    for r in &rows {
        check(r.ok(), format!("{} failed: {:?}", r.label, r.status))?;
        check(r.metrics.iter().all(|v| v.is_finite()), format!("{} has non-finite metrics", r.label))?;
    }
    let text = fs::read_to_string(out.join(commands::ABLATE_FILE)).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    let width = lines[0].split(',').count();
    check(lines.len() == 6, format!("{} CSV lines", lines.len()))?;
    check(lines.iter().all(|l| l.split(',').count() == width), "ragged CSV")?;
    let summary = fs::read_to_string(out.join(commands::SUMMARY_FILE)).map_err(|e| e.to_string())?;
    let first = summary.lines().next().unwrap_or_default().to_string();
    Ok(format!("5 rows, {width} columns; {first}"))
}

fn pdiff(threads: &str, args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pdiff"))
        .args(args)
        .env("PD_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    Ok(out.status.code().unwrap_or(-1))
}

/// Every command against `root`, returning the exit codes.
fn full_run(root: &Path, threads: &str) -> Result<Vec<i32>, String> {
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    let (data, model, pred, eval, ablate_dir, compare_dir) = (p("data"), p("model"), p("pred"), p("eval"), p("ablate"), p("compare"));
    let small = ["--set", "train.epochs=10", "--set", "denoiser.hidden=8"];
    let mut codes = vec![pdiff(threads, &["gen-data", "--out", &data, "--count", "40", "--res", "16", "--seed", "7"])?];
    let mut train = vec!["train", "--data", &data, "--out", &model, "--paradigm", "stochastic_ms", "--denoiser", "mlp"];
    train.extend(small);
    codes.push(pdiff(threads, &train)?);
    codes.push(pdiff(
        threads,
        &["infer", "--data", &data, "--model", &model, "--out", &pred, "--steps", "5", "--ensemble", "3", "--set", "infer.trajectory=true"],
    )?);
    codes.push(pdiff(threads, &["eval", "--data", &data, "--pred", &pred, "--out", &eval])?);
    let mut ablate = vec!["ablate-beta", "--data", &data, "--out", &ablate_dir];
    ablate.extend(small);
    codes.push(pdiff(threads, &ablate)?);
    let mut compare = vec!["compare-paradigms", "--data", &data, "--out", &compare_dir, "--steps", "5", "--set", "compare.ensemble=3"];
    compare.extend(small);
    codes.push(pdiff(threads, &compare)?);
    Ok(codes)
}

/// Relative path to contents, with `wall_clock_ms` columns removed from CSVs.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let bytes = fs::read(&path).unwrap();
            let bytes = if path.extension().is_some_and(|x| x == "csv") {
                strip_timing(&String::from_utf8(bytes).unwrap()).into_bytes()
            } else {
                bytes
            };
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn strip_timing(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let keep: Vec<bool> = header.iter().map(|h| *h != "wall_clock_ms").collect();
    std::iter::once(header.join(","))
        .chain(lines.map(|l| l.split(',').zip(&keep).filter(|(_, k)| **k).map(|(v, _)| v).collect::<Vec<_>>().join(",")))
        .map(|l| l + "\n")
        .collect()
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [("1", "a"), ("8", "b"), ("8", "c")];
    let mut snaps = Vec::new();
    for (threads, name) in runs {
        let root = tmp.path().join(name);
        let codes = full_run(&root, threads)?;
        check(codes.iter().all(|&c| c == 0 || c == 6), format!("PD_THREADS={threads}: exit codes {codes:?}"))?;
        snaps.push((codes, snapshot(&root)));
    }
    let (codes, reference) = &snaps[0];
    for (i, (c, snap)) in snaps.iter().enumerate().skip(1) {
        check(c == codes, format!("run {i}: exit codes {c:?} vs {codes:?}"))?;
        check(snap.keys().eq(reference.keys()), format!("run {i}: different file sets"))?;
        for (path, bytes) in snap {
            check(bytes == &reference[path], format!("run {i}: {} differs", path.display()))?;
        }
    }
    Ok(format!("6 commands x 3 runs (PD_THREADS 1, 8, 8): {} files identical", reference.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("stochastic multi-step oracle recovers the target", c1_stochastic_oracle),
        ("deterministic multi-step oracle recovers the target, printed sign breaks it", c2_deterministic_oracle),
        ("constant schedule collapses to one-step inference", c3_collapse),
        ("v-target identities", c4_v_target),
        ("MLP gradient check", c5_gradients),
        ("affine invariance of depth metrics", c6_affine_invariance),
        ("normal metrics on a 10 degree rotation field", c7_rotation_field),
        ("paradigm comparison evaluation accounting", c8_evaluation_accounting),
        ("desk-scale learning experiment", c9_learning),
        ("beta sweep harness", c10_beta_sweep),
        ("determinism across reruns and thread counts", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
