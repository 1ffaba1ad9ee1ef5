use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pdiff_core::codec::TargetKind;
use pdiff_core::dataset::{generate_dataset, load_split, split_and_save, DatasetManifest, Sample, Split};
use pdiff_core::metrics::{columns, MetricReport};
use pdiff_core::paradigm::Paradigm;
use pdiff_core::raster::{read_tensor, write_tensor};
use pdiff_core::sampler::InferenceConfig;
use pdiff_core::schedule::ScheduleKind;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::{
    abs_error_map, encode_pairs, evaluate, fit_codecs, image_name, millis, predict, prediction_path, train_model, write_file,
    write_predictions, Codecs, Model, Prediction,
};

pub const INFERENCE_FILE: &str = "inference.csv";
pub const ABLATE_FILE: &str = "ablate_beta.csv";
pub const COMPARE_FILE: &str = "paradigms.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn metrics_file(task: TargetKind) -> String {
    format!("metrics_{task}.csv")
}

/// Directories a command reads from and writes to.
#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pred: Option<PathBuf>,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    let p = p.as_deref().ok_or_else(|| CliError::config(format!("missing --{flag}")))?;
    if !p.is_dir() {
        return Err(CliError::config(format!("--{flag} {} is not a directory", p.display())));
    }
    Ok(p)
}

pub fn gen_data(cfg: &RunConfig, paths: &Paths) -> Result<DatasetManifest, CliError> {
    let res: usize = cfg.get("data.res")?;
    let samples = generate_dataset(cfg.get("data.count")?, res, res, cfg.seed()?)?;
    let manifest = split_and_save(&samples, cfg.get("data.train_frac")?, cfg.seed()?, &paths.out)?;
    cfg.write_to(&paths.out)?;
    Ok(manifest)
}

fn load_train(data: &Path) -> Result<Vec<Sample>, CliError> {
    let train = load_split(data, Split::Train)?;
    if train.is_empty() {
        return Err(CliError::config(format!("{}: empty training split", data.display())));
    }
    Ok(train)
}

/// Fits both codecs on the training split, trains the denoiser and writes the artifacts.
pub fn train(cfg: &RunConfig, paths: &Paths) -> Result<Model, CliError> {
    let data = required(&paths.data, "data")?;
    let task = cfg.task()?;
    let train = load_train(data)?;
    let codecs = fit_codecs(cfg, &train, task)?;
    let pairs = encode_pairs(&train, &codecs, task)?;
    let model = train_model(cfg, codecs, &pairs)?;
    model.save(&paths.out)?;
    cfg.write_to(&paths.out)?;
    Ok(model)
}

/// Predicts every test image. Deterministic paradigms draw no noise, so
/// their outputs do not depend on the seed.
pub fn infer(cfg: &RunConfig, paths: &Paths) -> Result<Vec<Prediction>, CliError> {
    let data = required(&paths.data, "data")?;
    let model_dir = required(&paths.model, "model")?;
    let task = cfg.task()?;
    let model = Model::load(cfg, model_dir)?;
    let test = load_split(data, Split::Test)?;
    let icfg = cfg.inference_config()?;
    let traj = paths.out.join("trajectory");
    let preds = predict(&model, &test, task, &icfg, icfg.record_trajectory.then_some(traj.as_path()))?;
    write_predictions(&paths.out, &preds, task)?;
    let mut csv = String::from("image,evaluations,n_steps,wall_clock_ms\n");
    for (i, p) in preds.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{}", image_name(i), p.evaluations, p.n_steps, millis(p.wall_clock));
    }
    write_file(&paths.out.join(INFERENCE_FILE), &csv)?;
    cfg.write_to(&paths.out)?;
    Ok(preds)
}

/// Scores `pred/` rasters against the test split.
pub fn eval(cfg: &RunConfig, paths: &Paths) -> Result<MetricReport, CliError> {
    let data = required(&paths.data, "data")?;
    let pred_dir = required(&paths.pred, "pred")?;
    let task = cfg.task()?;
    let test = load_split(data, Split::Test)?;
    let maps = (0..test.len())
        .map(|i| read_tensor(&prediction_path(pred_dir, i, task)).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<_> = maps.iter().collect();
    let report = evaluate(&refs, &test, task, &cfg.depth_eval()?, cfg.get("eval.pooled")?)?;
    report.write(&paths.out.join(metrics_file(task)))?;
    cfg.write_to(&paths.out)?;
    Ok(report)
}

/// Outcome of one configuration in a sweep or comparison.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub label: String,
    pub status: Result<(), String>,
    /// Denoiser evaluations per test image.
    pub evaluations: usize,
    pub total_evaluations: usize,
    pub wall_clock: Duration,
    /// Aggregate task metrics in [`columns`] order.
    pub metrics: Vec<f64>,
    pub report: Option<MetricReport>,
}

impl RunRow {
    fn failed(label: String, e: &CliError, width: usize) -> Self {
        Self {
            label,
            status: Err(e.message.replace([',', '\n'], ";")),
            evaluations: 0,
            total_evaluations: 0,
            wall_clock: Duration::ZERO,
            metrics: vec![f64::NAN; width],
            report: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.status.is_ok()
    }

    fn status_text(&self) -> String {
        match &self.status {
            Ok(()) => "ok".into(),
            Err(e) => format!("error: {e}"),
        }
    }

    fn metric_text(&self) -> String {
        self.metrics.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

struct Experiment {
    task: TargetKind,
    codecs: Codecs,
    pairs: Vec<pdiff_core::denoiser::LatentPair>,
    test: Vec<Sample>,
}

impl Experiment {
    fn prepare(cfg: &RunConfig, data: &Path) -> Result<Self, CliError> {
        let task = cfg.task()?;
        let train = load_train(data)?;
        let codecs = fit_codecs(cfg, &train, task)?;
        let pairs = encode_pairs(&train, &codecs, task)?;
        let test = load_split(data, Split::Test)?;
        if test.is_empty() {
            return Err(CliError::config(format!("{}: empty test split", data.display())));
        }
        Ok(Self { task, codecs, pairs, test })
    }

    fn train(&self, cfg: &RunConfig) -> Result<Model, CliError> {
        train_model(cfg, self.codecs.clone(), &self.pairs)
    }

    /// Matched inference and evaluation; heatmaps go to `heatmaps` when given.
    fn run(&self, label: &str, cfg: &RunConfig, model: &Model, icfg: &InferenceConfig, heatmaps: Option<&Path>) -> Result<RunRow, CliError> {
        let start = Instant::now();
        let preds = predict(model, &self.test, self.task, icfg, None)?;
        let wall_clock = start.elapsed();
        let maps: Vec<_> = preds.iter().map(|p| &p.map).collect();
        let report = evaluate(&maps, &self.test, self.task, &cfg.depth_eval()?, cfg.get("eval.pooled")?)?;
        if let Some(dir) = heatmaps {
            for (i, (p, s)) in preds.iter().zip(&self.test).enumerate() {
                write_tensor(&dir.join(format!("{}_abs_error.f32", image_name(i))), &abs_error_map(&p.map, s, self.task)?)?;
            }
        }
        Ok(RunRow {
            label: label.to_string(),
            status: Ok(()),
            evaluations: preds[0].evaluations,
            total_evaluations: preds.iter().map(|p| p.evaluations).sum(),
            wall_clock,
            metrics: report.aggregate(),
            report: Some(report),
        })
    }
}

/// Every sweep row must succeed at least once; otherwise the first failure is returned.
fn require_success(rows: &[RunRow], first_error: Option<CliError>) -> Result<(), CliError> {
    match first_error {
        Some(e) if !rows.iter().any(RunRow::ok) => Err(e),
        _ => Ok(()),
    }
}

/// Default `(beta_start, beta_end)` pairs of the sweep.
pub const BETA_PAIRS: [(f64, f64); 4] = [(0.00085, 0.012), (0.0034, 0.048), (0.136, 0.192), (0.544, 0.768)];

/// Trains and evaluates the blending paradigm once per beta pair and once
/// under the constant schedule.
pub fn ablate_beta(cfg: &RunConfig, paths: &Paths) -> Result<Vec<RunRow>, CliError> {
    let data = required(&paths.data, "data")?;
    let exp = Experiment::prepare(cfg, data)?;
    let cols = columns(exp.task);
    let base_kind = match cfg.raw("schedule.kind") {
        "constant_one" => ScheduleKind::ScaledLinear.as_str(),
        k => k,
    }
    .to_string();

    let mut settings: Vec<(String, String, f64, f64)> = BETA_PAIRS
        .iter()
        .map(|&(a, b)| (format!("beta_{a}_{b}"), base_kind.clone(), a, b))
        .collect();
    settings.push(("constant_one".into(), ScheduleKind::ConstantOne.as_str().into(), 1.0, 1.0));

    let mut rows = Vec::new();
    let mut first_error = None;
    for (label, kind, a, b) in &settings {
        let attempt = || -> Result<RunRow, CliError> {
            let mut c = cfg.clone();
            c.set("run.paradigm", Paradigm::DeterministicMs.as_str())?;
            c.set("schedule.kind", kind.as_str())?;
            c.set("schedule.beta_start", a.to_string())?;
            c.set("schedule.beta_end", b.to_string())?;
            let model = exp.train(&c)?;
            exp.run(label, &c, &model, &c.inference_config()?, None)
        };
        match attempt() {
            Ok(r) => rows.push(r),
            Err(e) => {
                rows.push(RunRow::failed(label.clone(), &e, cols.len()));
                first_error.get_or_insert(e.context(label));
            }
        }
    }

    let mut csv = format!("label,schedule,beta_start,beta_end,status,evaluations,wall_clock_ms,{}\n", cols.join(","));
    for (r, (_, kind, a, b)) in rows.iter().zip(&settings) {
        let _ = writeln!(
            csv,
            "{},{kind},{a},{b},{},{},{},{}",
            r.label,
            r.status_text(),
            r.total_evaluations,
            millis(r.wall_clock),
            r.metric_text()
        );
    }
    write_file(&paths.out.join(ABLATE_FILE), &csv)?;
    write_file(&paths.out.join(SUMMARY_FILE), &ordering_summary(&rows, exp.task))?;
    cfg.write_to(&paths.out)?;
    require_success(&rows, first_error)?;
    Ok(rows)
}

/// Lower is better for the first column of every task except the F-measure.
fn ordering_summary(rows: &[RunRow], task: TargetKind) -> String {
    let cols = columns(task);
    let mut out = String::new();
    for (c, name) in cols.iter().enumerate().take(2) {
        let higher_better = matches!(*name, "delta1" | "max_f_beta" | "pct_11_25");
        let mut ok: Vec<&RunRow> = rows.iter().filter(|r| r.ok() && r.metrics[c].is_finite()).collect();
        ok.sort_by(|x, y| {
            let o = x.metrics[c].total_cmp(&y.metrics[c]);
            if higher_better {
                o.reverse()
            } else {
                o
            }
        });
        let order: Vec<String> = ok.iter().map(|r| format!("{} ({})", r.label, r.metrics[c])).collect();
        let _ = writeln!(out, "{name} best to worst: {}", order.join(" > "));
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.ok()).map(|r| r.label.as_str()).collect();
    let _ = writeln!(out, "failed rows: {}", if failed.is_empty() { "none".into() } else { failed.join(" ") });
    out
}

/// Row order of the paradigm comparison.
pub const PARADIGM_ROWS: [(&str, Paradigm); 4] = [
    ("stochastic_ensemble", Paradigm::StochasticMs),
    ("stochastic_single", Paradigm::StochasticMs),
    ("deterministic_ms", Paradigm::DeterministicMs),
    ("one_step", Paradigm::OneStep),
];

/// Trains one denoiser per paradigm and runs matched inference.
///
/// The ensemble row uses `compare.ensemble` members; the others use one.
pub fn compare_paradigms(cfg: &RunConfig, paths: &Paths) -> Result<Vec<RunRow>, CliError> {
    let data = required(&paths.data, "data")?;
    let exp = Experiment::prepare(cfg, data)?;
    let cols = columns(exp.task);
    let ensemble: usize = cfg.get("compare.ensemble")?;
    let n_steps: usize = cfg.get("infer.steps")?;

    let mut rows = Vec::new();
    let mut first_error = None;
    let mut stochastic_model: Option<Model> = None;
    for (label, paradigm) in PARADIGM_ROWS {
        let attempt = |cached: &mut Option<Model>| -> Result<RunRow, CliError> {
            let mut c = cfg.clone();
            c.set("run.paradigm", paradigm.as_str())?;
            c.set("infer.ensemble", if label == "stochastic_ensemble" { ensemble } else { 1 }.to_string())?;
            let fresh;
            let model = match (paradigm, cached.as_ref()) {
                (Paradigm::StochasticMs, Some(m)) => m,
                _ => {
                    fresh = exp.train(&c)?;
                    if paradigm == Paradigm::StochasticMs {
                        &*cached.insert(fresh)
                    } else {
                        &fresh
                    }
                }
            };
            let heatmaps = paths.out.join("heatmaps").join(label);
            exp.run(label, &c, model, &c.inference_config()?, Some(&heatmaps))
        };
        match attempt(&mut stochastic_model) {
            Ok(r) => rows.push(r),
            Err(e) => {
                rows.push(RunRow::failed(label.to_string(), &e, cols.len()));
                first_error.get_or_insert(e.context(label));
            }
        }
    }

    let mut csv = format!("row,paradigm,ensemble,steps,status,evaluations,wall_clock_ms,{}\n", cols.join(","));
    for (r, (label, paradigm)) in rows.iter().zip(PARADIGM_ROWS) {
        let (m, n) = match label {
            "stochastic_ensemble" => (ensemble, n_steps),
            "one_step" => (1, 1),
            _ => (1, n_steps),
        };
        let _ = writeln!(
            csv,
            "{label},{paradigm},{m},{n},{},{},{},{}",
            r.status_text(),
            r.evaluations,
            millis(r.wall_clock),
            r.metric_text()
        );
    }
    write_file(&paths.out.join(COMPARE_FILE), &csv)?;
    cfg.write_to(&paths.out)?;
    require_success(&rows, first_error)?;
    Ok(rows)
}
