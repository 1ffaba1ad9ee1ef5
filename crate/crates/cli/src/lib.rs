//! `pdiff`: data generation, training, inference, evaluation and the two
//! ablation reports, driven by a `section.key = value` config plus flags.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::Paths;
use crate::config::{RunConfig, CONFIG_FILE};
use crate::error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "pdiff", version, about = "Diffusion paradigms for dense perception on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic scenes and write the train/test split.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        res: Option<usize>,
    },
    /// Fit codecs and train a denoiser on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict the test split with trained artifacts.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `train`; its config.txt is the base configuration.
        #[arg(long)]
        model: PathBuf,
    },
    /// Score predictions against the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `infer`; its config.txt is the base configuration.
        #[arg(long)]
        pred: PathBuf,
    },
    /// Blending-paradigm sweep over beta pairs plus the constant schedule.
    AblateBeta {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Four-row comparison of the inference paradigms.
    CompareParadigms {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paradigm: Option<String>,
    /// Inference steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Inference ensemble size.
    #[arg(long)]
    pub ensemble: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<String>,
    #[arg(long)]
    pub beta_end: Option<String>,
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub codec: Option<String>,
    #[arg(long)]
    pub denoiser: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    /// Any other config key, as `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k, v));
            }
        };
        put("run.seed", self.seed.map(|v| v.to_string()));
        put("run.paradigm", self.paradigm.clone());
        put("infer.steps", self.steps.map(|v| v.to_string()));
        put("infer.ensemble", self.ensemble.map(|v| v.to_string()));
        put("schedule.beta_start", self.beta_start.clone());
        put("schedule.beta_end", self.beta_end.clone());
        put("schedule.kind", self.schedule.clone());
        put("codec.kind", self.codec.clone());
        put("denoiser.kind", self.denoiser.clone());
        put("run.task", self.task.clone());
        o
    }
}

/// Defaults, then the upstream artifact's config.txt, then `--config`, then flags.
fn merged_config(common: &Common, upstream: Option<&Path>, extra: &[(&'static str, String)]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = upstream {
        let path = dir.join(CONFIG_FILE);
        if path.is_file() {
            cfg.apply_file(&path)?;
        }
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for (k, v) in common.overrides().into_iter().chain(extra.iter().cloned()) {
        cfg.set(k, v)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn paths(common: &Common, data: Option<&PathBuf>, model: Option<&PathBuf>, pred: Option<&PathBuf>) -> Paths {
    Paths {
        out: common.out.clone(),
        data: data.cloned(),
        model: model.cloned(),
        pred: pred.cloned(),
    }
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::GenData { common, count, res } => {
            let mut extra = Vec::new();
            if let Some(c) = count {
                extra.push(("data.count", c.to_string()));
            }
            if let Some(r) = res {
                extra.push(("data.res", r.to_string()));
            }
            let cfg = merged_config(common, None, &extra)?;
            let m = commands::gen_data(&cfg, &paths(common, None, None, None))?;
            println!("wrote {} train / {} test scenes to {}", m.train_count, m.test_count, common.out.display());
        }
        Command::Train { common, data } => {
            let cfg = merged_config(common, None, &[])?;
            let model = commands::train(&cfg, &paths(common, Some(data), None, None))?;
            let last = model.report.loss_trace.last().copied().unwrap_or(f64::NAN);
            println!("trained {} denoiser ({}); final loss {last}", model.denoiser.kind(), model.paradigm);
        }
        Command::Infer { common, data, model } => {
            let cfg = merged_config(common, Some(model), &[])?;
            let preds = commands::infer(&cfg, &paths(common, Some(data), Some(model), None))?;
            let evals: usize = preds.iter().map(|p| p.evaluations).sum();
            println!("predicted {} images with {evals} denoiser evaluations", preds.len());
        }
        Command::Eval { common, data, pred } => {
            let cfg = merged_config(common, Some(pred), &[])?;
            let report = commands::eval(&cfg, &paths(common, Some(data), None, Some(pred)))?;
            let cols = pdiff_core::metrics::columns(report.task);
            let agg = report.aggregate();
            let line: Vec<String> = cols.iter().zip(&agg).map(|(c, v)| format!("{c}={v}")).collect();
            println!("{}: {}", report.task, line.join(" "));
            let degenerate = report.aggregate_of("degenerate").unwrap_or(0.0);
            if degenerate > 0.0 {
                eprintln!("{degenerate} images had a degenerate alignment and were excluded from the aggregate");
                return Ok(exit::EVAL_DEGENERATE);
            }
        }
        Command::AblateBeta { common, data } => {
            let cfg = merged_config(common, None, &[])?;
            let rows = commands::ablate_beta(&cfg, &paths(common, Some(data), None, None))?;
            report_rows(&rows);
        }
        Command::CompareParadigms { common, data } => {
            let cfg = merged_config(common, None, &[])?;
            let rows = commands::compare_paradigms(&cfg, &paths(common, Some(data), None, None))?;
            report_rows(&rows);
        }
    }
    Ok(exit::OK)
}

fn report_rows(rows: &[commands::RunRow]) {
    for r in rows {
        match &r.status {
            Ok(()) => println!("{}: ok, {} evaluations per image", r.label, r.evaluations),
            Err(e) => println!("{}: failed: {e}", r.label),
        }
    }
}

/// Honors `PD_THREADS` by sizing the global thread pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("PD_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

/// Parses `args`, runs the command and maps every failure to its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match configure_threads().and_then(|()| execute(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
