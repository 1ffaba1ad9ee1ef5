//! `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use pdiff_core::codec::TargetKind;
use pdiff_core::denoiser::{DenoiserKind, TrainConfig};
use pdiff_core::metrics::{AlignMode, DepthEvalConfig};
use pdiff_core::paradigm::Paradigm;
use pdiff_core::sampler::{CarrierSign, EnsembleSpace, InferenceConfig};
use pdiff_core::schedule::{ScheduleKind, VarianceSchedule};

use crate::error::CliError;

/// Every recognized key and its default.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("run.task", "depth"),
    ("run.paradigm", "one_step"),
    ("data.count", "100"),
    ("data.res", "64"),
    ("data.train_frac", "0.8"),
    ("schedule.kind", "scaled_linear"),
    ("schedule.steps", "1000"),
    ("schedule.beta_start", "0.00085"),
    ("schedule.beta_end", "0.012"),
    ("codec.kind", "pca"),
    ("codec.patch", "4"),
    ("codec.channels", "4"),
    ("denoiser.kind", "linear"),
    ("denoiser.buckets", "8"),
    ("denoiser.lambda", "1"),
    ("denoiser.hidden", "64"),
    ("denoiser.draws", "4"),
    ("train.epochs", "200"),
    ("train.batch_size", "16"),
    ("train.learning_rate", "0.05"),
    ("train.momentum", "0.9"),
    ("infer.steps", "10"),
    ("infer.ensemble", "1"),
    ("infer.space", "decoded"),
    ("infer.trajectory", "false"),
    ("infer.printed_sign", "false"),
    ("eval.align", "depth"),
    ("eval.delta", "1.25"),
    ("eval.pooled", "false"),
    ("compare.ensemble", "10"),
];

/// Name under which the merged configuration is written to every output directory.
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `text`. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Overlays the assignments in `text`.
    pub fn apply(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `section.key = value`, got `{raw}`", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply(&text).map_err(|e| e.context(path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !self.values.contains_key(key) {
            return Err(CliError::config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("config key `{key}` has no default"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::config(format!("`{key} = {raw}`: {e}")))
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("run.seed")
    }

    pub fn task(&self) -> Result<TargetKind, CliError> {
        self.get("run.task")
    }

    pub fn paradigm(&self) -> Result<Paradigm, CliError> {
        self.get("run.paradigm")
    }

    pub fn denoiser_kind(&self) -> Result<DenoiserKind, CliError> {
        self.get("denoiser.kind")
    }

    pub fn schedule(&self) -> Result<VarianceSchedule, CliError> {
        let kind: ScheduleKind = self.get("schedule.kind")?;
        Ok(VarianceSchedule::new(
            kind,
            self.get("schedule.steps")?,
            self.get("schedule.beta_start")?,
            self.get("schedule.beta_end")?,
        )?)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.get("train.epochs")?,
            batch_size: self.get("train.batch_size")?,
            learning_rate: self.get("train.learning_rate")?,
            momentum: self.get("train.momentum")?,
            seed: self.seed()?,
            ridge_lambda: self.get("denoiser.lambda")?,
            buckets: self.get("denoiser.buckets")?,
            hidden: self.get("denoiser.hidden")?,
            draws_per_sample: self.get("denoiser.draws")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn inference_config(&self) -> Result<InferenceConfig, CliError> {
        let cfg = InferenceConfig {
            n_steps: self.get("infer.steps")?,
            ensemble: self.get("infer.ensemble")?,
            seed: self.seed()?,
            sample_index: 0,
            record_trajectory: self.get("infer.trajectory")?,
            ensemble_space: self.get::<EnsembleSpace>("infer.space")?,
            carrier_sign: if self.get("infer.printed_sign")? {
                CarrierSign::Printed
            } else {
                CarrierSign::Corrected
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth_eval(&self) -> Result<DepthEvalConfig, CliError> {
        Ok(DepthEvalConfig {
            align: self.get::<AlignMode>("eval.align")?,
            delta_threshold: self.get("eval.delta")?,
            ..DepthEvalConfig::default()
        })
    }

    /// Parses every typed key so that bad values fail before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.task()?;
        self.paradigm()?;
        self.denoiser_kind()?;
        self.schedule()?;
        self.train_config()?;
        self.inference_config()?;
        self.depth_eval()?;
        for key in ["data.count", "data.res", "codec.patch", "codec.channels", "compare.ensemble"] {
            self.get::<usize>(key)?;
        }
        self.get::<f64>("data.train_frac")?;
        self.get::<bool>("eval.pooled")?;
        match self.raw("codec.kind") {
            "pca" | "identity" => Ok(()),
            other => Err(CliError::config(format!("unknown codec `{other}`"))),
        }
    }

    /// Writes the merged configuration to `dir/config.txt`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_text()).map_err(|e| CliError::io(&path, e))
    }
}
