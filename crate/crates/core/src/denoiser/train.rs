use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::paradigm::Paradigm;
use crate::rng::{gaussian_latent, keyed_rng, Domain};
use crate::schedule::{blend_at, VarianceSchedule};
use crate::tensor::{ensure_same, Latent};

use super::linear::{build_design, LinearDenoiser};
use super::mlp::{mlp_gradient, MlpDenoiser};
use super::oracle::OracleDenoiser;
use super::{bucket_range, v_target_at, Denoiser, DenoiserInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenoiserKind {
    Oracle,
    Linear,
    Mlp,
}

impl DenoiserKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DenoiserKind::Oracle => "oracle",
            DenoiserKind::Linear => "linear",
            DenoiserKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(DenoiserKind::Oracle),
            "linear" => Ok(DenoiserKind::Linear),
            "mlp" => Ok(DenoiserKind::Mlp),
            other => Err(Error::Config(format!("unknown denoiser `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial rate, decayed linearly to zero over all optimizer steps.
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub ridge_lambda: f64,
    pub buckets: usize,
    pub hidden: usize,
    /// Timesteps drawn per training pair and bucket for the closed-form fit.
    pub draws_per_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            ridge_lambda: 1.0,
            buckets: 8,
            hidden: 64,
            draws_per_sample: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train: {what}")));
        if self.epochs == 0 || self.batch_size == 0 || self.buckets == 0 || self.hidden == 0 || self.draws_per_sample == 0 {
            return bad("epochs, batch_size, buckets, hidden and draws_per_sample must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be >= 0");
        }
        Ok(())
    }
}

/// Encoded image and target of one training scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub image: Latent,
    pub target: Latent,
}

/// A feature vector and its v-target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// MLP: mean loss per epoch. Linear: training MSE per bucket.
    pub loss_trace: Vec<f64>,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub denoiser: Denoiser,
    pub report: TrainReport,
}

/// Input and v-target for `pair` under `paradigm`.
///
/// `noise` is the Gaussian carrier for the stochastic paradigm and is ignored
/// otherwise. One-step examples always use `t = 1` and `alpha_bar = 0`.
pub fn make_example(
    pair: &LatentPair,
    schedule: &VarianceSchedule,
    paradigm: Paradigm,
    t: usize,
    noise: Option<&Latent>,
) -> Result<TrainingExample> {
    ensure_same(pair.target.shape(), pair.image.shape())?;
    let (state, condition, alpha_bar, t, carrier) = match paradigm {
        Paradigm::StochasticMs => {
            let eps = noise.ok_or(Error::ConditionMismatch("stochastic examples need a noise carrier"))?;
            let ab = schedule.alpha_bar(t)?;
            (blend_at(ab, &pair.target, eps)?, Some(&pair.image), ab, t, eps)
        }
        Paradigm::DeterministicMs => {
            let ab = schedule.alpha_bar(t)?;
            (blend_at(ab, &pair.target, &pair.image)?, None, ab, t, &pair.image)
        }
        Paradigm::OneStep => (pair.image.clone(), None, 0.0, 1, &pair.image),
    };
    let input = DenoiserInput::with_alpha_bar(alpha_bar, t, &state, condition)?;
    let target = v_target_at(alpha_bar, &pair.target, carrier)?;
    Ok(TrainingExample {
        features: input.features(),
        target: target.into_vec(),
    })
}

/// Fits a denoiser to `pairs` for `paradigm`.
///
/// Multi-step paradigms sample timesteps uniformly from `[1, T]`; the
/// one-step paradigm fixes `t = 1` and the resulting denoiser has `T = 1`.
pub fn train_denoiser(
    kind: DenoiserKind,
    pairs: &[LatentPair],
    schedule: &VarianceSchedule,
    paradigm: Paradigm,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::InsufficientData("no training pairs".into()))?;
    let shape = first.target.shape();
    for p in pairs {
        ensure_same(shape, p.target.shape())?;
        ensure_same(shape, p.image.shape())?;
    }
    let total_steps = match paradigm {
        Paradigm::OneStep => 1,
        _ => schedule.total_steps(),
    };
    match kind {
        DenoiserKind::Oracle => {
            let mut oracle = OracleDenoiser::new();
            // carriers are recovered from the state, which suits every paradigm
            for p in pairs {
                oracle.push(p.target.clone(), None)?;
            }
            Ok(Trained {
                denoiser: Denoiser::Oracle(oracle),
                report: TrainReport {
                    loss_trace: Vec::new(),
                    examples: pairs.len(),
                },
            })
        }
        DenoiserKind::Linear => train_linear(pairs, schedule, paradigm, total_steps, cfg),
        DenoiserKind::Mlp => train_mlp(pairs, schedule, paradigm, total_steps, cfg),
    }
}

fn noise_for(cfg: &TrainConfig, paradigm: Paradigm, pair: &LatentPair, round: u64, index: u64) -> Option<Latent> {
    (paradigm == Paradigm::StochasticMs)
        .then(|| gaussian_latent(&mut keyed_rng(cfg.seed, Domain::Batch, round, index), pair.target.shape()))
}

fn train_linear(
    pairs: &[LatentPair],
    schedule: &VarianceSchedule,
    paradigm: Paradigm,
    total_steps: usize,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let shape = pairs[0].target.shape();
    let buckets = if paradigm == Paradigm::OneStep { 1 } else { cfg.buckets };
    let mut model = LinearDenoiser::zeros(shape, paradigm.is_conditioned(), total_steps, buckets)?;
    let draws = if paradigm == Paradigm::OneStep { 1 } else { cfg.draws_per_sample };
    let mut report = TrainReport::default();
    for b in 0..model.buckets() {
        let (lo, hi) = bucket_range(b, total_steps, model.buckets());
        let mut examples = Vec::with_capacity(pairs.len() * draws);
        for (i, pair) in pairs.iter().enumerate() {
            for d in 0..draws {
                let index = (i * draws + d) as u64;
                let t = keyed_rng(cfg.seed, Domain::Timestep, b as u64, index).random_range(lo..=hi);
                let noise = noise_for(cfg, paradigm, pair, b as u64, index);
                examples.push(make_example(pair, schedule, paradigm, t, noise.as_ref())?);
            }
        }
        let refs: Vec<&TrainingExample> = examples.iter().collect();
        let design = build_design(&refs)?;
        model.fit_bucket(b, &design, cfg.ridge_lambda)?;
        let mse = model.mse(b, &design);
        if !mse.is_finite() {
            return Err(Error::Diverged { epoch: 0, loss: mse });
        }
        report.loss_trace.push(mse);
        report.examples += examples.len();
    }
    Ok(Trained {
        denoiser: Denoiser::Linear(model),
        report,
    })
}

fn train_mlp(
    pairs: &[LatentPair],
    schedule: &VarianceSchedule,
    paradigm: Paradigm,
    total_steps: usize,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let shape = pairs[0].target.shape();
    let mut net = MlpDenoiser::init(
        shape,
        paradigm.is_conditioned(),
        total_steps,
        cfg.hidden,
        &mut keyed_rng(cfg.seed, Domain::Init, 0, 0),
    )?;
    let fixed: Option<Vec<TrainingExample>> = if paradigm == Paradigm::OneStep {
        Some(
            pairs
                .iter()
                .map(|p| make_example(p, schedule, paradigm, 1, None))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let n = pairs.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_updates = (cfg.epochs * batches_per_epoch) as f64;
    let mut vel = net.zero_gradient();
    let mut update = 0usize;
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let examples: Vec<TrainingExample> = match &fixed {
            Some(ex) => ex.clone(),
            None => pairs
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let t = keyed_rng(cfg.seed, Domain::Timestep, epoch as u64, i as u64).random_range(1..=total_steps);
                    let noise = noise_for(cfg, paradigm, p, epoch as u64, i as u64);
                    make_example(p, schedule, paradigm, t, noise.as_ref())
                })
                .collect::<Result<_>>()?,
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut keyed_rng(cfg.seed, Domain::Shuffle, epoch as u64, 0));

        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = mlp_gradient(&net, &batch)?;
            if !loss.is_finite() || loss > 1e30 {
                return Err(Error::Diverged { epoch, loss });
            }
            weighted += loss * batch.len() as f64;
            let lr = cfg.learning_rate * (1.0 - update as f64 / total_updates);
            net.momentum_step(&mut vel, &grad, lr, cfg.momentum);
            update += 1;
        }
        report.loss_trace.push(weighted / n as f64);
    }
    report.examples = n;
    Ok(Trained {
        denoiser: Denoiser::Mlp(net),
        report,
    })
}
