//! Steps shared by the commands: codec fitting, training, prediction and scoring.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;

use pdiff_core::codec::{fit_codec, fit_codec_masked, LatentCodec, TargetKind};
use pdiff_core::dataset::Sample;
use pdiff_core::denoiser::{train_denoiser, Denoiser, DenoiserKind, LatentPair, OracleDenoiser, TrainReport};
use pdiff_core::metrics::{depth_metrics, mask_metrics, normal_metrics, AffineAlignment, DepthEvalConfig, DepthMetrics, MetricReport, TaskMetrics};
use pdiff_core::paradigm::Paradigm;
use pdiff_core::raster::write_tensor;
use pdiff_core::sampler::{infer_latent, write_trajectory, InferenceConfig};
use pdiff_core::schedule::VarianceSchedule;
use pdiff_core::tensor::{ImageTensor, Latent, Provenance};
use pdiff_core::Error as CoreError;

use crate::config::RunConfig;
use crate::error::{exit, CliError};

pub const IMAGE_CODEC_FILE: &str = "image_codec.lcd";
pub const TARGET_CODEC_FILE: &str = "target_codec.lcd";
pub const DENOISER_FILE: &str = "denoiser.dnz";
pub const LOSS_FILE: &str = "loss.csv";

/// Image and target codecs producing latents of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Codecs {
    pub image: LatentCodec,
    pub target: LatentCodec,
}

impl Codecs {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        self.image.save(&dir.join(IMAGE_CODEC_FILE))?;
        self.target.save(&dir.join(TARGET_CODEC_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        Ok(Self {
            image: LatentCodec::load(&dir.join(IMAGE_CODEC_FILE))?,
            target: LatentCodec::load(&dir.join(TARGET_CODEC_FILE))?,
        })
    }
}

/// Valid pixels used when fitting the target codec and scoring.
fn target_valid(sample: &Sample, task: TargetKind) -> Vec<bool> {
    match task {
        TargetKind::Mask => vec![true; sample.valid.len()],
        _ => sample.valid.clone(),
    }
}

/// `codec.kind = identity` gives pass-through codecs; an RGB image paired
/// with a one-channel target is reduced to its channel mean.
pub fn fit_codecs(cfg: &RunConfig, train: &[Sample], task: TargetKind) -> Result<Codecs, CliError> {
    let kind = cfg.raw("codec.kind");
    match kind {
        "identity" => {
            let k = task.channels();
            let image = if k == 3 { LatentCodec::identity(3) } else { LatentCodec::channel_mean(3) };
            Ok(Codecs {
                image,
                target: LatentCodec::identity(k),
            })
        }
        "pca" => {
            let seed = cfg.seed()?;
            let patch: usize = cfg.get("codec.patch")?;
            let channels: usize = cfg.get("codec.channels")?;
            let rgb: Vec<ImageTensor> = train.iter().map(|s| s.rgb.clone()).collect();
            let targets: Vec<ImageTensor> = train.iter().map(|s| s.target(task)).collect::<Result<_, _>>()?;
            let valid: Vec<Vec<bool>> = train.iter().map(|s| target_valid(s, task)).collect();
            Ok(Codecs {
                image: fit_codec(&rgb, patch, channels, seed)?,
                target: fit_codec_masked(&targets, Some(&valid), patch, channels, seed)?,
            })
        }
        other => Err(CliError::config(format!("unknown codec `{other}` (expected pca or identity)"))),
    }
}

pub fn encode_pairs(samples: &[Sample], codecs: &Codecs, task: TargetKind) -> Result<Vec<LatentPair>, CliError> {
    let pairs: Result<Vec<LatentPair>, CoreError> = samples
        .par_iter()
        .map(|s| {
            Ok(LatentPair {
                image: codecs.image.encode(&s.rgb, Provenance::Image)?,
                target: codecs.target.encode(&s.target(task)?, Provenance::Label)?,
            })
        })
        .collect();
    Ok(pairs?)
}

/// Trained artifacts of one (schedule, paradigm) configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub codecs: Codecs,
    pub paradigm: Paradigm,
    pub schedule: VarianceSchedule,
    pub denoiser: Denoiser,
    pub report: TrainReport,
}

pub fn train_model(cfg: &RunConfig, codecs: Codecs, pairs: &[LatentPair]) -> Result<Model, CliError> {
    let paradigm = cfg.paradigm()?;
    let schedule = cfg.schedule()?;
    let trained = train_denoiser(cfg.denoiser_kind()?, pairs, &schedule, paradigm, &cfg.train_config()?)?;
    Ok(Model {
        codecs,
        paradigm,
        schedule,
        denoiser: trained.denoiser,
        report: trained.report,
    })
}

impl Model {
    /// Writes codecs, the denoiser (oracles have none) and the loss trace.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        self.codecs.save(dir)?;
        if self.denoiser.kind() != DenoiserKind::Oracle {
            self.denoiser.save(&dir.join(DENOISER_FILE))?;
        }
        let label = match self.denoiser.kind() {
            DenoiserKind::Mlp => "epoch",
            _ => "bucket",
        };
        let mut csv = format!("{label},loss\n");
        for (i, l) in self.report.loss_trace.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l}");
        }
        write_file(&dir.join(LOSS_FILE), &csv)
    }

    pub fn load(cfg: &RunConfig, dir: &Path) -> Result<Self, CliError> {
        let codecs = Codecs::load(dir)?;
        let denoiser = match cfg.denoiser_kind()? {
            DenoiserKind::Oracle => Denoiser::Oracle(OracleDenoiser::new()),
            _ => Denoiser::load(&dir.join(DENOISER_FILE))?,
        };
        Ok(Self {
            codecs,
            paradigm: cfg.paradigm()?,
            schedule: cfg.schedule()?,
            denoiser,
            report: TrainReport::default(),
        })
    }
}

/// One image's prediction in normalized target space.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub map: ImageTensor,
    pub evaluations: usize,
    pub n_steps: usize,
    pub wall_clock: Duration,
}

pub fn image_name(idx: usize) -> String {
    format!("{idx:05}")
}

/// Runs inference on every sample; image `i` uses `sample_index = i`.
///
/// An oracle denoiser is bound to the sample's own encoded target.
pub fn predict(
    model: &Model,
    samples: &[Sample],
    task: TargetKind,
    cfg: &InferenceConfig,
    trajectory_dir: Option<&Path>,
) -> Result<Vec<Prediction>, CliError> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let run = || -> Result<Prediction, CliError> {
                let z_x = model.codecs.image.encode(&s.rgb, Provenance::Image)?;
                let oracle;
                let denoiser = match &model.denoiser {
                    Denoiser::Oracle(_) => {
                        let z_y: Latent = model.codecs.target.encode(&s.target(task)?, Provenance::Label)?;
                        oracle = Denoiser::Oracle(OracleDenoiser::single(z_y, None)?);
                        &oracle
                    }
                    d => d,
                };
                let cfg = InferenceConfig {
                    sample_index: i as u64,
                    record_trajectory: cfg.record_trajectory && trajectory_dir.is_some(),
                    ..cfg.clone()
                };
                let r = infer_latent(model.paradigm, denoiser, &model.codecs.target, &model.schedule, &z_x, &cfg)?;
                if !r.prediction.is_finite() {
                    return Err(CliError::new(exit::NON_FINITE, "non-finite prediction"));
                }
                if let (Some(dir), Some(tr)) = (trajectory_dir, &r.trajectory) {
                    write_trajectory(&dir.join(image_name(i)), tr)?;
                }
                Ok(Prediction {
                    map: r.prediction,
                    evaluations: r.denoiser_evaluations,
                    n_steps: r.n_steps,
                    wall_clock: r.wall_clock,
                })
            };
            run().map_err(|e| e.context(format!("sample {}", image_name(i))))
        })
        .collect()
}

/// Writes `pred/{idx:05}_{task}.f32` under `dir`.
pub fn write_predictions(dir: &Path, preds: &[Prediction], task: TargetKind) -> Result<(), CliError> {
    preds.par_iter().enumerate().try_for_each(|(i, p)| {
        write_tensor(&prediction_path(dir, i, task), &p.map).map_err(CliError::from)
    })
}

pub fn prediction_path(dir: &Path, idx: usize, task: TargetKind) -> std::path::PathBuf {
    dir.join("pred").join(format!("{}_{task}.f32", image_name(idx)))
}

/// Scores a normalized-space prediction against a sample's ground truth.
///
/// Depth is aligned against raw depth (with `align = none` the prediction is
/// first mapped back through the sample's own normalization). Mask
/// predictions are mapped from `[-1, 1]` to `[0, 1]` and clamped. A depth
/// alignment that cannot be formed is reported as a degenerate row.
pub fn score(pred: &ImageTensor, sample: &Sample, task: TargetKind, depth_cfg: &DepthEvalConfig) -> Result<TaskMetrics, CliError> {
    match task {
        TargetKind::Depth => {
            let pred = match depth_cfg.align {
                pdiff_core::metrics::AlignMode::None => sample.depth_normalization.invert(pred),
                _ => pred.clone(),
            };
            match depth_metrics(&pred, &sample.raw_depth, &sample.valid, depth_cfg) {
                Ok(m) => Ok(TaskMetrics::Depth(m)),
                Err(CoreError::Degenerate(_)) => Ok(TaskMetrics::Depth(DepthMetrics {
                    absrel: f64::NAN,
                    delta1: f64::NAN,
                    n_valid: sample.valid.iter().filter(|&&v| v).count(),
                    delta1_hits: 0,
                    alignment: AffineAlignment {
                        scale: f64::NAN,
                        shift: f64::NAN,
                    },
                })),
                Err(e) => Err(e.into()),
            }
        }
        TargetKind::Normal => Ok(TaskMetrics::Normal(normal_metrics(pred, &sample.normal, &sample.valid)?)),
        TargetKind::Mask => {
            let unit = |t: &ImageTensor| {
                ImageTensor::from_vec(t.shape(), t.data().iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect())
            };
            Ok(TaskMetrics::Mask(mask_metrics(&unit(pred)?, &unit(&sample.mask)?)?))
        }
    }
}

pub fn evaluate(
    maps: &[&ImageTensor],
    samples: &[Sample],
    task: TargetKind,
    depth_cfg: &DepthEvalConfig,
    pooled: bool,
) -> Result<MetricReport, CliError> {
    if maps.len() != samples.len() {
        return Err(CliError::config(format!("{} predictions for {} samples", maps.len(), samples.len())));
    }
    let rows: Vec<TaskMetrics> = maps
        .par_iter()
        .zip(samples)
        .enumerate()
        .map(|(i, (p, s))| score(p, s, task, depth_cfg).map_err(|e| e.context(format!("sample {}", image_name(i)))))
        .collect::<Result<_, _>>()?;
    let mut report = MetricReport::new(task, "test", pooled);
    for (i, m) in rows.into_iter().enumerate() {
        report.push(image_name(i), m);
    }
    Ok(report)
}

/// Per-pixel absolute error against the normalized target, averaged over
/// channels; invalid pixels are zero.
pub fn abs_error_map(pred: &ImageTensor, sample: &Sample, task: TargetKind) -> Result<ImageTensor, CliError> {
    let target = sample.target(task)?;
    let k = target.channels();
    let valid = target_valid(sample, task);
    let data = pred
        .data()
        .chunks_exact(k)
        .zip(target.data().chunks_exact(k))
        .zip(&valid)
        .map(|((p, t), &ok)| {
            if ok {
                p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64
            } else {
                0.0
            }
        })
        .collect();
    Ok(ImageTensor::from_vec(pdiff_core::tensor::Shape::new(target.height(), target.width(), 1), data)?)
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn millis(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}
