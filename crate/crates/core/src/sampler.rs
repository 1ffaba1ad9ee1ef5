//! Reverse-process inference for the three paradigms.
//!
//! Every multi-step pass runs the deterministic (`eta = 0`) update
//!
//! ```text
//! x0     = sqrt(ab_t) * z_t - sqrt(1 - ab_t) * v
//! c_hat  = sqrt(ab_t) * v   + sqrt(1 - ab_t) * z_t
//! z_prev = sqrt(ab_prev) * x0 + sqrt(1 - ab_prev) * c_hat
//! ```
//!
//! and returns `x0` of the last visited timestep. [`CarrierSign::Printed`]
//! swaps the `+` in the carrier estimate for a `-`; it exists only to
//! reproduce the resulting loss of exactness.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::codec::{LatentCodec, MapDecoder};
use crate::denoiser::{DenoiserInput, VPredictor};
use crate::error::{Error, Result};
use crate::paradigm::Paradigm;
use crate::raster::{write_bytes, write_f32r};
use crate::rng::{carrier_rng, gaussian_latent};
use crate::schedule::{coefficients, ScheduleKind, TimestepSubsequence, VarianceSchedule};
use crate::tensor::{ImageTensor, Latent, Provenance, RunningMean, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CarrierSign {
    #[default]
    Corrected,
    /// `c_hat = sqrt(ab) * v - sqrt(1 - ab) * z_t`.
    Printed,
}

/// Where ensemble members are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleSpace {
    #[default]
    Decoded,
    Latent,
}

impl std::str::FromStr for EnsembleSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoded" => Ok(EnsembleSpace::Decoded),
            "latent" => Ok(EnsembleSpace::Latent),
            other => Err(Error::Config(format!("unknown ensemble space `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub n_steps: usize,
    pub ensemble: usize,
    pub seed: u64,
    /// Index of the sample being predicted; keys the carrier draws.
    pub sample_index: u64,
    pub record_trajectory: bool,
    pub ensemble_space: EnsembleSpace,
    pub carrier_sign: CarrierSign,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_steps: 10,
            ensemble: 1,
            seed: 0,
            sample_index: 0,
            record_trajectory: false,
            ensemble_space: EnsembleSpace::Decoded,
            carrier_sign: CarrierSign::Corrected,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.ensemble == 0 {
            return Err(Error::Config("inference: n_steps and ensemble must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    pub state: Latent,
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub prediction: ImageTensor,
    /// Mean clean latent over ensemble members.
    pub latent: Latent,
    pub denoiser_evaluations: usize,
    /// Steps actually run per pass.
    pub n_steps: usize,
    /// States of the first ensemble member, one per visited timestep.
    pub trajectory: Option<Vec<TrajectoryStep>>,
    pub wall_clock: Duration,
}

/// Counts calls made through it; the count is the source of truth for
/// evaluation accounting.
struct Counted<'a, D: ?Sized> {
    inner: &'a D,
    calls: AtomicUsize,
}

impl<D: VPredictor + ?Sized> VPredictor for Counted<'_, D> {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_v(input)
    }
}

/// The timesteps a pass visits.
///
/// One-step inference and the `constant_one` schedule visit only `t = 1`:
/// with `alpha_bar = 0` every step maps `z_t` to `-z_t`, so extra steps would
/// only flip the sign of the chain.
pub fn effective_timesteps(paradigm: Paradigm, schedule: &VarianceSchedule, n_steps: usize) -> Result<TimestepSubsequence> {
    if n_steps == 0 {
        return Err(Error::InvalidStepCount {
            n_steps,
            total: schedule.total_steps(),
        });
    }
    if paradigm == Paradigm::OneStep || schedule.kind() == ScheduleKind::ConstantOne {
        return TimestepSubsequence::from_indices(vec![1], schedule.total_steps());
    }
    TimestepSubsequence::uniform(schedule.total_steps(), n_steps)
}

/// `(x0, carrier estimate)` from a state and its velocity.
pub fn split_velocity(alpha_bar: f64, state: &Latent, v: &Latent, sign: CarrierSign) -> Result<(Latent, Latent)> {
    let (signal, rest) = coefficients(alpha_bar);
    let x0 = Latent::lincomb(signal, state, -rest, v)?;
    let carrier = match sign {
        CarrierSign::Corrected => Latent::lincomb(signal, v, rest, state)?,
        CarrierSign::Printed => Latent::lincomb(signal, v, -rest, state)?,
    };
    Ok((x0.with_provenance(Provenance::Label), carrier))
}

/// The clean-latent estimate of a one-step evaluation, shared with the
/// constant-schedule path so both produce the same bits.
fn clean_estimate(denoiser: &dyn VPredictor, state: &Latent, condition: Option<&Latent>, t: usize, alpha_bar: f64) -> Result<(Latent, Latent)> {
    let input = DenoiserInput::with_alpha_bar(alpha_bar, t, state, condition)?;
    let v = denoiser.predict_v(&input)?;
    let (signal, rest) = coefficients(alpha_bar);
    let x0 = Latent::lincomb(signal, state, -rest, &v)?.with_provenance(Provenance::Label);
    Ok((x0, v))
}

struct Pass {
    latent: Latent,
    trajectory: Option<Vec<TrajectoryStep>>,
}

fn run_chain(
    denoiser: &dyn VPredictor,
    schedule: &VarianceSchedule,
    init: Latent,
    condition: Option<&Latent>,
    steps: &TimestepSubsequence,
    sign: CarrierSign,
    record: bool,
) -> Result<Pass> {
    let ts = steps.indices();
    let mut trajectory = record.then(Vec::new);
    let mut state = init;
    for (i, &t) in ts.iter().enumerate() {
        if let Some(tr) = trajectory.as_mut() {
            tr.push(TrajectoryStep { t, state: state.clone() });
        }
        let ab = schedule.alpha_bar(t)?;
        let (x0, v) = clean_estimate(denoiser, &state, condition, t, ab)?;
        let finite_check = |z: &Latent| {
            if z.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFiniteLatent { step: i, t })
            }
        };
        finite_check(&x0)?;
        let Some(&t_prev) = ts.get(i + 1) else {
            return Ok(Pass { latent: x0, trajectory });
        };
        let (_, carrier) = split_velocity(ab, &state, &v, sign)?;
        let ab_prev = schedule.alpha_bar(t_prev)?;
        let (s, r) = coefficients(ab_prev);
        state = Latent::lincomb(s, &x0, r, &carrier)?;
        finite_check(&state)?;
    }
    unreachable!("timestep subsequences are never empty")
}

fn run_pass(
    paradigm: Paradigm,
    denoiser: &dyn VPredictor,
    schedule: &VarianceSchedule,
    z_x: &Latent,
    steps: &TimestepSubsequence,
    cfg: &InferenceConfig,
    member: u64,
) -> Result<Pass> {
    let record = cfg.record_trajectory && member == 0;
    match paradigm {
        Paradigm::OneStep => {
            let (x0, _) = clean_estimate(denoiser, z_x, None, 1, 0.0)?;
            if !x0.is_finite() {
                return Err(Error::NonFiniteLatent { step: 0, t: 1 });
            }
            let trajectory = record.then(|| {
                vec![TrajectoryStep {
                    t: 1,
                    state: z_x.clone(),
                }]
            });
            Ok(Pass { latent: x0, trajectory })
        }
        Paradigm::DeterministicMs => run_chain(denoiser, schedule, z_x.clone(), None, steps, cfg.carrier_sign, record),
        Paradigm::StochasticMs => {
            let eps = initial_noise(cfg.seed, cfg.sample_index, member, z_x.shape());
            run_chain(denoiser, schedule, eps, Some(z_x), steps, cfg.carrier_sign, record)
        }
    }
}

/// The starting latent of stochastic ensemble member `member` of sample `sample`.
pub fn initial_noise(seed: u64, sample: u64, member: u64, shape: Shape) -> Latent {
    gaussian_latent(&mut carrier_rng(seed, sample, member), shape)
}

/// Runs `paradigm` on an already encoded image latent.
///
/// Deterministic paradigms produce identical ensemble members; they still run
/// `m` times so that the evaluation count is `m * n_steps`.
pub fn infer_latent(
    paradigm: Paradigm,
    denoiser: &dyn VPredictor,
    decoder: &dyn MapDecoder,
    schedule: &VarianceSchedule,
    z_x: &Latent,
    cfg: &InferenceConfig,
) -> Result<InferenceResult> {
    cfg.validate()?;
    let start = Instant::now();
    let steps = effective_timesteps(paradigm, schedule, cfg.n_steps)?;
    let counted = Counted {
        inner: denoiser,
        calls: AtomicUsize::new(0),
    };
    let passes: Vec<Pass> = (0..cfg.ensemble as u64)
        .into_par_iter()
        .map(|member| run_pass(paradigm, &counted, schedule, z_x, &steps, cfg, member))
        .collect::<Result<_>>()?;

    let mut latent_mean = RunningMean::new(z_x.len());
    for p in &passes {
        latent_mean.push(p.latent.data());
    }
    let latent = Latent::from_vec(z_x.shape(), Provenance::Label, latent_mean.into_vec())?;
    let prediction = match cfg.ensemble_space {
        EnsembleSpace::Latent => decoder.decode_map(&latent)?,
        EnsembleSpace::Decoded => {
            let maps: Vec<ImageTensor> = passes
                .par_iter()
                .map(|p| decoder.decode_map(&p.latent))
                .collect::<Result<_>>()?;
            let mut mean = RunningMean::new(maps[0].data().len());
            for m in &maps {
                mean.push(m.data());
            }
            ImageTensor::from_vec(maps[0].shape(), mean.into_vec())?
        }
    };
    let trajectory = passes.into_iter().next().and_then(|p| p.trajectory);
    Ok(InferenceResult {
        prediction,
        latent,
        denoiser_evaluations: counted.calls.into_inner(),
        n_steps: steps.len(),
        trajectory,
        wall_clock: start.elapsed(),
    })
}

/// Encodes `image` and runs `paradigm`.
pub fn infer(
    paradigm: Paradigm,
    denoiser: &dyn VPredictor,
    image_codec: &LatentCodec,
    decoder: &dyn MapDecoder,
    schedule: &VarianceSchedule,
    image: &ImageTensor,
    cfg: &InferenceConfig,
) -> Result<InferenceResult> {
    let z_x = image_codec.encode(image, Provenance::Image)?;
    infer_latent(paradigm, denoiser, decoder, schedule, &z_x, cfg)
}

pub fn sample_stochastic(
    denoiser: &dyn VPredictor,
    image_codec: &LatentCodec,
    decoder: &dyn MapDecoder,
    schedule: &VarianceSchedule,
    image: &ImageTensor,
    cfg: &InferenceConfig,
) -> Result<InferenceResult> {
    infer(Paradigm::StochasticMs, denoiser, image_codec, decoder, schedule, image, cfg)
}

pub fn sample_deterministic_ms(
    denoiser: &dyn VPredictor,
    image_codec: &LatentCodec,
    decoder: &dyn MapDecoder,
    schedule: &VarianceSchedule,
    image: &ImageTensor,
    cfg: &InferenceConfig,
) -> Result<InferenceResult> {
    infer(Paradigm::DeterministicMs, denoiser, image_codec, decoder, schedule, image, cfg)
}

/// `decode(-v(z_x, t = 1))` with a single evaluation.
pub fn sample_one_step(
    denoiser: &dyn VPredictor,
    image_codec: &LatentCodec,
    decoder: &dyn MapDecoder,
    image: &ImageTensor,
) -> Result<InferenceResult> {
    let schedule = VarianceSchedule::new(ScheduleKind::ConstantOne, 1, 1.0, 1.0)?;
    let cfg = InferenceConfig {
        n_steps: 1,
        ..InferenceConfig::default()
    };
    infer(Paradigm::OneStep, denoiser, image_codec, decoder, &schedule, image, &cfg)
}

/// Writes `traj_t{t:04}.f32` per step and an `index.txt` listing them.
pub fn write_trajectory(dir: &Path, trajectory: &[TrajectoryStep]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("# step\tt\tfile\n");
    for (i, step) in trajectory.iter().enumerate() {
        let name = format!("traj_t{:04}.f32", step.t);
        write_f32r(&dir.join(&name), step.state.shape(), step.state.data())?;
        index.push_str(&format!("{i}\t{}\t{name}\n", step.t));
    }
    write_bytes(&dir.join("index.txt"), index.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{implied_carrier, LinearDenoiser, OracleDenoiser};
    use crate::rng::{keyed_rng, Domain};

    fn latent(seed: u64, shape: Shape, prov: Provenance) -> Latent {
        gaussian_latent(&mut keyed_rng(seed, Domain::Init, 7, 0), shape).with_provenance(prov)
    }

    #[test]
    fn zero_denoiser_on_two_steps_by_hand() {
        let s = VarianceSchedule::new(ScheduleKind::Linear, 2, 0.1, 0.3).unwrap();
        let shape = Shape::new(1, 2, 1);
        let d = LinearDenoiser::zeros(shape, false, 2, 1).unwrap();
        let z_x = Latent::from_vec(shape, Provenance::Image, vec![1.0, -2.0]).unwrap();
        let cfg = InferenceConfig {
            n_steps: 2,
            ..InferenceConfig::default()
        };
        let r = infer_latent(Paradigm::DeterministicMs, &d, &LatentCodec::identity(1), &s, &z_x, &cfg).unwrap();
        // ab_2 = 0.9 * 0.7, ab_1 = 0.9
        let (ab2, ab1): (f64, f64) = (0.9 * 0.7, 0.9);
        for (out, x) in r.latent.data().iter().zip([1.0, -2.0]) {
            let x0_2 = ab2.sqrt() * x;
            let c_2 = (1.0 - ab2).sqrt() * x;
            let z1 = ab1.sqrt() * x0_2 + (1.0 - ab1).sqrt() * c_2;
            assert!((out - ab1.sqrt() * z1).abs() < 1e-15);
        }
        assert_eq!(r.denoiser_evaluations, 2);
    }

    #[test]
    fn constant_schedule_runs_one_step_at_t1() {
        let s = VarianceSchedule::new(ScheduleKind::ConstantOne, 50, 1.0, 1.0).unwrap();
        let steps = effective_timesteps(Paradigm::DeterministicMs, &s, 10).unwrap();
        assert_eq!(steps.indices(), &[1]);
        let full = VarianceSchedule::default();
        assert_eq!(effective_timesteps(Paradigm::StochasticMs, &full, 1).unwrap().indices(), &[1000]);
    }

    #[test]
    fn oracle_chain_is_exact_and_trajectory_consistent() {
        let s = VarianceSchedule::new(ScheduleKind::ScaledLinear, 100, 0.00085, 0.012).unwrap();
        let shape = Shape::new(4, 4, 2);
        let z_y = latent(1, shape, Provenance::Label);
        let z_x = latent(2, shape, Provenance::Image);
        let carrier = implied_carrier(s.alpha_bar(100).unwrap(), &z_y, &z_x).unwrap();
        let oracle = OracleDenoiser::single(z_y.clone(), Some(carrier.clone())).unwrap();
        let cfg = InferenceConfig {
            n_steps: 100,
            record_trajectory: true,
            ..InferenceConfig::default()
        };
        let codec = LatentCodec::identity(2);
        let r = infer_latent(Paradigm::DeterministicMs, &oracle, &codec, &s, &z_x, &cfg).unwrap();
        assert!(r.latent.max_abs_diff(&z_y).unwrap() < 1e-9);
        let traj = r.trajectory.unwrap();
        assert_eq!(traj.len(), 100);
        for step in &traj {
            let expect = s.blend_forward(step.t, &z_y, &carrier).unwrap();
            assert!(step.state.max_abs_diff(&expect).unwrap() < 1e-9, "t={}", step.t);
        }
        let printed = InferenceConfig {
            carrier_sign: CarrierSign::Printed,
            ..cfg
        };
        let bad = infer_latent(Paradigm::DeterministicMs, &oracle, &codec, &s, &z_x, &printed).unwrap();
        assert!(bad.latent.max_abs_diff(&z_y).unwrap() > 0.1);
    }

    #[test]
    fn stochastic_ensemble_counts_and_determinism() {
        let s = VarianceSchedule::new(ScheduleKind::ScaledLinear, 40, 0.00085, 0.012).unwrap();
        let shape = Shape::new(2, 2, 3);
        let z_y = latent(3, shape, Provenance::Label);
        let z_x = latent(4, shape, Provenance::Image);
        let oracle = OracleDenoiser::single(z_y.clone(), None).unwrap();
        let cfg = InferenceConfig {
            n_steps: 8,
            ensemble: 5,
            seed: 11,
            ..InferenceConfig::default()
        };
        let codec = LatentCodec::identity(3);
        let a = infer_latent(Paradigm::StochasticMs, &oracle, &codec, &s, &z_x, &cfg).unwrap();
        let b = infer_latent(Paradigm::StochasticMs, &oracle, &codec, &s, &z_x, &cfg).unwrap();
        assert_eq!(a.denoiser_evaluations, 40);
        assert_eq!(a.prediction, b.prediction);
        assert!(a.latent.max_abs_diff(&z_y).unwrap() < 1e-12);
    }

    #[test]
    fn deterministic_ensemble_equals_single_pass() {
        let s = VarianceSchedule::new(ScheduleKind::ScaledLinear, 40, 0.00085, 0.012).unwrap();
        let shape = Shape::new(2, 2, 1);
        let mut rng = keyed_rng(5, Domain::Init, 0, 0);
        let mut d = LinearDenoiser::zeros(shape, false, 40, 4).unwrap();
        for b in 0..4 {
            let w: Vec<f64> = (0..4 * 5).map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5)).collect();
            d.set_bucket(b, w, vec![0.1; 4]).unwrap();
        }
        let z_x = latent(6, shape, Provenance::Image);
        let codec = LatentCodec::identity(1);
        let one = InferenceConfig {
            n_steps: 5,
            ..InferenceConfig::default()
        };
        let five = InferenceConfig { ensemble: 5, ..one.clone() };
        let a = infer_latent(Paradigm::DeterministicMs, &d, &codec, &s, &z_x, &one).unwrap();
        let b = infer_latent(Paradigm::DeterministicMs, &d, &codec, &s, &z_x, &five).unwrap();
        assert_eq!(a.prediction, b.prediction);
        assert_eq!(b.denoiser_evaluations, 25);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let s = VarianceSchedule::new(ScheduleKind::ScaledLinear, 10, 0.00085, 0.012).unwrap();
        let shape = Shape::new(1, 1, 1);
        let mut d = LinearDenoiser::zeros(shape, false, 10, 1).unwrap();
        d.set_bucket(0, vec![0.0, 0.0], vec![f64::INFINITY]).unwrap();
        let z_x = latent(7, shape, Provenance::Image);
        let err = infer_latent(Paradigm::DeterministicMs, &d, &LatentCodec::identity(1), &s, &z_x, &InferenceConfig::default());
        assert!(matches!(err, Err(Error::NonFiniteLatent { step: 0, t: 10 })));
    }

    #[test]
    fn trajectory_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(2, 1, 1);
        let steps = vec![
            TrajectoryStep { t: 10, state: latent(8, shape, Provenance::Label) },
            TrajectoryStep { t: 1, state: latent(9, shape, Provenance::Label) },
        ];
        write_trajectory(dir.path(), &steps).unwrap();
        assert!(dir.path().join("traj_t0010.f32").exists());
        assert!(dir.path().join("traj_t0001.f32").exists());
        let index = fs::read_to_string(dir.path().join("index.txt")).unwrap();
        assert_eq!(index.lines().count(), 3);
    }
}
