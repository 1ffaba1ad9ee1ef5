//! v-prediction denoisers.
//!
//! A denoiser maps `(state, optional condition, t)` to a velocity estimate
//! `v = sqrt(alpha_bar) * carrier - sqrt(1 - alpha_bar) * target`. Three
//! implementations are provided: an analytic [`OracleDenoiser`] used as a test
//! fixture, a per-timestep-bucket ridge [`LinearDenoiser`], and a one-hidden-layer
//! tanh [`MlpDenoiser`].
//!
//! The learned variants see the flattened feature vector
//! `[state; condition (if any); sqrt(alpha_bar)]`.

mod linear;
mod loss;
mod mlp;
mod oracle;
mod train;

pub use linear::{build_design, Design, LinearDenoiser};
pub use loss::{masked_map_loss, DecodeHead, DecodeHeadExample};
pub use mlp::{mlp_gradient, MlpDenoiser, MlpGradient};
pub use oracle::{implied_carrier, OracleDenoiser, OracleSample};
pub use train::{
    make_example, train_denoiser, DenoiserKind, LatentPair, TrainConfig, TrainReport, Trained,
    TrainingExample,
};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::write_bytes;
use crate::schedule::{coefficients, VarianceSchedule};
use crate::tensor::{ensure_same, Latent, Shape};

#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub state: &'a Latent,
    pub condition: Option<&'a Latent>,
    pub t: usize,
    pub alpha_bar: f64,
}

impl<'a> DenoiserInput<'a> {
    /// Input at timestep `t` of `schedule`.
    pub fn new(
        schedule: &VarianceSchedule,
        t: usize,
        state: &'a Latent,
        condition: Option<&'a Latent>,
    ) -> Result<Self> {
        let alpha_bar = schedule.alpha_bar(t)?;
        Self::with_alpha_bar(alpha_bar, t, state, condition)
    }

    pub fn with_alpha_bar(
        alpha_bar: f64,
        t: usize,
        state: &'a Latent,
        condition: Option<&'a Latent>,
    ) -> Result<Self> {
        if t == 0 {
            return Err(Error::TimestepOutOfRange { t, total: 0 });
        }
        if let Some(c) = condition {
            ensure_same(state.shape(), c.shape())?;
        }
        Ok(Self {
            state,
            condition,
            t,
            alpha_bar,
        })
    }

    /// `[state; condition; sqrt(alpha_bar)]`.
    pub fn features(&self) -> Vec<f64> {
        let cond_len = self.condition.map_or(0, |c| c.len());
        let mut f = Vec::with_capacity(self.state.len() + cond_len + 1);
        f.extend_from_slice(self.state.data());
        if let Some(c) = self.condition {
            f.extend_from_slice(c.data());
        }
        f.push(self.alpha_bar.sqrt());
        f
    }
}

pub trait VPredictor: Send + Sync {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent>;
}

impl<T: VPredictor + ?Sized> VPredictor for &T {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent> {
        (**self).predict_v(input)
    }
}

/// `sqrt(alpha_bar_t) * carrier - sqrt(1 - alpha_bar_t) * z_y`.
///
/// With a Gaussian carrier this is the usual v-prediction target; with the
/// image latent as carrier it is the RGB-blending target; at `alpha_bar = 0`
/// it reduces to `-z_y`.
pub fn v_target(schedule: &VarianceSchedule, t: usize, z_y: &Latent, carrier: &Latent) -> Result<Latent> {
    v_target_at(schedule.alpha_bar(t)?, z_y, carrier)
}

pub fn v_target_at(alpha_bar: f64, z_y: &Latent, carrier: &Latent) -> Result<Latent> {
    let (signal, rest) = coefficients(alpha_bar);
    Latent::lincomb(signal, carrier, -rest, z_y).map(|v| v.with_provenance(z_y.provenance()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Denoiser {
    Oracle(OracleDenoiser),
    Linear(LinearDenoiser),
    Mlp(MlpDenoiser),
}

impl VPredictor for Denoiser {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent> {
        match self {
            Denoiser::Oracle(d) => d.predict_v(input),
            Denoiser::Linear(d) => d.predict_v(input),
            Denoiser::Mlp(d) => d.predict_v(input),
        }
    }
}

const MAGIC: &[u8; 4] = b"DNZ1";
const TAG_LINEAR: u32 = 1;
const TAG_MLP: u32 = 2;

impl Denoiser {
    pub fn kind(&self) -> DenoiserKind {
        match self {
            Denoiser::Oracle(_) => DenoiserKind::Oracle,
            Denoiser::Linear(_) => DenoiserKind::Linear,
            Denoiser::Mlp(_) => DenoiserKind::Mlp,
        }
    }

    /// `DNZ1` encoding: magic, variant tag, dimensions as `u32`, then `f64` blocks,
    /// all little-endian.
    ///
    /// Linear: `H W C conditioned T B`, then `lambda`, then per bucket the
    /// `out x in` weights and `out` biases. MLP: `H W C conditioned T hidden`,
    /// then `W1 (hidden x in)`, `b1`, `W2 (out x hidden)`, `b2`. Matrices are
    /// stored column-major.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        match self {
            Denoiser::Oracle(_) => {
                return Err(Error::Config("the oracle denoiser has no parameters to save".into()))
            }
            Denoiser::Linear(d) => {
                w.u32(TAG_LINEAR);
                w.shape(d.shape());
                w.u32(d.is_conditioned() as u32);
                w.u32(d.total_steps() as u32);
                w.u32(d.buckets() as u32);
                w.f64(d.lambda());
                for b in 0..d.buckets() {
                    w.f64s(d.bucket_weights(b));
                    w.f64s(d.bucket_bias(b));
                }
            }
            Denoiser::Mlp(d) => {
                w.u32(TAG_MLP);
                w.shape(d.shape());
                w.u32(d.is_conditioned() as u32);
                w.u32(d.total_steps() as u32);
                w.u32(d.hidden() as u32);
                for block in d.parameter_blocks() {
                    w.f64s(&block);
                }
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "missing DNZ1 header"));
        }
        let tag = r.u32()?;
        let shape = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let conditioned = r.u32()? != 0;
        let total_steps = r.u32()? as usize;
        let denoiser = match tag {
            TAG_LINEAR => {
                let buckets = r.u32()? as usize;
                let lambda = r.f64()?;
                let mut d = LinearDenoiser::zeros(shape, conditioned, total_steps, buckets)?;
                d.set_lambda(lambda);
                let (out_dim, in_dim) = (d.out_dim(), d.in_dim());
                for b in 0..buckets {
                    let weights = r.f64s(out_dim * in_dim)?;
                    let bias = r.f64s(out_dim)?;
                    d.set_bucket(b, weights, bias)?;
                }
                Denoiser::Linear(d)
            }
            TAG_MLP => {
                let hidden = r.u32()? as usize;
                let mut d = MlpDenoiser::zeros(shape, conditioned, total_steps, hidden)?;
                let sizes = d.parameter_block_sizes();
                let blocks = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
                d.set_parameter_blocks(&blocks)?;
                Denoiser::Mlp(d)
            }
            other => return Err(Error::format(path, format!("unknown denoiser tag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after denoiser parameters"));
        }
        Ok(denoiser)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Default)]
struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn shape(&mut self, s: Shape) {
        self.u32(s.height as u32);
        self.u32(s.width as u32);
        self.u32(s.channels as u32);
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(self.path, "truncated denoiser file"));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Bucket index (0-based) of timestep `t` when `[1, T]` is split into `buckets` runs.
pub(crate) fn bucket_of(t: usize, total_steps: usize, buckets: usize) -> Result<usize> {
    if t == 0 || t > total_steps {
        return Err(Error::TimestepOutOfRange { t, total: total_steps });
    }
    // ceil(t * B / T), 1-based
    Ok((t * buckets).div_ceil(total_steps) - 1)
}

/// Inclusive timestep range `[lo, hi]` covered by 0-based bucket `b`.
pub(crate) fn bucket_range(b: usize, total_steps: usize, buckets: usize) -> (usize, usize) {
    let lo = b * total_steps / buckets + 1;
    let hi = (b + 1) * total_steps / buckets;
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_latent, keyed_rng, Domain};
    use crate::schedule::{ScheduleKind, VarianceSchedule};
    use crate::tensor::Provenance;

    #[test]
    fn v_target_collapses_to_negated_target() {
        let s = VarianceSchedule::new(ScheduleKind::ConstantOne, 10, 1.0, 1.0).unwrap();
        let shape = Shape::new(3, 3, 2);
        let z = gaussian_latent(&mut keyed_rng(1, Domain::Init, 0, 0), shape).with_provenance(Provenance::Label);
        let c = gaussian_latent(&mut keyed_rng(1, Domain::Init, 1, 0), shape);
        for t in 1..=10 {
            let v = v_target(&s, t, &z, &c).unwrap();
            for (a, b) in v.data().iter().zip(z.data()) {
                assert!(*a == -*b);
            }
        }
    }

    #[test]
    fn v_target_at_unit_alpha_bar_is_carrier() {
        let shape = Shape::new(2, 2, 1);
        let z = Latent::from_vec(shape, Provenance::Label, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let c = Latent::from_vec(shape, Provenance::Noise, vec![0.3, 0.1, -0.7, 9.0]).unwrap();
        assert_eq!(v_target_at(1.0, &z, &c).unwrap().data(), c.data());
    }

    #[test]
    fn v_target_matches_scalar_recomputation() {
        let shape = Shape::new(4, 4, 3);
        let z = gaussian_latent(&mut keyed_rng(2, Domain::Init, 0, 0), shape);
        let c = gaussian_latent(&mut keyed_rng(2, Domain::Init, 1, 0), shape);
        let v = v_target_at(0.36, &z, &c).unwrap();
        for i in 0..v.len() {
            let expect = 0.6 * c.data()[i] - 0.8 * z.data()[i];
            assert!((v.data()[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn buckets_partition_the_timesteps() {
        for (total, buckets) in [(1000, 8), (10, 8), (7, 7), (1, 1), (13, 4)] {
            let mut seen = vec![0usize; buckets];
            for t in 1..=total {
                let b = bucket_of(t, total, buckets).unwrap();
                let (lo, hi) = bucket_range(b, total, buckets);
                assert!(lo <= t && t <= hi, "t={t} b={b} range={lo}..={hi}");
                seen[b] += 1;
            }
            assert!(seen.iter().all(|&n| n > 0));
        }
        assert!(bucket_of(0, 10, 2).is_err());
        assert!(bucket_of(11, 10, 2).is_err());
    }

    #[test]
    fn features_layout() {
        let shape = Shape::new(1, 2, 1);
        let s = Latent::from_vec(shape, Provenance::Label, vec![1.0, 2.0]).unwrap();
        let c = Latent::from_vec(shape, Provenance::Image, vec![3.0, 4.0]).unwrap();
        let input = DenoiserInput::with_alpha_bar(0.25, 3, &s, Some(&c)).unwrap();
        assert_eq!(input.features(), vec![1.0, 2.0, 3.0, 4.0, 0.5]);
        let bad = Latent::zeros(Shape::new(2, 1, 1), Provenance::Image);
        assert!(DenoiserInput::with_alpha_bar(0.25, 3, &s, Some(&bad)).is_err());
    }
}
