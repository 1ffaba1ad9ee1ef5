use crate::error::{Error, Result};
use crate::schedule::coefficients;
use crate::tensor::{ensure_same, Latent};

use super::{v_target_at, DenoiserInput, VPredictor};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub target: Latent,
    /// The carrier blended with `target`. When absent the oracle recovers it
    /// from the state it is shown, so its clean estimate is `target` for any
    /// state whatsoever (for example every member of a stochastic ensemble).
    pub carrier: Option<Latent>,
}

/// The carrier `c` with `blend_at(alpha_bar, target, c) == state`.
///
/// Sampling starts from a latent (noise or the image latent) that is not the
/// forward blend at `T` unless `alpha_bar_T = 0`; binding an oracle to the
/// carrier implied by that start makes the whole reverse chain exact.
pub fn implied_carrier(alpha_bar: f64, target: &Latent, state: &Latent) -> Result<Latent> {
    let (signal, rest) = coefficients(alpha_bar);
    if rest > 0.0 {
        let inv = 1.0 / rest;
        Latent::lincomb(inv, state, -signal * inv, target)
    } else {
        // alpha_bar = 1: the carrier has no weight in the state
        Ok(Latent::zeros(state.shape(), state.provenance()))
    }
}

/// Returns the exact v-target of a bound ground-truth sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleDenoiser {
    samples: Vec<OracleSample>,
    bound: Option<usize>,
}

impl OracleDenoiser {
    pub fn new() -> Self {
        Self::default()
    }

    /// An oracle holding one sample, already bound.
    pub fn single(target: Latent, carrier: Option<Latent>) -> Result<Self> {
        let mut o = Self::new();
        let id = o.push(target, carrier)?;
        o.bind(id)?;
        Ok(o)
    }

    pub fn push(&mut self, target: Latent, carrier: Option<Latent>) -> Result<usize> {
        if let Some(c) = &carrier {
            ensure_same(target.shape(), c.shape())?;
        }
        self.samples.push(OracleSample { target, carrier });
        Ok(self.samples.len() - 1)
    }

    pub fn bind(&mut self, id: usize) -> Result<()> {
        if id >= self.samples.len() {
            return Err(Error::Config(format!(
                "oracle has {} samples, cannot bind {id}",
                self.samples.len()
            )));
        }
        self.bound = Some(id);
        Ok(())
    }

    pub fn unbind(&mut self) {
        self.bound = None;
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl VPredictor for OracleDenoiser {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent> {
        let sample = self.bound.map(|i| &self.samples[i]).ok_or(Error::UnboundOracle)?;
        ensure_same(sample.target.shape(), input.state.shape())?;
        match &sample.carrier {
            Some(carrier) => v_target_at(input.alpha_bar, &sample.target, carrier),
            None => {
                let carrier = implied_carrier(input.alpha_bar, &sample.target, input.state)?;
                v_target_at(input.alpha_bar, &sample.target, &carrier)
            }
        }
    }
}
