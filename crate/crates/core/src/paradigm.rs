use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How a denoiser is used to produce a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Paradigm {
    /// Gaussian carrier, image latent concatenated as condition, many steps.
    StochasticMs,
    /// Image latent as the carrier, many steps, no randomness.
    DeterministicMs,
    /// A single evaluation at `t = 1` with `alpha_bar = 0`.
    OneStep,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::StochasticMs, Paradigm::DeterministicMs, Paradigm::OneStep];

    pub fn as_str(&self) -> &'static str {
        match self {
            Paradigm::StochasticMs => "stochastic_ms",
            Paradigm::DeterministicMs => "deterministic_ms",
            Paradigm::OneStep => "one_step",
        }
    }

    /// Whether the denoiser sees the image latent as a separate condition.
    pub fn is_conditioned(&self) -> bool {
        matches!(self, Paradigm::StochasticMs)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic_ms" => Ok(Paradigm::StochasticMs),
            "deterministic_ms" => Ok(Paradigm::DeterministicMs),
            "one_step" => Ok(Paradigm::OneStep),
            other => Err(Error::Config(format!("unknown paradigm `{other}`"))),
        }
    }
}
