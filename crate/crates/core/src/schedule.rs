//! Variance schedules, the cumulative signal-retention products, and forward
//! blending of a target latent with a carrier latent.
//!
//! All timesteps are 1-based: `t = 1..=T`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `beta_t` interpolated linearly between the endpoints.
    Linear,
    /// `sqrt(beta_t)` interpolated linearly, then squared.
    ScaledLinear,
    /// Every `beta_t = 1`, so every cumulative product is zero.
    ConstantOne,
}

impl ScheduleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::ScaledLinear => "scaled_linear",
            ScheduleKind::ConstantOne => "constant_one",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "scaled_linear" => Ok(ScheduleKind::ScaledLinear),
            "constant_one" => Ok(ScheduleKind::ConstantOne),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for VarianceSchedule {
    fn default() -> Self {
        Self::new(ScheduleKind::ScaledLinear, 1000, 0.00085, 0.012).expect("valid defaults")
    }
}

impl VarianceSchedule {
    pub fn new(kind: ScheduleKind, total_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidSchedule("T must be positive".into()));
        }
        let in_range = |b: f64| b > 0.0 && b <= 1.0;
        if !in_range(beta_start) || !in_range(beta_end) {
            return Err(Error::InvalidSchedule(format!(
                "endpoints ({beta_start}, {beta_end}) outside (0, 1]"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::InvalidSchedule(format!(
                "beta_start {beta_start} > beta_end {beta_end}"
            )));
        }

        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => linspace(beta_start, beta_end, total_steps),
            ScheduleKind::ScaledLinear => {
                let mut b: Vec<f64> = linspace(beta_start.sqrt(), beta_end.sqrt(), total_steps)
                    .into_iter()
                    .map(|b| b * b)
                    .collect();
                // squaring the square root can drift by an ulp; pin the endpoints
                if total_steps > 1 {
                    b[total_steps - 1] = beta_end;
                }
                b[0] = beta_start;
                b
            }
            ScheduleKind::ConstantOne => vec![1.0; total_steps],
        };

        let mut alpha_bars = Vec::with_capacity(total_steps);
        let mut acc = 1.0f64;
        for &beta in &betas {
            acc *= 1.0 - beta;
            alpha_bars.push(acc);
        }

        let (beta_start, beta_end) = match kind {
            ScheduleKind::ConstantOne => (1.0, 1.0),
            _ => (beta_start, beta_end),
        };
        Ok(Self {
            kind,
            beta_start,
            beta_end,
            betas,
            alpha_bars,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                total: self.total_steps(),
            });
        }
        Ok(())
    }

    /// `sqrt(alpha_bar_t) * target + sqrt(1 - alpha_bar_t) * carrier`.
    pub fn blend_forward(&self, t: usize, target: &Latent, carrier: &Latent) -> Result<Latent> {
        blend_at(self.alpha_bar(t)?, target, carrier)
    }

    /// Serializes as `schedule.<key> = <value>` lines. Betas are never stored.
    pub fn to_kv(&self) -> String {
        format!(
            "schedule.kind = {}\nschedule.steps = {}\nschedule.beta_start = {}\nschedule.beta_end = {}\n",
            self.kind,
            self.total_steps(),
            self.beta_start,
            self.beta_end
        )
    }

    /// Parses the block written by [`VarianceSchedule::to_kv`]; unrelated lines are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut steps = None;
        let mut start = None;
        let mut end = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let value = value.trim();
            let parse_f = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number `{v}`")))
            };
            match key.trim() {
                "schedule.kind" => kind = Some(value.parse::<ScheduleKind>()?),
                "schedule.steps" => {
                    steps = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad step count `{value}`")))?,
                    )
                }
                "schedule.beta_start" => start = Some(parse_f(value)?),
                "schedule.beta_end" => end = Some(parse_f(value)?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Config(format!("missing schedule.{k}"));
        Self::new(
            kind.ok_or_else(|| missing("kind"))?,
            steps.ok_or_else(|| missing("steps"))?,
            start.ok_or_else(|| missing("beta_start"))?,
            end.ok_or_else(|| missing("beta_end"))?,
        )
    }
}

/// Forward blend at an explicit `alpha_bar`.
pub fn blend_at(alpha_bar: f64, target: &Latent, carrier: &Latent) -> Result<Latent> {
    let (signal, rest) = coefficients(alpha_bar);
    Latent::lincomb(signal, target, rest, carrier)
}

/// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))`.
pub fn coefficients(alpha_bar: f64) -> (f64, f64) {
    (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt())
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                end
            } else {
                start + (end - start) * (i as f64 / last)
            }
        })
        .collect()
}

/// A strictly decreasing run of timesteps visited by a multi-step sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepSubsequence {
    indices: Vec<usize>,
}

impl TimestepSubsequence {
    /// Uniform stride over `[1, T]` in decreasing order.
    ///
    /// For `n_steps >= 2` both `T` and `1` are included; a single step
    /// visits `T` only.
    pub fn uniform(total_steps: usize, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || n_steps > total_steps {
            return Err(Error::InvalidStepCount {
                n_steps,
                total: total_steps,
            });
        }
        if n_steps == 1 {
            return Ok(Self {
                indices: vec![total_steps],
            });
        }
        let span = total_steps - 1;
        let denom = n_steps - 1;
        // T - round(i * span / denom), rounding half up in integer arithmetic.
        let indices = (0..n_steps)
            .map(|i| total_steps - (2 * i * span + denom) / (2 * denom))
            .collect();
        Ok(Self { indices })
    }

    /// An explicit sequence; must be strictly decreasing and within `[1, T]`.
    pub fn from_indices(indices: Vec<usize>, total_steps: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidStepCount {
                n_steps: 0,
                total: total_steps,
            });
        }
        for &t in &indices {
            if t == 0 || t > total_steps {
                return Err(Error::TimestepOutOfRange {
                    t,
                    total: total_steps,
                });
            }
        }
        if indices.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidSchedule(
                "timesteps must be strictly decreasing".into(),
            ));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn subsample_timesteps(total_steps: usize, n_steps: usize) -> Result<TimestepSubsequence> {
    TimestepSubsequence::uniform(total_steps, n_steps)
}
