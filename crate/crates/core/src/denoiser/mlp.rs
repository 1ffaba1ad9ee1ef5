use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same, Latent, Shape};

use super::train::TrainingExample;
use super::{DenoiserInput, VPredictor};

/// `v = W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    shape: Shape,
    conditioned: bool,
    total_steps: usize,
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

/// Gradient of the batch loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl MlpGradient {
    /// Blocks in parameter order, matrices column-major.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }
}

impl MlpDenoiser {
    pub fn zeros(shape: Shape, conditioned: bool, total_steps: usize, hidden: usize) -> Result<Self> {
        if total_steps == 0 || hidden == 0 {
            return Err(Error::Config("MLP denoiser needs T >= 1 and hidden >= 1".into()));
        }
        let out = shape.len();
        let inp = out * if conditioned { 2 } else { 1 } + 1;
        Ok(Self {
            shape,
            conditioned,
            total_steps,
            w1: DMatrix::zeros(hidden, inp),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(out, hidden),
            b2: DVector::zeros(out),
        })
    }

    /// Gaussian init: `W1 ~ N(0, 1/in)`, `W2 ~ N(0, 0.01/hidden)`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        shape: Shape,
        conditioned: bool,
        total_steps: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut d = Self::zeros(shape, conditioned, total_steps, hidden)?;
        let n1 = Normal::new(0.0, 1.0 / (d.in_dim() as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 0.1 / (hidden as f64).sqrt()).expect("positive std");
        d.w1.iter_mut().for_each(|w| *w = n1.sample(rng));
        d.w2.iter_mut().for_each(|w| *w = n2.sample(rng));
        Ok(d)
    }

    /// Builds a network from explicit parameters, for hand-checked examples.
    pub fn from_parameters(
        shape: Shape,
        conditioned: bool,
        total_steps: usize,
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
    ) -> Result<Self> {
        let mut d = Self::zeros(shape, conditioned, total_steps, w1.nrows().max(1))?;
        if w1.shape() != d.w1.shape() || b1.len() != d.b1.len() || w2.shape() != d.w2.shape() || b2.len() != d.b2.len() {
            return Err(Error::shape(
                format!("{:?}/{:?}", d.w1.shape(), d.w2.shape()),
                format!("{:?}/{:?}", w1.shape(), w2.shape()),
            ));
        }
        d.w1 = w1;
        d.b1 = b1;
        d.w2 = w2;
        d.b2 = b2;
        Ok(d)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn is_conditioned(&self) -> bool {
        self.conditioned
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_block_sizes().iter().sum()
    }

    pub fn parameter_block_sizes(&self) -> [usize; 4] {
        [self.w1.len(), self.b1.len(), self.w2.len(), self.b2.len()]
    }

    /// `W1, b1, W2, b2`, matrices column-major.
    pub fn parameter_blocks(&self) -> [Vec<f64>; 4] {
        [
            self.w1.as_slice().to_vec(),
            self.b1.as_slice().to_vec(),
            self.w2.as_slice().to_vec(),
            self.b2.as_slice().to_vec(),
        ]
    }

    pub fn set_parameter_blocks(&mut self, blocks: &[Vec<f64>]) -> Result<()> {
        let sizes = self.parameter_block_sizes();
        if blocks.len() != 4 {
            return Err(Error::shape(4, blocks.len()));
        }
        for (b, &n) in blocks.iter().zip(&sizes) {
            if b.len() != n {
                return Err(Error::shape(n, b.len()));
            }
        }
        self.w1.as_mut_slice().copy_from_slice(&blocks[0]);
        self.b1.as_mut_slice().copy_from_slice(&blocks[1]);
        self.w2.as_mut_slice().copy_from_slice(&blocks[2]);
        self.b2.as_mut_slice().copy_from_slice(&blocks[3]);
        Ok(())
    }

    /// Parameters flattened in block order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameter_blocks().concat()
    }

    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::shape(self.parameter_count(), flat.len()));
        }
        let mut rest = flat;
        let mut blocks = Vec::with_capacity(4);
        for n in self.parameter_block_sizes() {
            let (head, tail) = rest.split_at(n);
            blocks.push(head.to_vec());
            rest = tail;
        }
        self.set_parameter_blocks(&blocks)
    }

    pub(crate) fn forward_features(&self, features: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(features);
        let mut h = &self.w1 * x + &self.b1;
        h.apply(|v| *v = v.tanh());
        let y = &self.w2 * h + &self.b2;
        y.data.into()
    }

    /// Batch loss `mean over batch and outputs of (y - target)^2`.
    pub fn batch_loss(&self, batch: &[&TrainingExample]) -> Result<f64> {
        let (x, t) = self.stack(batch)?;
        let (_, y) = self.forward_batch(&x);
        Ok((y - t).norm_squared() / (batch.len() * self.out_dim()) as f64)
    }

    fn stack(&self, batch: &[&TrainingExample]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let (inp, out) = (self.in_dim(), self.out_dim());
        let mut x = DMatrix::zeros(inp, batch.len());
        let mut t = DMatrix::zeros(out, batch.len());
        for (j, ex) in batch.iter().enumerate() {
            if ex.features.len() != inp {
                return Err(Error::shape(inp, ex.features.len()));
            }
            if ex.target.len() != out {
                return Err(Error::shape(out, ex.target.len()));
            }
            x.column_mut(j).copy_from_slice(&ex.features);
            t.column_mut(j).copy_from_slice(&ex.target);
        }
        Ok((x, t))
    }

    fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut h = &self.w1 * x;
        for mut col in h.column_iter_mut() {
            col += &self.b1;
        }
        h.apply(|v| *v = v.tanh());
        let mut y = &self.w2 * &h;
        for mut col in y.column_iter_mut() {
            col += &self.b2;
        }
        (h, y)
    }

    /// One momentum step: `vel = momentum * vel - lr * grad; params += vel`.
    pub(crate) fn momentum_step(&mut self, vel: &mut MlpGradient, grad: &MlpGradient, lr: f64, momentum: f64) {
        fn step(p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, m: f64) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = m * *v - lr * g;
                *p += *v;
            }
        }
        step(self.w1.as_mut_slice(), vel.w1.as_mut_slice(), grad.w1.as_slice(), lr, momentum);
        step(self.b1.as_mut_slice(), vel.b1.as_mut_slice(), grad.b1.as_slice(), lr, momentum);
        step(self.w2.as_mut_slice(), vel.w2.as_mut_slice(), grad.w2.as_slice(), lr, momentum);
        step(self.b2.as_mut_slice(), vel.b2.as_mut_slice(), grad.b2.as_slice(), lr, momentum);
    }

    pub(crate) fn zero_gradient(&self) -> MlpGradient {
        MlpGradient {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
        }
    }
}

/// Loss and exact gradient of the batch loss by backpropagation.
pub fn mlp_gradient(net: &MlpDenoiser, batch: &[&TrainingExample]) -> Result<(f64, MlpGradient)> {
    let (x, t) = net.stack(batch)?;
    if x.iter().any(|v| !v.is_finite()) || t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite training batch".into()));
    }
    let (h, y) = net.forward_batch(&x);
    let scale = 2.0 / (batch.len() * net.out_dim()) as f64;
    let resid = y - t;
    let loss = resid.norm_squared() * scale / 2.0;
    let dy = resid * scale;
    let w2 = &dy * h.transpose();
    let b2 = row_sums(&dy);
    let mut dh = net.w2.tr_mul(&dy);
    dh.zip_apply(&h, |g, a| *g *= 1.0 - a * a);
    let w1 = &dh * x.transpose();
    let b1 = row_sums(&dh);
    Ok((loss, MlpGradient { w1, b1, w2, b2 }))
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    // fixed left-to-right order for bitwise reproducibility
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

impl VPredictor for MlpDenoiser {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent> {
        ensure_same(self.shape, input.state.shape())?;
        if input.condition.is_some() != self.conditioned {
            return Err(Error::ConditionMismatch(if self.conditioned {
                "denoiser expects a condition latent"
            } else {
                "denoiser takes no condition latent"
            }));
        }
        if input.t > self.total_steps {
            return Err(Error::TimestepOutOfRange {
                t: input.t,
                total: self.total_steps,
            });
        }
        let v = self.forward_features(&input.features());
        Latent::from_vec(self.shape, input.state.provenance(), v)
    }
}
