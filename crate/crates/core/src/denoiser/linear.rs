use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same, Latent, Shape};

use super::train::TrainingExample;
use super::{bucket_of, DenoiserInput, VPredictor};

/// One affine map per timestep bucket, `v = W_b x + c_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDenoiser {
    shape: Shape,
    conditioned: bool,
    total_steps: usize,
    lambda: f64,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Row-stacked features and targets of one bucket.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

/// Stacks examples into an `n x in` feature matrix and an `n x out` target matrix.
pub fn build_design(examples: &[&TrainingExample]) -> Result<Design> {
    let first = examples
        .first()
        .ok_or_else(|| Error::InsufficientData("empty bucket".into()))?;
    let (in_dim, out_dim) = (first.features.len(), first.target.len());
    let n = examples.len();
    let mut x = DMatrix::zeros(n, in_dim);
    let mut y = DMatrix::zeros(n, out_dim);
    for (i, ex) in examples.iter().enumerate() {
        if ex.features.len() != in_dim || ex.target.len() != out_dim {
            return Err(Error::shape(in_dim, ex.features.len()));
        }
        for (j, &v) in ex.features.iter().enumerate() {
            x[(i, j)] = v;
        }
        for (j, &v) in ex.target.iter().enumerate() {
            y[(i, j)] = v;
        }
    }
    Ok(Design { x, y })
}

impl LinearDenoiser {
    pub fn zeros(shape: Shape, conditioned: bool, total_steps: usize, buckets: usize) -> Result<Self> {
        if total_steps == 0 || buckets == 0 {
            return Err(Error::Config("linear denoiser needs T >= 1 and B >= 1".into()));
        }
        let buckets = buckets.min(total_steps);
        let out = shape.len();
        let inp = out * if conditioned { 2 } else { 1 } + 1;
        Ok(Self {
            shape,
            conditioned,
            total_steps,
            lambda: 0.0,
            weights: vec![DMatrix::zeros(out, inp); buckets],
            biases: vec![DVector::zeros(out); buckets],
        })
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

    pub fn buckets(&self) -> usize {
        self.weights.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub(crate) fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Column-major `out x in` weights of bucket `b`.
    pub fn bucket_weights(&self, b: usize) -> &[f64] {
        self.weights[b].as_slice()
    }

    pub fn bucket_bias(&self, b: usize) -> &[f64] {
        self.biases[b].as_slice()
    }

    pub fn set_bucket(&mut self, b: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<()> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        if b >= self.buckets() {
            return Err(Error::Config(format!("bucket {b} out of range")));
        }
        if weights.len() != out * inp {
            return Err(Error::shape(out * inp, weights.len()));
        }
        if bias.len() != out {
            return Err(Error::shape(out, bias.len()));
        }
        self.weights[b] = DMatrix::from_vec(out, inp, weights);
        self.biases[b] = DVector::from_vec(bias);
        Ok(())
    }

    pub fn bucket_for(&self, t: usize) -> Result<usize> {
        bucket_of(t, self.total_steps, self.buckets())
    }

    /// Closed-form ridge fit of bucket `b`.
    ///
    /// Features and targets are centered so the penalty `lambda * |W|^2` leaves
    /// the bias free; the bias is then `mean(y) - W mean(x)`.
    pub fn fit_bucket(&mut self, b: usize, design: &Design, lambda: f64) -> Result<()> {
        let Design { x, y } = design;
        if x.ncols() != self.in_dim() || y.ncols() != self.out_dim() {
            return Err(Error::shape(self.in_dim(), x.ncols()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("ridge lambda must be >= 0, got {lambda}")));
        }
        let n = x.nrows() as f64;
        let x_mean = x.row_mean();
        let y_mean = y.row_mean();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &x_mean;
        }
        let mut yc = y.clone();
        for mut row in yc.row_iter_mut() {
            row -= &y_mean;
        }
        debug_assert!(n > 0.0);

        let mut gram = xc.tr_mul(&xc);
        for i in 0..gram.nrows() {
            gram[(i, i)] += lambda;
        }
        let rhs = xc.tr_mul(&yc);
        let chol = gram
            .clone()
            .cholesky()
            .ok_or(Error::SingularNormalEquations { lambda })?;
        if lambda == 0.0 {
            let l = chol.l_dirty();
            let diag = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]);
            let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
            if !(lo > 1e-12 * hi) {
                return Err(Error::SingularNormalEquations { lambda });
            }
        }
        let w_t = chol.solve(&rhs);
        let w = w_t.transpose();
        let bias = y_mean.transpose() - &w * x_mean.transpose();
        self.weights[b] = w;
        self.biases[b] = bias;
        self.lambda = lambda;
        Ok(())
    }

    /// `sum |y - W x - c|^2 + lambda |W|^2` over a design, the quantity the fit minimizes.
    pub fn ridge_objective(&self, b: usize, design: &Design) -> f64 {
        let pred = &design.x * self.weights[b].transpose();
        let mut sse = 0.0;
        for i in 0..pred.nrows() {
            for j in 0..pred.ncols() {
                let r = design.y[(i, j)] - pred[(i, j)] - self.biases[b][j];
                sse += r * r;
            }
        }
        sse + self.lambda * self.weights[b].norm_squared()
    }

    /// Mean squared error per output element over a design.
    pub fn mse(&self, b: usize, design: &Design) -> f64 {
        let reg = self.lambda * self.weights[b].norm_squared();
        (self.ridge_objective(b, design) - reg) / (design.y.nrows() * design.y.ncols()) as f64
    }

    #[cfg(test)]
    pub(crate) fn weights_mut(&mut self, b: usize) -> &mut DMatrix<f64> {
        &mut self.weights[b]
    }

    pub(crate) fn predict_features(&self, b: usize, features: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(features);
        let y = &self.weights[b] * x + &self.biases[b];
        y.data.into()
    }
}

impl VPredictor for LinearDenoiser {
    fn predict_v(&self, input: &DenoiserInput<'_>) -> Result<Latent> {
        ensure_same(self.shape, input.state.shape())?;
        if input.condition.is_some() != self.conditioned {
            return Err(Error::ConditionMismatch(if self.conditioned {
                "denoiser expects a condition latent"
            } else {
                "denoiser takes no condition latent"
            }));
        }
        let b = self.bucket_for(input.t)?;
        let v = self.predict_features(b, &input.features());
        Latent::from_vec(self.shape, input.state.provenance(), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn examples(n: usize, in_dim: usize, out_dim: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| TrainingExample {
                features: (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target: (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let shape = Shape::new(2, 2, 2);
        let d = LinearDenoiser::zeros(shape, false, 10, 8).unwrap();
        let s = Latent::from_vec(shape, Provenance::Label, (0..8).map(|i| i as f64).collect()).unwrap();
        let input = DenoiserInput::with_alpha_bar(0.5, 4, &s, None).unwrap();
        assert!(d.predict_v(&input).unwrap().data().iter().all(|&v| v == 0.0));
        let input = DenoiserInput::with_alpha_bar(0.5, 11, &s, None).unwrap();
        assert!(d.predict_v(&input).is_err());
    }

    #[test]
    fn condition_presence_must_match() {
        let shape = Shape::new(1, 1, 2);
        let d = LinearDenoiser::zeros(shape, true, 4, 2).unwrap();
        let s = Latent::zeros(shape, Provenance::Label);
        let input = DenoiserInput::with_alpha_bar(0.5, 1, &s, None).unwrap();
        assert!(matches!(d.predict_v(&input), Err(Error::ConditionMismatch(_))));
    }

    #[test]
    fn realizable_affine_map_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let exs: Vec<TrainingExample> = (0..40)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = (0..3)
                    .map(|r| 0.5 + (0..4).map(|c| w[r * 4 + c] * x[c]).sum::<f64>())
                    .collect();
                TrainingExample { features: x, target: y }
            })
            .collect();
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        let design = build_design(&refs).unwrap();
        let mut d = LinearDenoiser::zeros(Shape::new(1, 1, 3), false, 1, 1).unwrap();
        // in_dim for an unconditioned 3-element latent is 4
        d.fit_bucket(0, &design, 0.0).unwrap();
        assert!(d.mse(0, &design) < 1e-24);
        for (r, row) in w.chunks(4).enumerate() {
            for (c, &expect) in row.iter().enumerate() {
                assert!((d.weights[0][(r, c)] - expect).abs() < 1e-10);
            }
            assert!((d.biases[0][r] - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_system_without_ridge_is_rejected() {
        // fewer examples than features
        let exs = examples(3, 4, 3, 1);
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        let design = build_design(&refs).unwrap();
        let mut d = LinearDenoiser::zeros(Shape::new(1, 1, 3), false, 1, 1).unwrap();
        assert!(matches!(
            d.fit_bucket(0, &design, 0.0),
            Err(Error::SingularNormalEquations { .. })
        ));
        d.fit_bucket(0, &design, 1e-3).unwrap();
    }

    #[test]
    fn huge_ridge_predicts_mean_target() {
        let exs = examples(30, 4, 3, 2);
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        let design = build_design(&refs).unwrap();
        let mut d = LinearDenoiser::zeros(Shape::new(1, 1, 3), false, 1, 1).unwrap();
        d.fit_bucket(0, &design, 1e14).unwrap();
        assert!(d.weights[0].amax() < 1e-12);
        let mean = design.y.row_mean();
        for j in 0..3 {
            assert!((d.biases[0][j] - mean[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_fit_is_a_minimum_of_its_objective() {
        let exs = examples(25, 6, 5, 3);
        let refs: Vec<&TrainingExample> = exs.iter().collect();
        let design = build_design(&refs).unwrap();
        let mut d = LinearDenoiser::zeros(Shape::new(1, 1, 5), false, 1, 1).unwrap();
        d.fit_bucket(0, &design, 0.3).unwrap();
        let base = d.ridge_objective(0, &design);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut p = d.clone();
            let dir = DMatrix::from_fn(5, 6, |_, _| rng.random_range(-1.0..1.0));
            *p.weights_mut(0) += dir * 1e-3;
            assert!(p.ridge_objective(0, &design) >= base);
        }
    }
}
