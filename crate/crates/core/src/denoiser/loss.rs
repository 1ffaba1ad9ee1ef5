use crate::codec::{gather_patch, scatter_patch, LatentCodec, MapDecoder};
use crate::error::{Error, Result};
use crate::tensor::{ensure_same, ImageTensor, Latent, Shape};

/// Mean over valid elements of `(|e| + e^2) / 2` with `e = pred - gt`.
pub fn masked_map_loss(pred: &ImageTensor, gt: &ImageTensor, valid: &[bool]) -> Result<f64> {
    ensure_same(gt.shape(), pred.shape())?;
    if valid.len() != gt.shape().pixels() {
        return Err(Error::shape(gt.shape().pixels(), valid.len()));
    }
    let k = gt.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, g), &ok) in pred.data().chunks_exact(k).zip(gt.data().chunks_exact(k)).zip(valid) {
        if ok {
            for (a, b) in p.iter().zip(g) {
                let e = a - b;
                sum += 0.5 * (e.abs() + e * e);
            }
            count += k;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("masked loss over an empty valid mask".into()));
    }
    Ok(sum / count as f64)
}

/// Per-patch affine decoder `patch = W z + c`, trainable on [`masked_map_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeHead {
    patch: usize,
    latent_channels: usize,
    out_channels: usize,
    /// `d x c`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecodeHeadExample {
    pub latent: Latent,
    pub gt: ImageTensor,
    pub valid: Vec<bool>,
}

impl DecodeHead {
    /// Starts from the codec's own decoder, so an untrained head decodes identically.
    pub fn from_codec(codec: &LatentCodec) -> Self {
        Self {
            patch: codec.patch(),
            latent_channels: codec.latent_channels(),
            out_channels: codec.in_channels(),
            weights: codec.decode_basis().to_vec(),
            bias: codec.mean().to_vec(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.out_channels
    }

    /// Full-batch subgradient descent; returns the loss before each epoch and after the last.
    pub fn fit(&mut self, examples: &[DecodeHeadExample], epochs: usize, learning_rate: f64) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::InsufficientData("no decode-head examples".into()));
        }
        let (d, c) = (self.patch_dim(), self.latent_channels);
        let mut trace = Vec::with_capacity(epochs + 1);
        for epoch in 0..=epochs {
            let mut gw = vec![0.0; d * c];
            let mut gb = vec![0.0; d];
            let mut total = 0.0;
            for ex in examples {
                let pred = self.decode_map(&ex.latent)?;
                total += masked_map_loss(&pred, &ex.gt, &ex.valid)?;
                let n_valid = ex.valid.iter().filter(|&&v| v).count() * self.out_channels;
                let mut grad = ImageTensor::zeros(pred.shape());
                let k = self.out_channels;
                for (i, &ok) in ex.valid.iter().enumerate() {
                    if ok {
                        for ch in 0..k {
                            let e = pred.data()[i * k + ch] - ex.gt.data()[i * k + ch];
                            grad.data_mut()[i * k + ch] = 0.5 * (sign(e) + 2.0 * e) / n_valid as f64;
                        }
                    }
                }
                let zs = ex.latent.shape();
                let mut gpatch = vec![0.0; d];
                for gy in 0..zs.height {
                    for gx in 0..zs.width {
                        gather_patch(&grad, self.patch, gy, gx, &mut gpatch);
                        let start = (gy * zs.width + gx) * c;
                        let code = &ex.latent.data()[start..start + c];
                        for (r, &g) in gpatch.iter().enumerate() {
                            gb[r] += g;
                            for (j, &zj) in code.iter().enumerate() {
                                gw[r * c + j] += g * zj;
                            }
                        }
                    }
                }
            }
            let n = examples.len() as f64;
            trace.push(total / n);
            if !trace[epoch].is_finite() {
                return Err(Error::Diverged { epoch, loss: trace[epoch] });
            }
            if epoch == epochs {
                break;
            }
            for (w, g) in self.weights.iter_mut().zip(&gw) {
                *w -= learning_rate * g / n;
            }
            for (b, g) in self.bias.iter_mut().zip(&gb) {
                *b -= learning_rate * g / n;
            }
        }
        Ok(trace)
    }
}

fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl MapDecoder for DecodeHead {
    fn decode_map(&self, z: &Latent) -> Result<ImageTensor> {
        let zs = z.shape();
        if zs.channels != self.latent_channels {
            return Err(Error::shape(self.latent_channels, zs.channels));
        }
        let (d, c) = (self.patch_dim(), self.latent_channels);
        let mut out = ImageTensor::zeros(Shape::new(zs.height * self.patch, zs.width * self.patch, self.out_channels));
        let mut buf = vec![0.0; d];
        for gy in 0..zs.height {
            for gx in 0..zs.width {
                let start = (gy * zs.width + gx) * c;
                let code = &z.data()[start..start + c];
                for ((v, row), b) in buf.iter_mut().zip(self.weights.chunks_exact(c)).zip(&self.bias) {
                    *v = row.iter().zip(code).map(|(w, x)| w * x).sum::<f64>() + b;
                }
                scatter_patch(&mut out, self.patch, gy, gx, &buf);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fit_codec;
    use crate::rng::{keyed_rng, Domain};
    use crate::tensor::Provenance;
    use rand::Rng;

    fn map(seed: u64, shape: Shape) -> ImageTensor {
        let mut rng = keyed_rng(seed, Domain::Init, 0, 0);
        ImageTensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn equal_maps_have_zero_loss() {
        let m = map(1, Shape::new(4, 4, 3));
        assert_eq!(masked_map_loss(&m, &m, &[true; 16]).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = map(1, Shape::new(2, 2, 1));
        assert!(masked_map_loss(&m, &m, &[false; 4]).is_err());
    }

    #[test]
    fn half_valid_constant_error() {
        let gt = map(2, Shape::new(4, 4, 1));
        let e = 0.3;
        let mut pred = gt.clone();
        pred.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += if i % 2 == 0 { e } else { 100.0 });
        let valid: Vec<bool> = (0..16).map(|i| i % 2 == 0).collect();
        let loss = masked_map_loss(&pred, &gt, &valid).unwrap();
        assert!((loss - (e + e * e) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_head_matches_codec_and_training_reduces_loss() {
        let shape = Shape::new(8, 8, 1);
        let maps: Vec<ImageTensor> = (0..6).map(|i| map(10 + i, shape)).collect();
        let codec = fit_codec(&maps, 2, 2, 0).unwrap();
        let mut head = DecodeHead::from_codec(&codec);
        let examples: Vec<DecodeHeadExample> = maps
            .iter()
            .map(|m| DecodeHeadExample {
                latent: codec.encode(m, Provenance::Label).unwrap(),
                gt: m.clone(),
                valid: (0..64).map(|i| i % 5 != 0).collect(),
            })
            .collect();
        let z = &examples[0].latent;
        assert!(head.decode_map(z).unwrap().max_abs_diff(&codec.decode(z).unwrap()).unwrap() < 1e-12);
        let trace = head.fit(&examples, 30, 0.5).unwrap();
        assert!(trace.last().unwrap() < &trace[0], "{trace:?}");
    }
}
