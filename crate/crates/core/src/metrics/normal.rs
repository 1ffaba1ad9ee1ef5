use crate::error::{Error, Result};
use crate::tensor::{ensure_same, ImageTensor};

/// Angular error thresholds in degrees.
pub const ANGLE_THRESHOLDS: [f64; 3] = [11.25, 22.5, 30.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMetrics {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub pct_11_25: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
    pub n_valid: usize,
    /// Valid pixels with a zero prediction, each scored as 180 degrees.
    pub zero_predictions: usize,
}

/// Per-pixel angles in degrees between the renormalized prediction and `gt`.
pub fn angular_errors(pred: &ImageTensor, gt: &ImageTensor, valid: &[bool]) -> Result<(Vec<f64>, usize)> {
    ensure_same(gt.shape(), pred.shape())?;
    if gt.channels() != 3 {
        return Err(Error::shape("3 channels", gt.channels()));
    }
    if valid.len() != gt.shape().pixels() {
        return Err(Error::shape(gt.shape().pixels(), valid.len()));
    }
    let mut angles = Vec::new();
    let mut zeros = 0;
    for ((p, n), &ok) in pred.data().chunks_exact(3).zip(gt.data().chunks_exact(3)).zip(valid) {
        if !ok {
            continue;
        }
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if !(norm > 0.0) {
            zeros += 1;
            angles.push(180.0);
            continue;
        }
        let cos = (p[0] * n[0] + p[1] * n[1] + p[2] * n[2]) / norm;
        angles.push(cos.clamp(-1.0, 1.0).acos().to_degrees());
    }
    Ok((angles, zeros))
}

pub fn normal_metrics(pred: &ImageTensor, gt: &ImageTensor, valid: &[bool]) -> Result<NormalMetrics> {
    let (mut angles, zero_predictions) = angular_errors(pred, gt, valid)?;
    if angles.is_empty() {
        return Err(Error::Degenerate("no valid pixels".into()));
    }
    let n = angles.len();
    let nf = n as f64;
    let mean = angles.iter().sum::<f64>() / nf;
    let rmse = (angles.iter().map(|a| a * a).sum::<f64>() / nf).sqrt();
    let frac = |th: f64| angles.iter().filter(|&&a| a < th).count() as f64 / nf;
    let [a, b, c] = ANGLE_THRESHOLDS.map(frac);
    angles.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        angles[n / 2]
    } else {
        0.5 * (angles[n / 2 - 1] + angles[n / 2])
    };
    Ok(NormalMetrics {
        mean,
        median,
        rmse,
        pct_11_25: a,
        pct_22_5: b,
        pct_30: c,
        n_valid: n,
        zero_predictions,
    })
}
