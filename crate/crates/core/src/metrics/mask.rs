use crate::error::{Error, Result};
use crate::tensor::{ensure_same, ImageTensor};

pub const F_BETA_SQ: f64 = 0.3;
pub const F_THRESHOLDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskMetrics {
    pub mae: f64,
    pub max_f_beta: f64,
    pub sad: f64,
    pub mse: f64,
    /// Same quantity as `mae`, under its matting name.
    pub mad: f64,
    /// Ground truth has no foreground; `max_f_beta` is reported as 0.
    pub gt_empty: bool,
}

/// F-measure at `pred >= i / 255` for each of the 256 thresholds.
pub fn f_beta_curve(pred: &ImageTensor, gt: &ImageTensor) -> Result<Vec<f64>> {
    ensure_same(gt.shape(), pred.shape())?;
    let positives = gt.data().iter().filter(|&&g| g >= 0.5).count();
    Ok((0..F_THRESHOLDS)
        .map(|i| {
            let th = i as f64 / (F_THRESHOLDS - 1) as f64;
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&p, &g) in pred.data().iter().zip(gt.data()) {
                if p >= th {
                    if g >= 0.5 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let recall = if positives > 0 { tp as f64 / positives as f64 } else { 0.0 };
            let denom = F_BETA_SQ * precision + recall;
            if denom > 0.0 {
                (1.0 + F_BETA_SQ) * precision * recall / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// `pred` in `[0, 1]`; `gt` binary (or an alpha matte for SAD/MSE/MAD).
pub fn mask_metrics(pred: &ImageTensor, gt: &ImageTensor) -> Result<MaskMetrics> {
    ensure_same(gt.shape(), pred.shape())?;
    if gt.data().is_empty() {
        return Err(Error::Degenerate("empty mask".into()));
    }
    if pred.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("mask predictions must lie in [0, 1]".into()));
    }
    let n = gt.data().len() as f64;
    let (mut sad, mut sse) = (0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let e = p - g;
        sad += e.abs();
        sse += e * e;
    }
    let gt_empty = !gt.data().iter().any(|&g| g >= 0.5);
    let max_f_beta = if gt_empty {
        0.0
    } else {
        f_beta_curve(pred, gt)?.into_iter().fold(0.0, f64::max)
    };
    Ok(MaskMetrics {
        mae: sad / n,
        max_f_beta,
        sad,
        mse: sse / n,
        mad: sad / n,
        gt_empty,
    })
}
