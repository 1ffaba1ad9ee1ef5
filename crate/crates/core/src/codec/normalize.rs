use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetKind {
    Depth,
    Normal,
    Mask,
}

impl TargetKind {
    pub fn channels(&self) -> usize {
        match self {
            TargetKind::Depth | TargetKind::Mask => 1,
            TargetKind::Normal => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Depth => "depth",
            TargetKind::Normal => "normal",
            TargetKind::Mask => "mask",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(TargetKind::Depth),
            "normal" => Ok(TargetKind::Normal),
            "mask" => Ok(TargetKind::Mask),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// The affine map applied by [`normalize_target`], kept for inversion.
///
/// Normalized values are `(clamp(v, lo, hi) - lo) / (hi - lo) * 2 - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNormalization {
    pub kind: TargetKind,
    pub lo: f64,
    pub hi: f64,
}

impl TargetNormalization {
    pub fn forward(&self, v: f64) -> f64 {
        (v.clamp(self.lo, self.hi) - self.lo) / (self.hi - self.lo) * 2.0 - 1.0
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (v + 1.0) * 0.5 * (self.hi - self.lo) + self.lo
    }

    pub fn invert(&self, map: &ImageTensor) -> ImageTensor {
        let data = map.data().iter().map(|&v| self.inverse(v)).collect();
        ImageTensor::from_vec(map.shape(), data).expect("same shape")
    }
}

/// Percentile with linear interpolation between closest ranks; `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Maps a raw target raster into `[-1, 1]`.
///
/// Depth is clipped to the `[low_pct, high_pct]` percentile range of the valid
/// pixels and mapped affinely. Unit normals are already in range and pass
/// through. Masks in `[0, 1]` map to `[-1, 1]`. Invalid pixels are filled with
/// the mean of the normalized valid pixels.
pub fn normalize_target(
    kind: TargetKind,
    map: &ImageTensor,
    valid: &[bool],
    low_pct: f64,
    high_pct: f64,
) -> Result<(ImageTensor, TargetNormalization)> {
    if map.channels() != kind.channels() {
        return Err(Error::shape(
            format!("{} channels for {kind}", kind.channels()),
            map.channels(),
        ));
    }
    if valid.len() != map.shape().pixels() {
        return Err(Error::shape(map.shape().pixels(), valid.len()));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(Error::Degenerate("no valid pixels".into()));
    }

    let norm = match kind {
        TargetKind::Depth => {
            if !(0.0..=100.0).contains(&low_pct) || !(0.0..=100.0).contains(&high_pct) || low_pct >= high_pct {
                return Err(Error::Config(format!(
                    "invalid percentile range ({low_pct}, {high_pct})"
                )));
            }
            let mut values: Vec<f64> = map
                .data()
                .iter()
                .zip(valid)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Degenerate("non-finite depth on a valid pixel".into()));
            }
            values.sort_by(f64::total_cmp);
            let lo = percentile(&values, low_pct);
            let hi = percentile(&values, high_pct);
            if !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)) {
                return Err(Error::Degenerate(format!(
                    "percentile range [{lo}, {hi}] is empty"
                )));
            }
            TargetNormalization { kind, lo, hi }
        }
        TargetKind::Normal => TargetNormalization { kind, lo: -1.0, hi: 1.0 },
        TargetKind::Mask => TargetNormalization { kind, lo: 0.0, hi: 1.0 },
    };

    let k = map.channels();
    let mut out = match kind {
        TargetKind::Normal => map.clone(),
        _ => ImageTensor::from_vec(map.shape(), map.data().iter().map(|&v| norm.forward(v)).collect())?,
    };
    fill_invalid(&mut out, valid);
    debug_assert_eq!(out.channels(), k);
    Ok((out, norm))
}

/// Overwrites invalid pixels with the per-channel mean of the valid ones.
pub fn fill_invalid(map: &mut ImageTensor, valid: &[bool]) {
    let k = map.channels();
    let mut sums = vec![0.0; k];
    let mut count = 0usize;
    for (px, &ok) in map.data().chunks_exact(k).zip(valid) {
        if ok {
            count += 1;
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
    }
    if count == 0 || count == valid.len() {
        return;
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    for (px, &ok) in map.data_mut().chunks_exact_mut(k).zip(valid) {
        if !ok {
            px.copy_from_slice(&means);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn depth_map(values: Vec<f64>) -> ImageTensor {
        let n = values.len();
        ImageTensor::from_vec(Shape::new(1, n, 1), values).unwrap()
    }

    #[test]
    fn constant_depth_is_degenerate() {
        let m = depth_map(vec![3.0; 10]);
        assert!(matches!(
            normalize_target(TargetKind::Depth, &m, &[true; 10], 2.0, 98.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn all_invalid_is_an_error() {
        let m = depth_map(vec![1.0, 2.0]);
        assert!(normalize_target(TargetKind::Depth, &m, &[false, false], 2.0, 98.0).is_err());
    }

    #[test]
    fn uniform_depth_endpoints() {
        // 1001 samples uniform on [0, 10]: the 2nd/98th percentiles are 0.2 and 9.8
        let values: Vec<f64> = (0..=1000).map(|i| i as f64 / 100.0).collect();
        let m = depth_map(values.clone());
        let (out, norm) = normalize_target(TargetKind::Depth, &m, &vec![true; 1001], 2.0, 98.0).unwrap();
        assert!((norm.lo - 0.2).abs() < 1e-12);
        assert!((norm.hi - 9.8).abs() < 1e-12);
        assert_eq!(out.data()[20], -1.0);
        assert_eq!(out.data()[980], 1.0);
        assert_eq!(out.data()[0], -1.0);
        assert_eq!(out.data()[1000], 1.0);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn inverse_recovers_unclipped_pixels() {
        let values: Vec<f64> = (0..400).map(|i| 1.0 + ((i * 7919) % 400) as f64 * 0.013).collect();
        let m = depth_map(values.clone());
        let (out, norm) = normalize_target(TargetKind::Depth, &m, &vec![true; 400], 2.0, 98.0).unwrap();
        let back = norm.invert(&out);
        for (orig, rec) in values.iter().zip(back.data()) {
            if *orig >= norm.lo && *orig <= norm.hi {
                assert!((orig - rec).abs() < 1e-12);
            } else {
                assert!((rec - orig.clamp(norm.lo, norm.hi)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_pixels_excluded_and_filled() {
        let m = depth_map(vec![1.0, 2.0, 3.0, 1000.0]);
        let (out, _) = normalize_target(TargetKind::Depth, &m, &[true, true, true, false], 0.0, 100.0).unwrap();
        assert_eq!(&out.data()[..3], &[-1.0, 0.0, 1.0]);
        assert_eq!(out.data()[3], 0.0);
    }

    #[test]
    fn masks_map_to_signed_range() {
        let m = depth_map(vec![0.0, 1.0, 1.0]);
        let (out, _) = normalize_target(TargetKind::Mask, &m, &[true; 3], 2.0, 98.0).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0, 1.0]);
    }
}
