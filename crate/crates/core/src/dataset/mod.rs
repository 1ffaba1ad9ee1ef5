//! Procedural scenes with analytic depth, normal and mask ground truth.

mod render;
mod scene;
mod store;

pub use render::{pixel_center, render, Rendering};
pub use scene::{generate_scene, Object, Primitive, SceneSpec, Vec3, CAMERA_HEIGHT, EXTENT, GROUND_ALBEDO};
pub use store::{load_split, split_and_save, DatasetManifest, Split, MANIFEST_FILE};

use rayon::prelude::*;

use crate::codec::{normalize_target, TargetKind, TargetNormalization};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Domain};
use crate::tensor::ImageTensor;

/// Percentile clip applied to depth before mapping it to `[-1, 1]`.
pub const DEPTH_PERCENTILES: (f64, f64) = (2.0, 98.0);

/// Redraws allowed for one scene index before giving up.
const MAX_REDRAWS: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: ImageTensor,
    /// Normalized to `[-1, 1]`.
    pub depth: ImageTensor,
    pub raw_depth: ImageTensor,
    pub depth_normalization: TargetNormalization,
    pub normal: ImageTensor,
    /// `+1` foreground, `-1` background.
    pub mask: ImageTensor,
    pub valid: Vec<bool>,
}

impl Sample {
    pub fn from_parts(
        rgb: ImageTensor,
        raw_depth: ImageTensor,
        normal: ImageTensor,
        mask: ImageTensor,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let (lo, hi) = DEPTH_PERCENTILES;
        let (depth, depth_normalization) = normalize_target(TargetKind::Depth, &raw_depth, &valid, lo, hi)?;
        Ok(Self {
            rgb,
            depth,
            raw_depth,
            depth_normalization,
            normal,
            mask,
            valid,
        })
    }

    pub fn from_rendering(r: Rendering) -> Result<Self> {
        Self::from_parts(r.rgb, r.depth, r.normal, r.mask, r.valid)
    }

    /// The normalized training target for `kind`, invalid pixels filled.
    pub fn target(&self, kind: TargetKind) -> Result<ImageTensor> {
        match kind {
            TargetKind::Depth => Ok(self.depth.clone()),
            TargetKind::Normal => Ok(normalize_target(kind, &self.normal, &self.valid, 0.0, 100.0)?.0),
            TargetKind::Mask => {
                let unit = ImageTensor::from_vec(self.mask.shape(), self.mask.data().iter().map(|m| (m + 1.0) / 2.0).collect())?;
                Ok(normalize_target(kind, &unit, &vec![true; self.valid.len()], 0.0, 100.0)?.0)
            }
        }
    }
}

/// Renders `n` scenes; scene `i` depends only on `(seed, i)`.
///
/// Scenes whose depth range collapses under the percentile clip are redrawn.
pub fn generate_dataset(n: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Sample>> {
    if height < 8 || width < 8 {
        return Err(Error::Config(format!("resolution {height}x{width} is below 8x8")));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..MAX_REDRAWS {
                let spec = generate_scene(&mut keyed_rng(seed, Domain::Scene, i, attempt));
                match Sample::from_rendering(render(&spec, height, width)) {
                    Ok(s) => return Ok(s),
                    Err(Error::Degenerate(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Degenerate(format!("scene {i}: no usable draw in {MAX_REDRAWS} attempts")))
        })
        .collect()
}
