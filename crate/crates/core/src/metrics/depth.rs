use crate::error::{Error, Result};
use crate::tensor::{ensure_same, ImageTensor};

/// `aligned = scale * pred + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineAlignment {
    pub scale: f64,
    pub shift: f64,
}

impl AffineAlignment {
    pub const IDENTITY: AffineAlignment = AffineAlignment { scale: 1.0, shift: 0.0 };

    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }

    /// A non-positive scale inverts depth ordering.
    pub fn is_degenerate(&self) -> bool {
        !(self.scale > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    /// Least squares against depth.
    #[default]
    Depth,
    /// Least squares against inverse depth; aligned depth is the reciprocal.
    InverseDepth,
    /// Diagnostic: metrics of the raw prediction.
    None,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(AlignMode::Depth),
            "inverse_depth" => Ok(AlignMode::InverseDepth),
            "none" => Ok(AlignMode::None),
            other => Err(Error::Config(format!("unknown alignment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEvalConfig {
    pub align: AlignMode,
    pub delta_threshold: f64,
    /// Aligned depth is clamped to at least this before ratios are taken.
    pub floor: f64,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self {
            align: AlignMode::Depth,
            delta_threshold: 1.25,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub absrel: f64,
    pub delta1: f64,
    pub n_valid: usize,
    /// Pixels counted in `delta1`, for pooled aggregation.
    pub delta1_hits: usize,
    pub alignment: AffineAlignment,
}

impl DepthMetrics {
    pub fn degenerate(&self) -> bool {
        self.alignment.is_degenerate()
    }
}

fn valid_pairs<'a>(pred: &'a ImageTensor, gt: &'a ImageTensor, valid: &'a [bool]) -> Result<impl Iterator<Item = (f64, f64)> + Clone + 'a> {
    ensure_same(gt.shape(), pred.shape())?;
    if gt.channels() != 1 {
        return Err(Error::shape("1 channel", gt.channels()));
    }
    if valid.len() != gt.data().len() {
        return Err(Error::shape(gt.data().len(), valid.len()));
    }
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|((&p, &g), _)| (p, g)))
}

/// Closed-form least squares `(s, c) = argmin sum (s * pred + c - gt)^2` over valid pixels.
pub fn align_affine(pred: &ImageTensor, gt: &ImageTensor, valid: &[bool]) -> Result<AffineAlignment> {
    align_pairs(valid_pairs(pred, gt, valid)?)
}

fn align_pairs(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Result<AffineAlignment> {
    let (mut n, mut sp, mut sg) = (0usize, 0.0, 0.0);
    for (p, g) in pairs.clone() {
        n += 1;
        sp += p;
        sg += g;
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("alignment needs 2 valid pixels, got {n}")));
    }
    let (mp, mg) = (sp / n as f64, sg / n as f64);
    let (mut spp, mut spg) = (0.0, 0.0);
    for (p, g) in pairs {
        let dp = p - mp;
        spp += dp * dp;
        spg += dp * (g - mg);
    }
    if !(spp > 0.0) {
        return Err(Error::Degenerate("prediction is constant over valid pixels".into()));
    }
    let scale = spg / spp;
    Ok(AffineAlignment {
        scale,
        shift: mg - scale * mp,
    })
}

/// AbsRel and delta1 of the aligned prediction against positive ground truth.
pub fn depth_metrics(pred: &ImageTensor, gt: &ImageTensor, valid: &[bool], cfg: &DepthEvalConfig) -> Result<DepthMetrics> {
    let pairs = valid_pairs(pred, gt, valid)?;
    if pairs.clone().any(|(_, g)| !(g > 0.0)) {
        return Err(Error::Degenerate("ground-truth depth must be positive on valid pixels".into()));
    }
    let (alignment, aligned): (AffineAlignment, Box<dyn Fn(f64) -> f64>) = match cfg.align {
        AlignMode::Depth => {
            let a = align_pairs(pairs.clone())?;
            (a, Box::new(move |p| a.apply(p).max(cfg.floor)))
        }
        AlignMode::InverseDepth => {
            let a = align_pairs(pairs.clone().map(|(p, g)| (p, 1.0 / g)))?;
            (a, Box::new(move |p| 1.0 / a.apply(p).max(cfg.floor)))
        }
        AlignMode::None => (AffineAlignment::IDENTITY, Box::new(move |p: f64| p.max(cfg.floor))),
    };
    let (mut n, mut rel, mut hits) = (0usize, 0.0, 0usize);
    for (p, g) in pairs {
        let d = aligned(p);
        n += 1;
        rel += (d - g).abs() / g;
        if (d / g).max(g / d) < cfg.delta_threshold {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("no valid pixels".into()));
    }
    Ok(DepthMetrics {
        absrel: rel / n as f64,
        delta1: hits as f64 / n as f64,
        n_valid: n,
        delta1_hits: hits,
        alignment,
    })
}

/// Mean over images of AbsRel and delta1; `pooled` replaces the delta1 mean by
/// the fraction over all pixels of all images.
pub fn aggregate_depth(per_image: &[DepthMetrics], pooled: bool) -> Option<(f64, f64)> {
    if per_image.is_empty() {
        return None;
    }
    let n = per_image.len() as f64;
    let absrel = per_image.iter().map(|m| m.absrel).sum::<f64>() / n;
    let delta1 = if pooled {
        let hits: usize = per_image.iter().map(|m| m.delta1_hits).sum();
        let total: usize = per_image.iter().map(|m| m.n_valid).sum();
        hits as f64 / total as f64
    } else {
        per_image.iter().map(|m| m.delta1).sum::<f64>() / n
    };
    Some((absrel, delta1))
}
