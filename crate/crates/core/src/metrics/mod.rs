//! Depth, surface-normal and mask evaluation.

mod depth;
mod mask;
mod normal;
mod report;

pub use depth::{aggregate_depth, align_affine, depth_metrics, AffineAlignment, AlignMode, DepthEvalConfig, DepthMetrics};
pub use mask::{f_beta_curve, mask_metrics, MaskMetrics, F_BETA_SQ, F_THRESHOLDS};
pub use normal::{angular_errors, normal_metrics, NormalMetrics, ANGLE_THRESHOLDS};
pub use report::{columns, MetricReport, TaskMetrics, DEPTH_COLUMNS, MASK_COLUMNS, NORMAL_COLUMNS};
