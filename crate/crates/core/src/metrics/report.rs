use std::path::Path;

use crate::codec::TargetKind;
use crate::error::Result;
use crate::raster::write_bytes;

use super::depth::{aggregate_depth, DepthMetrics};
use super::mask::MaskMetrics;
use super::normal::NormalMetrics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskMetrics {
    Depth(DepthMetrics),
    Normal(NormalMetrics),
    Mask(MaskMetrics),
}

pub const DEPTH_COLUMNS: &[&str] = &["absrel", "delta1", "n_valid", "scale", "shift", "degenerate"];
pub const NORMAL_COLUMNS: &[&str] = &["mean", "median", "rmse", "pct_11_25", "pct_22_5", "pct_30", "n_valid", "zero_pred"];
pub const MASK_COLUMNS: &[&str] = &["mae", "max_f_beta", "sad", "mse", "mad", "gt_empty"];

pub fn columns(task: TargetKind) -> &'static [&'static str] {
    match task {
        TargetKind::Depth => DEPTH_COLUMNS,
        TargetKind::Normal => NORMAL_COLUMNS,
        TargetKind::Mask => MASK_COLUMNS,
    }
}

impl TaskMetrics {
    pub fn task(&self) -> TargetKind {
        match self {
            TaskMetrics::Depth(_) => TargetKind::Depth,
            TaskMetrics::Normal(_) => TargetKind::Normal,
            TaskMetrics::Mask(_) => TargetKind::Mask,
        }
    }

    fn values(&self) -> Vec<String> {
        match self {
            TaskMetrics::Depth(m) => vec![
                m.absrel.to_string(),
                m.delta1.to_string(),
                m.n_valid.to_string(),
                m.alignment.scale.to_string(),
                m.alignment.shift.to_string(),
                (m.degenerate() as u8).to_string(),
            ],
            TaskMetrics::Normal(m) => vec![
                m.mean.to_string(),
                m.median.to_string(),
                m.rmse.to_string(),
                m.pct_11_25.to_string(),
                m.pct_22_5.to_string(),
                m.pct_30.to_string(),
                m.n_valid.to_string(),
                m.zero_predictions.to_string(),
            ],
            TaskMetrics::Mask(m) => vec![
                m.mae.to_string(),
                m.max_f_beta.to_string(),
                m.sad.to_string(),
                m.mse.to_string(),
                m.mad.to_string(),
                (m.gt_empty as u8).to_string(),
            ],
        }
    }
}

/// Per-image metrics of one task on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: TargetKind,
    pub split: String,
    pub rows: Vec<(String, TaskMetrics)>,
    /// Pool delta1 over pixels instead of averaging it per image.
    pub pooled_delta: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    s / n as f64
}

impl MetricReport {
    pub fn new(task: TargetKind, split: impl Into<String>, pooled_delta: bool) -> Self {
        Self {
            task,
            split: split.into(),
            rows: Vec::new(),
            pooled_delta,
        }
    }

    pub fn push(&mut self, image: impl Into<String>, m: TaskMetrics) {
        debug_assert_eq!(m.task(), self.task);
        self.rows.push((image.into(), m));
    }

    /// Aggregate values in column order: means over images, sums for counts.
    /// Degenerate depth rows are left out of every depth column except the count.
    pub fn aggregate(&self) -> Vec<f64> {
        let rows = || self.rows.iter().map(|(_, m)| m);
        match self.task {
            TargetKind::Depth => {
                let ms: Vec<DepthMetrics> = rows()
                    .filter_map(|m| match m {
                        TaskMetrics::Depth(d) => Some(*d),
                        _ => None,
                    })
                    .collect();
                let usable: Vec<DepthMetrics> = ms.iter().filter(|m| !m.degenerate()).copied().collect();
                let (absrel, delta1) = aggregate_depth(&usable, self.pooled_delta).unwrap_or((f64::NAN, f64::NAN));
                vec![
                    absrel,
                    delta1,
                    usable.iter().map(|m| m.n_valid).sum::<usize>() as f64,
                    mean(usable.iter().map(|m| m.alignment.scale)),
                    mean(usable.iter().map(|m| m.alignment.shift)),
                    (ms.len() - usable.len()) as f64,
                ]
            }
            TargetKind::Normal => {
                let ms: Vec<NormalMetrics> = rows()
                    .filter_map(|m| match m {
                        TaskMetrics::Normal(d) => Some(*d),
                        _ => None,
                    })
                    .collect();
                vec![
                    mean(ms.iter().map(|m| m.mean)),
                    mean(ms.iter().map(|m| m.median)),
                    mean(ms.iter().map(|m| m.rmse)),
                    mean(ms.iter().map(|m| m.pct_11_25)),
                    mean(ms.iter().map(|m| m.pct_22_5)),
                    mean(ms.iter().map(|m| m.pct_30)),
                    ms.iter().map(|m| m.n_valid).sum::<usize>() as f64,
                    ms.iter().map(|m| m.zero_predictions).sum::<usize>() as f64,
                ]
            }
            TargetKind::Mask => {
                let ms: Vec<MaskMetrics> = rows()
                    .filter_map(|m| match m {
                        TaskMetrics::Mask(d) => Some(*d),
                        _ => None,
                    })
                    .collect();
                vec![
                    mean(ms.iter().map(|m| m.mae)),
                    mean(ms.iter().map(|m| m.max_f_beta)),
                    mean(ms.iter().map(|m| m.sad)),
                    mean(ms.iter().map(|m| m.mse)),
                    mean(ms.iter().map(|m| m.mad)),
                    ms.iter().filter(|m| m.gt_empty).count() as f64,
                ]
            }
        }
    }

    /// Aggregate value of a named column.
    pub fn aggregate_of(&self, column: &str) -> Option<f64> {
        let i = columns(self.task).iter().position(|c| *c == column)?;
        self.aggregate().get(i).copied()
    }

    /// `split,image,task,<columns>`; one row per image, then an `image = mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("split,image,task,{}\n", columns(self.task).join(","));
        for (image, m) in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", self.split, image, self.task, m.values().join(",")));
        }
        let agg: Vec<String> = self.aggregate().iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{},mean,{},{}\n", self.split, self.task, agg.join(",")));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_csv().as_bytes())
    }
}
