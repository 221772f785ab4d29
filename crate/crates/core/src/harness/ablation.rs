use serde::{Deserialize, Serialize};

use super::{evaluate_accumulative, EvalConfig, EvalReport, Method};
use crate::error::Result;
use crate::segments::DataSegment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Method,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub wall_secs_mean: f64,
    /// Training time of the ungated variant divided by this variant's.
    pub speedup_vs_none: f64,
    pub usage_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub report: EvalReport,
}

pub const ABLATION_VARIANTS: [Method; 4] = [
    Method::Quilt,
    Method::NoDisparity,
    Method::NoGain,
    Method::NoGates,
];

/// Accumulative evaluation under the four gate configurations.
pub fn run_ablation(
    segments: &[DataSegment],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<AblationTable> {
    let cfg = EvalConfig {
        methods: ABLATION_VARIANTS.to_vec(),
        ..cfg.clone()
    };
    let report = evaluate_accumulative(segments, num_classes, &cfg)?;
    let none_wall = report
        .summary_for(Method::NoGates)
        .map_or(0.0, |s| s.wall_secs_mean);
    let rows = ABLATION_VARIANTS
        .iter()
        .filter_map(|&m| report.summary_for(m))
        .map(|s| AblationRow {
            variant: s.method,
            accuracy_mean: s.accuracy_mean,
            accuracy_std: s.accuracy_std,
            wall_secs_mean: s.wall_secs_mean,
            speedup_vs_none: if s.method == Method::NoGates {
                1.0
            } else if s.wall_secs_mean > 0.0 {
                none_wall / s.wall_secs_mean
            } else {
                f64::INFINITY
            },
            usage_mean: s.usage_mean,
        })
        .collect();
    Ok(AblationTable { rows, report })
}
