use serde::{Deserialize, Serialize};

use super::confusion::ConfusionMatrix;
use crate::datagen::ClassSchedule;
use crate::error::{Error, Result};

/// Per-class IoU (fraction) and grouped mIoU (percent) after one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub step: usize,
    pub per_class_iou: Vec<Option<f64>>,
    /// Over `C^1`, background included.
    pub miou_init: Option<f64>,
    /// Over `C^{2:t}`.
    pub miou_incr: Option<f64>,
    pub miou_all: Option<f64>,
}

fn group_mean(ious: &[Option<f64>], range: std::ops::Range<usize>) -> Option<f64> {
    let defined: Vec<f64> = ious[range].iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| 100.0 * defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Groups per-class IoU of `C^{1:seen_steps}` into the initial, incremental
/// and overall mIoU. Classes with an empty union are left out of the means.
pub fn miou_groups(
    conf: &ConfusionMatrix,
    schedule: &ClassSchedule,
    seen_steps: usize,
) -> Result<MetricsReport> {
    if seen_steps == 0 || seen_steps > schedule.num_steps() {
        return Err(Error::validation(
            "metrics",
            format!("seen_steps {seen_steps} out of range"),
        ));
    }
    let k = schedule.seen_classes(seen_steps);
    if conf.num_classes() != k {
        return Err(Error::validation(
            "metrics",
            format!(
                "confusion covers {} classes, C^(1:{seen_steps}) has {k}",
                conf.num_classes()
            ),
        ));
    }
    let ious: Vec<Option<f64>> = (0..k).map(|c| conf.iou(c)).collect();
    let init = schedule.classes_at(1).len();
    Ok(MetricsReport {
        step: seen_steps,
        miou_init: group_mean(&ious, 0..init),
        miou_incr: group_mean(&ious, init..k),
        miou_all: group_mean(&ious, 0..k),
        per_class_iou: ious,
    })
}
