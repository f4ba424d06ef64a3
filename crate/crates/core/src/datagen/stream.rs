//! Per-step task streams with background relabeling.
//!
//! Step `t` trains on every image that contains at least one pixel of a
//! foreground class of `C^t`. Under the disjoint scenario, images that also
//! contain a foreground class of a later step are dropped. Labels outside
//! `C^t` become background; IGNORE is kept.

use super::{ClassSchedule, Dataset, FeatureGrid, Scenario, BACKGROUND, IGNORE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct StepData {
    pub step: usize,
    pub images: Vec<FeatureGrid>,
    /// Index of each image in the source training dataset.
    pub source_indices: Vec<usize>,
    /// Candidates removed by the disjoint filter.
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct TaskStream {
    pub schedule: ClassSchedule,
    pub steps: Vec<StepData>,
    /// Untouched evaluation images with full labels.
    pub eval: Vec<FeatureGrid>,
}

/// Maps every label outside `keep` (and not IGNORE) to background.
pub fn relabel(labels: &[u16], keep: &[u16]) -> Vec<u16> {
    labels
        .iter()
        .map(|&l| {
            if l == IGNORE || keep.contains(&l) {
                l
            } else {
                BACKGROUND
            }
        })
        .collect()
}

pub fn make_task_stream(
    train: &Dataset,
    eval: &Dataset,
    schedule: &ClassSchedule,
) -> Result<TaskStream> {
    if train.num_classes != schedule.total_fg_classes()
        || eval.num_classes != schedule.total_fg_classes()
    {
        return Err(Error::Stream(format!(
            "dataset has {} classes but the schedule expects {}",
            train.num_classes,
            schedule.total_fg_classes()
        )));
    }
    let num_steps = schedule.num_steps();
    let mut steps = Vec::with_capacity(num_steps);
    for t in 1..=num_steps {
        let current = schedule.classes_at(t);
        let foreground: Vec<u16> = current
            .iter()
            .copied()
            .filter(|&c| c != BACKGROUND)
            .collect();
        let future = schedule.classes_between(t + 1, num_steps);
        let mut images = Vec::new();
        let mut source_indices = Vec::new();
        let mut dropped = 0;
        for (i, img) in train.images.iter().enumerate() {
            if !img.contains_any(&foreground) {
                continue;
            }
            if schedule.scenario() == Scenario::Disjoint && img.contains_any(&future) {
                dropped += 1;
                continue;
            }
            images.push(img.with_labels(relabel(img.labels(), current)));
            source_indices.push(i);
        }
        if images.is_empty() {
            return Err(Error::Stream(format!(
                "step {t} has no training images ({} scenario, {dropped} dropped)",
                schedule.scenario()
            )));
        }
        steps.push(StepData {
            step: t,
            images,
            source_indices,
            dropped,
        });
    }
    Ok(TaskStream {
        schedule: schedule.clone(),
        steps,
        eval: eval.images.clone(),
    })
}
