//! Synthetic per-pixel segmentation data, class schedules and per-step task
//! streams.

pub mod cssf;
pub mod schedule;
pub mod stream;
pub mod synth;

pub use cssf::{load_cssf, read_cssf, save_cssf, write_cssf};
pub use schedule::{build_schedule, ClassSchedule, Scenario, Setting, BACKGROUND};
pub use stream::{make_task_stream, StepData, TaskStream};
pub use synth::{generate_dataset, plan_image, ObjectRect, SynthParams};

use crate::error::{Error, Result};

/// Label of void pixels; skipped by the loss and by confusion counting.
pub const IGNORE: u16 = u16::MAX;

/// One image: an `H x W` grid of `d`-dimensional features plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    feat_dim: usize,
    features: Vec<f32>,
    labels: Vec<u16>,
}

impl FeatureGrid {
    /// Checks extents and finiteness. Label range is checked by [`Dataset`].
    pub fn new(
        height: usize,
        width: usize,
        feat_dim: usize,
        features: Vec<f32>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || feat_dim == 0 {
            return Err(Error::validation(
                "datagen",
                "feature grid extents must be >= 1",
            ));
        }
        if features.len() != pixels * feat_dim {
            return Err(Error::validation(
                "datagen",
                format!(
                    "expected {} feature values, got {}",
                    pixels * feat_dim,
                    features.len()
                ),
            ));
        }
        if labels.len() != pixels {
            return Err(Error::validation(
                "datagen",
                format!("expected {pixels} labels, got {}", labels.len()),
            ));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "datagen",
                format!("non-finite feature at index {i}"),
            ));
        }
        Ok(Self {
            height,
            width,
            feat_dim,
            features,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Feature vector of pixel `p` (row-major index).
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.features[p * self.feat_dim..(p + 1) * self.feat_dim]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Same features, new labels.
    pub fn with_labels(&self, labels: Vec<u16>) -> Self {
        assert_eq!(labels.len(), self.labels.len());
        Self {
            labels,
            ..self.clone()
        }
    }

    pub fn contains_any(&self, classes: &[u16]) -> bool {
        self.labels.iter().any(|l| classes.contains(l))
    }
}

/// A collection of equally-shaped images over `N` foreground classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub feat_dim: usize,
    pub images: Vec<FeatureGrid>,
}

impl Dataset {
    pub fn new(
        num_classes: usize,
        height: usize,
        width: usize,
        feat_dim: usize,
        images: Vec<FeatureGrid>,
    ) -> Result<Self> {
        for (i, img) in images.iter().enumerate() {
            if img.height != height || img.width != width || img.feat_dim != feat_dim {
                return Err(Error::validation(
                    "datagen",
                    format!("image {i} has mismatched extents"),
                ));
            }
            if let Some(l) = img
                .labels
                .iter()
                .find(|&&l| l != IGNORE && l as usize > num_classes)
            {
                return Err(Error::validation(
                    "datagen",
                    format!("image {i} has label {l} outside 0..={num_classes}"),
                ));
            }
        }
        Ok(Self {
            num_classes,
            height,
            width,
            feat_dim,
            images,
        })
    }

    /// Pixel count per class id `0..=N` (IGNORE excluded).
    pub fn class_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.num_classes + 1];
        for img in &self.images {
            for &l in img.labels() {
                if l != IGNORE {
                    hist[l as usize] += 1;
                }
            }
        }
        hist
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_finite_and_bad_extents() {
        assert!(FeatureGrid::new(1, 1, 1, vec![f32::NAN], vec![0]).is_err());
        assert!(FeatureGrid::new(2, 1, 1, vec![0.0], vec![0, 0]).is_err());
        assert!(FeatureGrid::new(1, 1, 1, vec![0.0], vec![0, 0]).is_err());
    }

    #[test]
    fn dataset_rejects_labels_beyond_n() {
        let g = FeatureGrid::new(1, 2, 1, vec![0.0, 0.0], vec![3, IGNORE]).unwrap();
        assert!(Dataset::new(3, 1, 2, 1, vec![g.clone()]).is_ok());
        assert!(Dataset::new(2, 1, 2, 1, vec![g]).is_err());
    }
}
