use serde::{Deserialize, Serialize};

use crate::datagen::IGNORE;
use crate::error::{Error, Result};

/// `K x K` pixel counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one grid's pixels. IGNORE labels are skipped.
    pub fn add(&mut self, pred: &[u16], label: &[u16]) -> Result<()> {
        if pred.len() != label.len() {
            return Err(Error::validation(
                "metrics",
                format!(
                    "prediction has {} pixels, labels {}",
                    pred.len(),
                    label.len()
                ),
            ));
        }
        for (&p, &l) in pred.iter().zip(label) {
            if l == IGNORE {
                continue;
            }
            if l as usize >= self.k || p as usize >= self.k {
                return Err(Error::validation(
                    "metrics",
                    format!(
                        "class id out of range for K={}: label {l}, prediction {p}",
                        self.k
                    ),
                ));
            }
            self.counts[l as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::validation(
                "metrics",
                "confusion matrices of different size",
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class never occurs in
    /// either truth or prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let row: u64 = (0..self.k).map(|j| self.get(c, j)).sum();
        let col: u64 = (0..self.k).map(|i| self.get(i, c)).sum();
        let union = row + col - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

pub fn accumulate_confusion(pred: &[u16], label: &[u16], k: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(k);
    m.add(pred, label)?;
    Ok(m)
}
