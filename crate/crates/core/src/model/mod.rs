//! Segmentation model: backbone, classifier bank, loss, gradients and SGD.

pub mod backbone;
pub mod checkpoint;
pub mod classifier;
pub mod loss;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backbone::{backbone_inputs, embed, BackboneParams, EmbeddingGrid};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use classifier::{ClassifierBank, ClassifierBlock, FutureBlock, LinearHead};
pub use loss::{head_loss_and_grads, loss_and_grads, loss_and_grads_embedded, Grads};
pub use optim::{poly_lr, sgd_step, sgd_update, PolyTarget};

use crate::datagen::FeatureGrid;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// How a run treats the backbone and classifiers after step 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Direct fine-tuning: everything trainable at every step.
    Dft,
    /// Frozen backbone.
    #[serde(rename = "fixb")]
    FixB,
    /// Frozen backbone and frozen classifiers of earlier steps.
    #[serde(rename = "fixbc")]
    FixBC,
    /// As `FixBC`, plus trainable rows pre-allocated for future classes.
    #[serde(rename = "fixbc_p")]
    FixBCP,
    /// One training run over all classes at once.
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Dft,
        Strategy::FixB,
        Strategy::FixBC,
        Strategy::FixBCP,
        Strategy::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dft => "dft",
            Strategy::FixB => "fixb",
            Strategy::FixBC => "fixbc",
            Strategy::FixBCP => "fixbc_p",
            Strategy::Joint => "joint",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Strategy::Dft => 0,
            Strategy::FixB => 1,
            Strategy::FixBC => 2,
            Strategy::FixBCP => 3,
            Strategy::Joint => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Strategy::ALL.get(code as usize).copied()
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dft" => Ok(Strategy::Dft),
            "fixb" => Ok(Strategy::FixB),
            "fixbc" => Ok(Strategy::FixBC),
            "fixbc_p" | "fixbc+p" | "fixbcp" => Ok(Strategy::FixBCP),
            "joint" => Ok(Strategy::Joint),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected dft, fixb, fixbc, fixbc_p or joint)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optimizer hyperparameters for one CSS step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub epochs_per_step: usize,
    pub batch_size: usize,
    /// Which quantity the poly schedule decays.
    pub poly_target: PolyTarget,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            poly_power: 0.9,
            epochs_per_step: 40,
            batch_size: 8,
            poly_target: PolyTarget::LearningRate,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("hyper: {m}")));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.poly_power > 0.0 && self.poly_power.is_finite()) {
            return bad("poly_power must be > 0");
        }
        if self.epochs_per_step == 0 || self.batch_size == 0 {
            return bad("epochs_per_step and batch_size must be >= 1");
        }
        Ok(())
    }
}

/// Which parameter blocks receive updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    pub backbone: bool,
    /// One flag per regular classifier block.
    pub blocks: Vec<bool>,
    pub future: bool,
}

impl TrainableMask {
    pub fn all(num_blocks: usize) -> Self {
        Self {
            backbone: true,
            blocks: vec![true; num_blocks],
            future: true,
        }
    }
}

/// Backbone input width, hidden width and embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub hidden: usize,
    pub embed: usize,
    pub local_context: bool,
}

/// Backbone plus classifier bank.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<T> {
    pub backbone: BackboneParams<T>,
    pub classifiers: ClassifierBank<T>,
    pub strategy: Strategy,
    pub current_step: usize,
    pub backbone_frozen: bool,
    pub dims: ModelDims,
}

impl<T: Scalar> SegModel<T> {
    /// Fresh model with an initialized backbone and no classifier rows.
    pub fn new(dims: ModelDims, strategy: Strategy, rng: &mut RngStream) -> Self {
        let d_in = backbone::input_width(dims.feat_dim, dims.local_context);
        Self {
            backbone: BackboneParams::init(d_in, dims.hidden, dims.embed, rng),
            classifiers: ClassifierBank::new(),
            strategy,
            current_step: 0,
            backbone_frozen: false,
            dims,
        }
    }

    pub fn embed(&self, grid: &FeatureGrid) -> Result<EmbeddingGrid<T>> {
        embed(&self.backbone, grid, self.dims.local_context)
    }

    /// Rows taking part in the training softmax: learned classes plus any
    /// pre-allocated future rows.
    pub fn active_rows(&self) -> usize {
        self.classifiers.regular_rows() + self.classifiers.future_rows()
    }

    /// Mask implied by the freeze flags currently set on the model.
    pub fn trainable_mask(&self) -> TrainableMask {
        TrainableMask {
            backbone: !self.backbone_frozen,
            blocks: self
                .classifiers
                .blocks()
                .iter()
                .map(|b| !b.frozen)
                .collect(),
            future: self.classifiers.future().is_some_and(|f| !f.frozen),
        }
    }

    /// Sets freeze flags from a mask.
    pub fn apply_mask(&mut self, mask: &TrainableMask) -> Result<()> {
        if mask.blocks.len() != self.classifiers.blocks().len() {
            return Err(Error::Shape(format!(
                "mask covers {} blocks, model has {}",
                mask.blocks.len(),
                self.classifiers.blocks().len()
            )));
        }
        self.backbone_frozen = !mask.backbone;
        for (b, &t) in self.classifiers.blocks_mut().iter_mut().zip(&mask.blocks) {
            b.frozen = !t;
        }
        if let Some(f) = self.classifiers.future_mut() {
            f.frozen = !mask.future;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params()
            + self
                .classifiers
                .blocks()
                .iter()
                .map(|b| b.head.num_params())
                .sum::<usize>()
            + self.classifiers.future().map_or(0, |f| f.head.num_params())
    }
}

/// Per-pixel logits over `classes` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid<T> {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> LogitGrid<T> {
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.data[p * self.classes..(p + 1) * self.classes]
    }

    /// Arg-max row per pixel; ties go to the lowest row.
    pub fn argmax(&self) -> Vec<u16> {
        (0..self.height * self.width)
            .map(|p| {
                let row = self.pixel(p);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect()
    }
}

pub(crate) fn head_logits<T: Scalar>(segments: &[&LinearHead<T>], z: &[T], out: &mut [T]) {
    let mut k = 0;
    for seg in segments {
        for r in 0..seg.rows() {
            out[k] = crate::scalar::dot(seg.weight.row(r), z) + seg.bias[r];
            k += 1;
        }
    }
}

/// Logits of `segments` applied to an embedding grid.
pub fn logits_from_embeddings<T: Scalar>(
    segments: &[&LinearHead<T>],
    emb: &EmbeddingGrid<T>,
) -> LogitGrid<T> {
    let k: usize = segments.iter().map(|s| s.rows()).sum();
    let mut data = vec![T::zero(); emb.num_pixels() * k];
    for p in 0..emb.num_pixels() {
        head_logits(segments, emb.pixel(p), &mut data[p * k..(p + 1) * k]);
    }
    LogitGrid {
        height: emb.height,
        width: emb.width,
        classes: k,
        data,
    }
}

/// Logits over every active row (future rows included when present).
pub fn forward<T: Scalar>(model: &SegModel<T>, grid: &FeatureGrid) -> Result<LogitGrid<T>> {
    if model.classifiers.is_empty() {
        return Err(Error::State("classifier bank is empty".into()));
    }
    let emb = model.embed(grid)?;
    Ok(logits_from_embeddings(
        &model.classifiers.segments(true),
        &emb,
    ))
}

/// Predicted class ids restricted to learned classes (future rows excluded).
pub fn predict<T: Scalar>(model: &SegModel<T>, grid: &FeatureGrid) -> Result<Vec<u16>> {
    if model.classifiers.is_empty() {
        return Err(Error::State("classifier bank is empty".into()));
    }
    let emb = model.embed(grid)?;
    Ok(logits_from_embeddings(&model.classifiers.segments(false), &emb).argmax())
}

/// Number of scalar parameters that the current freeze flags leave trainable.
pub fn count_trainable<T: Scalar>(model: &SegModel<T>) -> usize {
    let mut n = 0;
    if !model.backbone_frozen {
        n += model.backbone.num_params();
    }
    n += model
        .classifiers
        .blocks()
        .iter()
        .filter(|b| !b.frozen)
        .map(|b| b.head.num_params())
        .sum::<usize>();
    if let Some(f) = model.classifiers.future() {
        if !f.frozen {
            n += f.head.num_params();
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    pub(crate) fn model_with(dims: ModelDims, steps: &[Vec<u16>], seed: u64) -> SegModel<f64> {
        let mut rng = RngStream::new(seed, 99);
        let mut m = SegModel::new(dims, Strategy::Dft, &mut rng);
        for (i, classes) in steps.iter().enumerate() {
            m.classifiers
                .push_block(ClassifierBlock {
                    step: i + 1,
                    classes: classes.clone(),
                    head: LinearHead::init(classes.len(), dims.embed, 0.5, &mut rng),
                    frozen: false,
                })
                .unwrap();
        }
        m
    }

    #[test]
    fn dft_trainable_count_enumeration() {
        let dims = ModelDims {
            feat_dim: 16,
            hidden: 32,
            embed: 24,
            local_context: false,
        };
        let m = model_with(dims, &[(0..=10).collect()], 1);
        assert_eq!(count_trainable(&m), 1611);
    }

    #[test]
    fn single_new_block_count() {
        let dims = ModelDims {
            feat_dim: 4,
            hidden: 8,
            embed: 64,
            local_context: false,
        };
        let mut m = model_with(dims, &[(0..=3).collect(), vec![4]], 1);
        m.apply_mask(&TrainableMask {
            backbone: false,
            blocks: vec![false, true],
            future: false,
        })
        .unwrap();
        assert_eq!(count_trainable(&m), 65);
        m.apply_mask(&TrainableMask {
            backbone: false,
            blocks: vec![true, true],
            future: false,
        })
        .unwrap();
        assert_eq!(count_trainable(&m), 5 * 65);
    }

    #[test]
    fn empty_bank_is_state_error() {
        let dims = ModelDims {
            feat_dim: 1,
            hidden: 1,
            embed: 1,
            local_context: false,
        };
        let m = model_with(dims, &[], 0);
        let g = FeatureGrid::new(1, 1, 1, vec![0.0], vec![0]).unwrap();
        assert!(matches!(forward(&m, &g), Err(Error::State(_))));
    }

    #[test]
    fn zero_classifier_gives_zero_logits_and_unit_projection() {
        let dims = ModelDims {
            feat_dim: 2,
            hidden: 3,
            embed: 2,
            local_context: false,
        };
        let mut m = model_with(dims, &[vec![0, 1]], 3);
        for b in m.classifiers.blocks_mut() {
            b.head = LinearHead::zeros(2, 2);
        }
        let g = FeatureGrid::new(1, 1, 2, vec![0.3, -0.7], vec![0]).unwrap();
        assert!(forward(&m, &g).unwrap().data.iter().all(|&v| v == 0.0));

        // single class whose weight is the unit vector along the embedding
        let z = m.embed(&g).unwrap().data;
        let nz = (z[0] * z[0] + z[1] * z[1]).sqrt();
        let head = LinearHead {
            weight: Matrix::from_vec(1, 2, vec![z[0] / nz, z[1] / nz]),
            bias: vec![0.0],
        };
        let mut single = m.clone();
        single.classifiers = ClassifierBank::new();
        single
            .classifiers
            .push_block(ClassifierBlock {
                step: 1,
                classes: vec![0],
                head,
                frozen: false,
            })
            .unwrap();
        let l = forward(&single, &g).unwrap().data[0];
        assert!((l - nz).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let dims = ModelDims {
            feat_dim: 3,
            hidden: 5,
            embed: 4,
            local_context: false,
        };
        for seed in 0..5 {
            let m = model_with(dims, &[vec![0, 1], vec![2]], seed);
            let mut rng = RngStream::new(seed, 1);
            let f = (0..16 * 3).map(|_| rng.normal(0.0, 1.0) as f32).collect();
            let g = FeatureGrid::new(4, 4, 3, f, vec![0; 16]).unwrap();
            let logits = forward(&m, &g).unwrap();
            let emb = m.embed(&g).unwrap();
            let rows: Vec<(&[f64], f64)> = m
                .classifiers
                .blocks()
                .iter()
                .flat_map(|b| {
                    (0..b.head.rows()).map(move |r| (b.head.weight.row(r), b.head.bias[r]))
                })
                .collect();
            assert_eq!(logits.classes, 3);
            for p in 0..16 {
                let z = emb.pixel(p);
                for (k, (w, b)) in rows.iter().enumerate() {
                    let mut s = *b;
                    for i in 0..z.len() {
                        s += w[i] * z[i];
                    }
                    assert!((logits.pixel(p)[k] - s).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(Strategy::from_code(s.code()), Some(s));
        }
        assert!(matches!("ewc".parse::<Strategy>(), Err(Error::Config(_))));
    }
}
