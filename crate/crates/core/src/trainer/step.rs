//! One CSS step: classifier growth, freezing and the SGD loop.
//!
//! Draw order on a step's stream: initial weights of rows for the step's new
//! classes that no reserved row covers, then any newly reserved future rows,
//! then one shuffle of the image order per epoch.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{ClassSchedule, FeatureGrid, StepData, IGNORE};
use crate::error::{Error, Result};
use crate::model::{
    count_trainable, loss_and_grads, loss_and_grads_embedded, poly_lr, sgd_step, ClassifierBlock,
    EmbeddingGrid, FutureBlock, Grads, Hyper, LinearHead, PolyTarget, SegModel, Strategy,
    TrainableMask,
};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Trainable parts at one step (`true` = receives updates). The block
/// created at the current step is always trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezePlan {
    pub backbone: bool,
    pub old_blocks: bool,
    pub future: bool,
}

pub fn freeze_plan(strategy: Strategy, step: usize) -> FreezePlan {
    let all = FreezePlan {
        backbone: true,
        old_blocks: true,
        future: true,
    };
    if step <= 1 {
        return all;
    }
    match strategy {
        Strategy::Dft | Strategy::Joint => all,
        Strategy::FixB => FreezePlan {
            backbone: false,
            ..all
        },
        Strategy::FixBC => FreezePlan {
            backbone: false,
            old_blocks: false,
            future: false,
        },
        Strategy::FixBCP => FreezePlan {
            backbone: false,
            old_blocks: false,
            future: true,
        },
    }
}

impl FreezePlan {
    pub fn mask_for<T: Scalar>(&self, model: &SegModel<T>, step: usize) -> TrainableMask {
        TrainableMask {
            backbone: self.backbone,
            blocks: model
                .classifiers
                .blocks()
                .iter()
                .map(|b| b.step == step || self.old_blocks)
                .collect(),
            future: self.future,
        }
    }
}

/// Appends a block of freshly initialized rows for `classes` (weights
/// `N(0, init_std^2)`, zero biases). An empty class set is a no-op.
pub fn expand_classifier<T: Scalar>(
    model: &mut SegModel<T>,
    step: usize,
    classes: &[u16],
    init_std: f64,
    rng: &mut RngStream,
) -> Result<()> {
    if classes.is_empty() {
        return Ok(());
    }
    if let Some(&dup) = classes.iter().find(|&&c| model.classifiers.contains(c)) {
        return Err(Error::State(format!(
            "class {dup} already has a classifier row"
        )));
    }
    let head = LinearHead::init(classes.len(), model.dims.embed, init_std, rng);
    model.classifiers.push_block(ClassifierBlock {
        step,
        classes: classes.to_vec(),
        head,
        frozen: false,
    })
}

/// Reserves trainable rows for `classes` followed by `spare_rows` unbound
/// rows. Fails if rows are already reserved.
pub fn preallocate_future<T: Scalar>(
    model: &mut SegModel<T>,
    classes: &[u16],
    spare_rows: usize,
    init_std: f64,
    rng: &mut RngStream,
) -> Result<()> {
    if model.classifiers.future().is_some() {
        return Err(Error::State("future rows are already reserved".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| model.classifiers.contains(c)) {
        return Err(Error::State(format!("class {c} is already learned")));
    }
    let rows = classes.len() + spare_rows;
    if rows == 0 {
        return Ok(());
    }
    model.classifiers.set_future(Some(FutureBlock {
        classes: classes.to_vec(),
        head: LinearHead::init(rows, model.dims.embed, init_std, rng),
        frozen: false,
    }));
    Ok(())
}

/// Rows for the step's classes: reserved rows first, fresh rows for the rest.
fn rows_for_step<T: Scalar>(
    model: &mut SegModel<T>,
    classes: &[u16],
    init_std: f64,
    rng: &mut RngStream,
) -> Result<LinearHead<T>> {
    if let Some(f) = model.classifiers.future() {
        let bound = &f.classes[..f.classes.len().min(classes.len())];
        if bound != &classes[..bound.len()] {
            return Err(Error::State(format!(
                "reserved rows are bound to {:?}, step learns {classes:?}",
                f.classes
            )));
        }
    }
    let n = classes.len();
    let take = model.classifiers.future_rows().min(n);
    let e = model.dims.embed;
    let mut head = match take {
        0 => LinearHead::zeros(0, e),
        k => model
            .classifiers
            .take_future_rows(k)
            .expect("row count checked"),
    };
    if take < n {
        head = head.vstack(&LinearHead::init(n - take, e, init_std, rng));
    }
    Ok(head)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub init_std: f64,
    /// 0: reserve the scheduled future classes. Otherwise keep this many
    /// unbound rows reserved.
    pub spare_rows: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            init_std: 0.01,
            spare_rows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: usize,
    pub images: usize,
    pub iterations: usize,
    /// Mean batch loss over the last epoch.
    pub final_loss: f64,
    pub trainable_params: usize,
    pub wall_seconds: f64,
}

/// Grows the classifier for step `data.step`, applies the strategy's freeze
/// plan and trains for `hyper.epochs_per_step` epochs.
pub fn run_step<T: Scalar>(
    model: &mut SegModel<T>,
    data: &StepData,
    schedule: &ClassSchedule,
    hyper: &Hyper,
    opts: &StepOptions,
    rng: &mut RngStream,
) -> Result<StepOutcome> {
    let start = Instant::now();
    let t = data.step;
    if t == 0 || t > schedule.num_steps() {
        return Err(Error::State(format!(
            "step {t} outside a {}-step schedule",
            schedule.num_steps()
        )));
    }
    if t != model.current_step + 1 {
        return Err(Error::State(format!(
            "model is at step {}, cannot run step {t}",
            model.current_step
        )));
    }
    let classes = schedule.classes_at(t);
    if let Some(&dup) = classes.iter().find(|&&c| model.classifiers.contains(c)) {
        return Err(Error::State(format!(
            "class {dup} already has a classifier row"
        )));
    }
    let head = rows_for_step(model, classes, opts.init_std, rng)?;
    model.classifiers.push_block(ClassifierBlock {
        step: t,
        classes: classes.to_vec(),
        head,
        frozen: false,
    })?;

    if model.strategy == Strategy::FixBCP && t >= 2 {
        if opts.spare_rows == 0 {
            if t == 2 {
                let future = schedule.classes_between(3, schedule.num_steps());
                preallocate_future(model, &future, 0, opts.init_std, rng)?;
            }
        } else {
            top_up_spare_rows(model, opts.spare_rows, opts.init_std, rng);
        }
    }
    model.current_step = t;

    let mask = freeze_plan(model.strategy, t).mask_for(model, t);
    model.apply_mask(&mask)?;
    let trainable_params = count_trainable(model);
    let (iterations, final_loss) = train_epochs(model, &data.images, hyper, &mask, rng)?;
    Ok(StepOutcome {
        step: t,
        images: data.images.len(),
        iterations,
        final_loss,
        trainable_params,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn top_up_spare_rows<T: Scalar>(
    model: &mut SegModel<T>,
    spare: usize,
    init_std: f64,
    rng: &mut RngStream,
) {
    let have = model.classifiers.future_rows();
    if have >= spare {
        return;
    }
    let fresh = LinearHead::init(spare - have, model.dims.embed, init_std, rng);
    let block = match model.classifiers.future() {
        Some(f) => FutureBlock {
            classes: f.classes.clone(),
            head: f.head.vstack(&fresh),
            frozen: false,
        },
        None => FutureBlock {
            classes: Vec::new(),
            head: fresh,
            frozen: false,
        },
    };
    model.classifiers.set_future(Some(block));
}

fn has_valid_pixels<'a>(mut labels: impl Iterator<Item = &'a [u16]>) -> bool {
    labels.any(|l| l.iter().any(|&v| v != IGNORE))
}

/// Mini-batch momentum SGD. With a frozen backbone, embeddings are computed
/// once and reused. Returns the iteration count and the last epoch's mean
/// batch loss.
fn train_epochs<T: Scalar>(
    model: &mut SegModel<T>,
    images: &[FeatureGrid],
    hyper: &Hyper,
    mask: &TrainableMask,
    rng: &mut RngStream,
) -> Result<(usize, f64)> {
    if images.is_empty() {
        return Err(Error::State(format!(
            "step {} has no training images",
            model.current_step
        )));
    }
    let per_epoch = images.len().div_ceil(hyper.batch_size);
    let total = hyper.epochs_per_step * per_epoch;
    let cached: Option<Vec<EmbeddingGrid<T>>> = if mask.backbone {
        None
    } else {
        Some(
            images
                .iter()
                .map(|g| model.embed(g))
                .collect::<Result<_>>()?,
        )
    };
    let mut velocity = Grads::zeros_like(model);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let (lr0, wd0, momentum, power) = (
        T::lit(hyper.lr0),
        T::lit(hyper.weight_decay),
        T::lit(hyper.momentum),
        T::lit(hyper.poly_power),
    );
    let mut iter = 0;
    let mut last_epoch_loss = 0.0;
    for _ in 0..hyper.epochs_per_step {
        rng.shuffle(&mut order);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(hyper.batch_size) {
            let factor = poly_lr(T::one(), iter, total, power)?;
            iter += 1;
            if !has_valid_pixels(chunk.iter().map(|&i| images[i].labels())) {
                continue;
            }
            let (lr, wd) = match hyper.poly_target {
                PolyTarget::LearningRate => (lr0 * factor, wd0),
                PolyTarget::WeightDecay => (lr0, wd0 * factor),
            };
            let (loss, grads) = match &cached {
                Some(emb) => {
                    let batch: Vec<(&EmbeddingGrid<T>, &[u16])> = chunk
                        .iter()
                        .map(|&i| (&emb[i], images[i].labels()))
                        .collect();
                    loss_and_grads_embedded(model, &batch, mask)?
                }
                None => {
                    let batch: Vec<&FeatureGrid> = chunk.iter().map(|&i| &images[i]).collect();
                    loss_and_grads(model, &batch, mask)?
                }
            };
            sgd_step(model, &grads, &mut velocity, lr, momentum, wd, mask)?;
            sum += loss.as_f64();
            batches += 1;
        }
        last_epoch_loss = if batches > 0 {
            sum / batches as f64
        } else {
            f64::NAN
        };
    }
    Ok((iter, last_epoch_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_schedule, Scenario};
    use crate::model::{sgd_step, ModelDims};

    fn dims() -> ModelDims {
        ModelDims {
            feat_dim: 3,
            hidden: 4,
            embed: 5,
            local_context: false,
        }
    }

    fn grid(seed: u64, classes: &[u16]) -> FeatureGrid {
        let mut rng = RngStream::new(seed, 7);
        let (h, w, d) = (3, 3, 3);
        let features = (0..h * w * d)
            .map(|_| rng.normal(0.0, 1.0) as f32)
            .collect();
        let labels = (0..h * w).map(|p| classes[p % classes.len()]).collect();
        FeatureGrid::new(h, w, d, features, labels).unwrap()
    }

    fn sched(setting: &str, n: usize) -> ClassSchedule {
        build_schedule(&setting.parse().unwrap(), n, Scenario::Overlapped).unwrap()
    }

    fn step_data(step: usize, images: Vec<FeatureGrid>) -> StepData {
        let n = images.len();
        StepData {
            step,
            images,
            source_indices: (0..n).collect(),
            dropped: 0,
        }
    }

    #[test]
    fn freeze_table() {
        for s in Strategy::ALL {
            assert_eq!(
                freeze_plan(s, 1),
                FreezePlan {
                    backbone: true,
                    old_blocks: true,
                    future: true
                }
            );
        }
        let p = |s| freeze_plan(s, 3);
        assert!(p(Strategy::Dft).backbone && p(Strategy::Dft).old_blocks);
        assert!(!p(Strategy::FixB).backbone && p(Strategy::FixB).old_blocks);
        assert!(
            !p(Strategy::FixBC).backbone
                && !p(Strategy::FixBC).old_blocks
                && !p(Strategy::FixBC).future
        );
        assert!(!p(Strategy::FixBCP).old_blocks && p(Strategy::FixBCP).future);
    }

    #[test]
    fn expand_classifier_shapes_and_errors() {
        let mut m = SegModel::<f64>::new(dims(), Strategy::Dft, &mut RngStream::new(1, 0));
        let mut rng = RngStream::new(1, 1);
        expand_classifier(&mut m, 1, &[0, 1, 2], 0.01, &mut rng).unwrap();
        let before = rng.position();
        expand_classifier(&mut m, 2, &[], 0.01, &mut rng).unwrap();
        assert_eq!(rng.position(), before);
        assert_eq!(m.classifiers.blocks().len(), 1);
        let b = &m.classifiers.blocks()[0].head;
        assert_eq!((b.weight.rows(), b.weight.cols()), (3, 5));
        assert!(b.bias.iter().all(|&x| x == 0.0));
        assert!(matches!(
            expand_classifier(&mut m, 2, &[2, 3], 0.01, &mut rng),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn oversized_reservation_keeps_spare_rows() {
        let mut m = SegModel::<f64>::new(dims(), Strategy::FixBCP, &mut RngStream::new(1, 0));
        let mut rng = RngStream::new(1, 1);
        expand_classifier(&mut m, 1, &[0, 1], 0.01, &mut rng).unwrap();
        preallocate_future(&mut m, &[], 4, 0.01, &mut rng).unwrap();
        assert_eq!(m.classifiers.future_rows(), 4);
        let head = rows_for_step(&mut m, &[2], 0.01, &mut rng).unwrap();
        assert_eq!(head.rows(), 1);
        assert_eq!(m.classifiers.future_rows(), 3);
        top_up_spare_rows(&mut m, 4, 0.01, &mut rng);
        assert_eq!(m.classifiers.future_rows(), 4);
        assert!(preallocate_future(&mut m, &[], 1, 0.01, &mut rng).is_err());
    }

    /// Single image, one epoch, batch size one: `run_step` must equal the
    /// same sequence driven by hand.
    #[test]
    fn run_step_matches_hand_driven_update() {
        let s = sched("2-1", 3);
        let hyper = Hyper {
            epochs_per_step: 1,
            batch_size: 1,
            lr0: 0.05,
            ..Hyper::default()
        };
        let img = grid(3, &[0, 1, 2]);
        let base = SegModel::<f64>::new(dims(), Strategy::Dft, &mut RngStream::new(9, 0));

        let mut auto = base.clone();
        run_step(
            &mut auto,
            &step_data(1, vec![img.clone()]),
            &s,
            &hyper,
            &StepOptions::default(),
            &mut RngStream::new(9, 5),
        )
        .unwrap();

        let mut hand = base;
        let mut rng = RngStream::new(9, 5);
        expand_classifier(&mut hand, 1, &[0, 1, 2], 0.01, &mut rng).unwrap();
        hand.current_step = 1;
        let mask = TrainableMask::all(1);
        let (_, g) = loss_and_grads(&hand, &[&img], &mask).unwrap();
        let mut v = Grads::zeros_like(&hand);
        sgd_step(&mut hand, &g, &mut v, 0.05, 0.9, 1e-4, &mask).unwrap();
        assert_eq!(auto, hand);
    }

    #[test]
    fn frozen_parts_keep_their_bits() {
        let s = sched("2-1", 3);
        let hyper = Hyper {
            epochs_per_step: 3,
            batch_size: 2,
            ..Hyper::default()
        };
        let opts = StepOptions::default();
        for strategy in [Strategy::FixB, Strategy::FixBC, Strategy::FixBCP] {
            let mut m = SegModel::<f64>::new(dims(), strategy, &mut RngStream::new(2, 0));
            let imgs1: Vec<_> = (0..3).map(|i| grid(i, &[0, 1, 2])).collect();
            run_step(
                &mut m,
                &step_data(1, imgs1),
                &s,
                &hyper,
                &opts,
                &mut RngStream::new(2, 1),
            )
            .unwrap();
            let bb = m.backbone.clone();
            let old = m.classifiers.blocks()[0].head.clone();
            let imgs2: Vec<_> = (0..3).map(|i| grid(10 + i, &[0, 3])).collect();
            let out = run_step(
                &mut m,
                &step_data(2, imgs2),
                &s,
                &hyper,
                &opts,
                &mut RngStream::new(2, 2),
            )
            .unwrap();
            assert_eq!(m.backbone, bb, "{strategy}");
            let old_now = &m.classifiers.blocks()[0].head;
            assert_eq!(old_now == &old, strategy != Strategy::FixB, "{strategy}");
            assert_eq!(out.trainable_params, count_trainable(&m));
        }
    }

    #[test]
    fn future_rows_move_into_the_next_block() {
        let s = sched("1-1", 3);
        let hyper = Hyper {
            epochs_per_step: 2,
            batch_size: 2,
            ..Hyper::default()
        };
        let opts = StepOptions::default();
        let mut m = SegModel::<f64>::new(dims(), Strategy::FixBCP, &mut RngStream::new(4, 0));
        run_step(
            &mut m,
            &step_data(1, vec![grid(1, &[0, 1])]),
            &s,
            &hyper,
            &opts,
            &mut RngStream::new(4, 1),
        )
        .unwrap();
        assert!(m.classifiers.future().is_none());
        run_step(
            &mut m,
            &step_data(2, vec![grid(2, &[0, 2])]),
            &s,
            &hyper,
            &opts,
            &mut RngStream::new(4, 2),
        )
        .unwrap();
        let reserved = m.classifiers.future().unwrap().clone();
        assert_eq!(reserved.classes, vec![3]);
        assert_eq!(m.active_rows(), 4);
        run_step(
            &mut m,
            &step_data(3, vec![grid(3, &[0, 3])]),
            &s,
            &hyper,
            &opts,
            &mut RngStream::new(4, 3),
        )
        .unwrap();
        assert!(m.classifiers.future().is_none());
        assert_eq!(m.classifiers.classes(), vec![0, 1, 2, 3]);
        assert_eq!(m.classifiers.blocks()[2].head.rows(), 1);
    }

    #[test]
    fn out_of_order_step_is_a_state_error() {
        let s = sched("1-1", 3);
        let mut m = SegModel::<f64>::new(dims(), Strategy::Dft, &mut RngStream::new(4, 0));
        let r = run_step(
            &mut m,
            &step_data(2, vec![grid(1, &[0, 2])]),
            &s,
            &Hyper::default(),
            &StepOptions::default(),
            &mut RngStream::new(4, 2),
        );
        assert!(matches!(r, Err(Error::State(_))));
    }
}
