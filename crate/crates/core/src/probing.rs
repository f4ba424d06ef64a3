//! Linear probes: a fresh all-class classifier fitted on a frozen backbone's
//! embeddings with the original (never relabeled) annotations.
//!
//! Every probe starts from the same initialization stream, so a probe is a
//! function of the backbone, the data and the seed only.

use crate::datagen::{ClassSchedule, FeatureGrid, IGNORE};
use crate::error::{Error, Result};
use crate::metrics::{miou_groups, ConfusionMatrix, MetricsReport};
use crate::model::{
    embed, head_loss_and_grads, logits_from_embeddings, poly_lr, sgd_update, BackboneParams,
    EmbeddingGrid, Hyper, LinearHead, PolyTarget,
};
use crate::rng::{RngStream, PROBE_STREAM};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult<T> {
    pub head: LinearHead<T>,
    pub metrics: MetricsReport,
}

/// Fits a `num_classes`-row probe by momentum SGD on cached embeddings.
/// Every class must occur in `images`.
pub fn train_probe<T: Scalar>(
    backbone: &BackboneParams<T>,
    local_context: bool,
    images: &[FeatureGrid],
    num_classes: usize,
    hyper: &Hyper,
    init_std: f64,
    seed: u64,
) -> Result<LinearHead<T>> {
    let mut seen = vec![false; num_classes];
    for img in images {
        for &l in img.labels() {
            if l == IGNORE {
                continue;
            }
            match seen.get_mut(l as usize) {
                Some(s) => *s = true,
                None => {
                    return Err(Error::Probe(format!(
                        "label {l} outside the {num_classes}-class probe"
                    )))
                }
            }
        }
    }
    if let Some(c) = seen.iter().position(|&s| !s) {
        return Err(Error::Probe(format!(
            "class {c} has no pixels in the probe training data"
        )));
    }
    let emb: Vec<EmbeddingGrid<T>> = images
        .iter()
        .map(|g| embed(backbone, g, local_context))
        .collect::<Result<_>>()?;
    let mut rng = RngStream::new(seed, PROBE_STREAM);
    let mut head = LinearHead::<T>::init(num_classes, backbone.embed_dim(), init_std, &mut rng);
    let mut vel = head.zeros_like();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let total = hyper.epochs_per_step * images.len().div_ceil(hyper.batch_size);
    let (lr0, wd0, momentum, power) = (
        T::lit(hyper.lr0),
        T::lit(hyper.weight_decay),
        T::lit(hyper.momentum),
        T::lit(hyper.poly_power),
    );
    let mut iter = 0;
    for _ in 0..hyper.epochs_per_step {
        rng.shuffle(&mut order);
        for chunk in order.chunks(hyper.batch_size) {
            let factor = poly_lr(T::one(), iter, total, power)?;
            iter += 1;
            let batch: Vec<(&EmbeddingGrid<T>, &[u16])> = chunk
                .iter()
                .map(|&i| (&emb[i], images[i].labels()))
                .collect();
            if batch.iter().all(|(_, l)| l.iter().all(|&v| v == IGNORE)) {
                continue;
            }
            let (_, grads) = head_loss_and_grads(&[&head], &[true], &batch)?;
            let (lr, wd) = match hyper.poly_target {
                PolyTarget::LearningRate => (lr0 * factor, wd0),
                PolyTarget::WeightDecay => (lr0, wd0 * factor),
            };
            let g = &grads[0];
            if let Some(x) = g
                .weight
                .as_slice()
                .iter()
                .chain(&g.bias)
                .find(|x| !x.is_finite())
            {
                return Err(Error::Probe(format!("non-finite probe gradient {x}")));
            }
            sgd_update(
                head.weight.as_mut_slice(),
                g.weight.as_slice(),
                vel.weight.as_mut_slice(),
                lr,
                momentum,
                wd,
            );
            sgd_update(&mut head.bias, &g.bias, &mut vel.bias, lr, momentum, wd);
        }
    }
    Ok(head)
}

/// mIoU of the probe over all classes on `images` (original labels).
pub fn probing_eval<T: Scalar>(
    backbone: &BackboneParams<T>,
    local_context: bool,
    probe: &LinearHead<T>,
    images: &[FeatureGrid],
    schedule: &ClassSchedule,
) -> Result<MetricsReport> {
    let k = schedule.num_classes();
    if probe.rows() != k {
        return Err(Error::Probe(format!(
            "probe has {} rows, schedule has {k} classes",
            probe.rows()
        )));
    }
    let mut conf = ConfusionMatrix::new(k);
    for img in images {
        let emb = embed(backbone, img, local_context)?;
        let pred = logits_from_embeddings(&[probe], &emb).argmax();
        conf.add(&pred, img.labels())?;
    }
    miou_groups(&conf, schedule, schedule.num_steps())
}

/// Trains a probe on `train` and evaluates it on `eval`.
#[allow(clippy::too_many_arguments)]
pub fn run_probe<T: Scalar>(
    backbone: &BackboneParams<T>,
    local_context: bool,
    train: &[FeatureGrid],
    eval: &[FeatureGrid],
    schedule: &ClassSchedule,
    hyper: &Hyper,
    init_std: f64,
    seed: u64,
) -> Result<ProbeResult<T>> {
    let head = train_probe(
        backbone,
        local_context,
        train,
        schedule.num_classes(),
        hyper,
        init_std,
        seed,
    )?;
    let metrics = probing_eval(backbone, local_context, &head, eval, schedule)?;
    Ok(ProbeResult { head, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_schedule, generate_dataset, Scenario, SynthParams};

    fn setup() -> (
        Vec<FeatureGrid>,
        Vec<FeatureGrid>,
        ClassSchedule,
        BackboneParams<f64>,
    ) {
        let (train, eval) = generate_dataset(&SynthParams {
            classes: 3,
            feat_dim: 4,
            height: 8,
            width: 8,
            images_per_class: 3,
            eval_images_per_class: 2,
            ..SynthParams::default()
        })
        .unwrap();
        let s = build_schedule(&"2-1".parse().unwrap(), 3, Scenario::Overlapped).unwrap();
        let bb = BackboneParams::init(4, 6, 5, &mut RngStream::new(3, 0));
        (train.images, eval.images, s, bb)
    }

    fn hyper() -> Hyper {
        Hyper {
            epochs_per_step: 5,
            batch_size: 4,
            lr0: 0.1,
            ..Hyper::default()
        }
    }

    #[test]
    fn probe_is_deterministic_and_leaves_backbone_alone() {
        let (train, eval, s, bb) = setup();
        let before = bb.clone();
        let a = run_probe(&bb, false, &train, &eval, &s, &hyper(), 0.01, 7).unwrap();
        let b = run_probe(&bb, false, &train, &eval, &s, &hyper(), 0.01, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(bb, before);
        assert_eq!(a.head.rows(), 4);
        assert_eq!(a.metrics.per_class_iou.len(), 4);
    }

    #[test]
    fn probe_beats_chance_on_separable_data() {
        let (train, eval, s, bb) = setup();
        let h = Hyper {
            epochs_per_step: 40,
            ..hyper()
        };
        let r = run_probe(&bb, false, &train, &eval, &s, &h, 0.01, 1).unwrap();
        assert!(r.metrics.miou_all.unwrap() > 25.0, "{:?}", r.metrics);
    }

    #[test]
    fn missing_class_is_named() {
        let (train, _, _, bb) = setup();
        let only_bg: Vec<FeatureGrid> = train
            .iter()
            .map(|g| g.with_labels(vec![0; g.num_pixels()]))
            .collect();
        let err = train_probe(&bb, false, &only_bg, 4, &hyper(), 0.01, 1).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }
}
