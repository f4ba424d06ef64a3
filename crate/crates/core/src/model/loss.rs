//! Mean softmax cross-entropy over non-IGNORE pixels and its exact gradient.

use super::backbone::{backbone_inputs, BackboneParams, EmbeddingGrid};
use super::classifier::LinearHead;
use super::{head_logits, SegModel, TrainableMask};
use crate::datagen::{FeatureGrid, IGNORE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradients laid out like the model's parameters. Also used for momentum
/// buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub backbone: BackboneParams<T>,
    pub blocks: Vec<LinearHead<T>>,
    pub future: Option<LinearHead<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(model: &SegModel<T>) -> Self {
        Self {
            backbone: model.backbone.zeros_like(),
            blocks: model
                .classifiers
                .blocks()
                .iter()
                .map(|b| b.head.zeros_like())
                .collect(),
            future: model.classifiers.future().map(|f| f.head.zeros_like()),
        }
    }

    /// Named parameter slices in declaration order.
    pub fn named_slices(&self) -> Vec<(String, &[T])> {
        let mut v: Vec<(String, &[T])> = vec![
            ("backbone.w1".into(), self.backbone.w1.as_slice()),
            ("backbone.b1".into(), &self.backbone.b1),
            ("backbone.w2".into(), self.backbone.w2.as_slice()),
            ("backbone.b2".into(), &self.backbone.b2),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("classifier[{i}].weight"), b.weight.as_slice()));
            v.push((format!("classifier[{i}].bias"), &b.bias));
        }
        if let Some(f) = &self.future {
            v.push(("future.weight".into(), f.weight.as_slice()));
            v.push(("future.bias".into(), &f.bias));
        }
        v
    }
}

/// Softmax cross-entropy of one pixel over the concatenated rows of
/// `segments`; accumulates `scale * dL/dparam` into `grads` for trainable
/// segments and, if requested, `scale * dL/dz` into `dz`.
///
/// Both the full-model path and the cached-embedding path go through this
/// function, so they produce bit-identical results.
#[allow(clippy::too_many_arguments)]
#[inline]
fn head_pixel<T: Scalar>(
    segments: &[&LinearHead<T>],
    trainable: &[bool],
    z: &[T],
    label: usize,
    scale: T,
    logits: &mut [T],
    grads: &mut [LinearHead<T>],
    mut dz: Option<&mut [T]>,
) -> T {
    head_logits(segments, z, logits);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let target = logits[label] - max;
    let mut sum = T::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    let loss = sum.ln() - target;
    if let Some(d) = dz.as_deref_mut() {
        d.iter_mut().for_each(|v| *v = T::zero());
    }
    let mut k = 0;
    for (s, seg) in segments.iter().enumerate() {
        for r in 0..seg.rows() {
            let mut g = logits[k] / sum;
            if k == label {
                g -= T::one();
            }
            let g = g * scale;
            if trainable[s] {
                grads[s].bias[r] += g;
                for (gw, &zv) in grads[s].weight.row_mut(r).iter_mut().zip(z) {
                    *gw += g * zv;
                }
            }
            if let Some(d) = dz.as_deref_mut() {
                for (dv, &w) in d.iter_mut().zip(seg.weight.row(r)) {
                    *dv += g * w;
                }
            }
            k += 1;
        }
    }
    loss
}

fn check_label(label: u16, rows: usize) -> Result<usize> {
    if label as usize >= rows {
        return Err(Error::Loss(format!(
            "label {label} has no active classifier row ({rows} rows)"
        )));
    }
    Ok(label as usize)
}

fn count_valid<'a>(labels: impl Iterator<Item = &'a [u16]>) -> Result<usize> {
    let n: usize = labels
        .map(|l| l.iter().filter(|&&v| v != IGNORE).count())
        .sum();
    if n == 0 {
        return Err(Error::Loss("batch has no non-IGNORE pixels".into()));
    }
    Ok(n)
}

/// Loss and gradients over an explicit list of row segments given
/// precomputed embeddings. Gradients of non-trainable segments stay zero.
pub fn head_loss_and_grads<T: Scalar>(
    segments: &[&LinearHead<T>],
    trainable: &[bool],
    batch: &[(&EmbeddingGrid<T>, &[u16])],
) -> Result<(T, Vec<LinearHead<T>>)> {
    let rows: usize = segments.iter().map(|s| s.rows()).sum();
    let n = count_valid(batch.iter().map(|(_, l)| *l))?;
    let scale = T::one() / T::from_usize(n).expect("pixel count fits");
    let mut grads: Vec<LinearHead<T>> = segments.iter().map(|s| s.zeros_like()).collect();
    let mut logits = vec![T::zero(); rows];
    let mut total = T::zero();
    for (emb, labels) in batch {
        for (p, &label) in labels.iter().enumerate() {
            if label == IGNORE {
                continue;
            }
            let row = check_label(label, rows)?;
            total += head_pixel(
                segments,
                trainable,
                emb.pixel(p),
                row,
                scale,
                &mut logits,
                &mut grads,
                None,
            );
        }
    }
    Ok((total * scale, grads))
}

fn segments_and_flags<'a, T: Scalar>(
    model: &'a SegModel<T>,
    mask: &TrainableMask,
) -> Result<(Vec<&'a LinearHead<T>>, Vec<bool>)> {
    if model.classifiers.is_empty() {
        return Err(Error::State("classifier bank is empty".into()));
    }
    if mask.blocks.len() != model.classifiers.blocks().len() {
        return Err(Error::Shape(
            "trainable mask does not match classifier blocks".into(),
        ));
    }
    let segments = model.classifiers.segments(true);
    let mut flags = mask.blocks.clone();
    if model.classifiers.future().is_some() {
        flags.push(mask.future);
    }
    Ok((segments, flags))
}

fn split_head_grads<T: Scalar>(
    model: &SegModel<T>,
    mut heads: Vec<LinearHead<T>>,
) -> (Vec<LinearHead<T>>, Option<LinearHead<T>>) {
    let future = if model.classifiers.future().is_some() {
        heads.pop()
    } else {
        None
    };
    (heads, future)
}

/// Loss and gradients with a frozen backbone, from cached embeddings.
/// Requires `mask.backbone == false`; backbone gradients are zero.
pub fn loss_and_grads_embedded<T: Scalar>(
    model: &SegModel<T>,
    batch: &[(&EmbeddingGrid<T>, &[u16])],
    mask: &TrainableMask,
) -> Result<(T, Grads<T>)> {
    if mask.backbone {
        return Err(Error::State(
            "cached embeddings require a frozen backbone".into(),
        ));
    }
    let (segments, flags) = segments_and_flags(model, mask)?;
    let (loss, heads) = head_loss_and_grads(&segments, &flags, batch)?;
    let (blocks, future) = split_head_grads(model, heads);
    Ok((
        loss,
        Grads {
            backbone: model.backbone.zeros_like(),
            blocks,
            future,
        },
    ))
}

/// Mean cross-entropy over all non-IGNORE pixels of `batch` and its exact
/// gradient. Entries outside `mask` are zero.
pub fn loss_and_grads<T: Scalar>(
    model: &SegModel<T>,
    batch: &[&FeatureGrid],
    mask: &TrainableMask,
) -> Result<(T, Grads<T>)> {
    let (segments, flags) = segments_and_flags(model, mask)?;
    let bb = &model.backbone;
    for g in batch {
        let d_in = super::backbone::input_width(g.feat_dim(), model.dims.local_context);
        if d_in != bb.input_dim() {
            return Err(Error::Shape(format!(
                "backbone expects {}-dim input, grid provides {d_in}",
                bb.input_dim()
            )));
        }
    }
    let rows: usize = segments.iter().map(|s| s.rows()).sum();
    let n = count_valid(batch.iter().map(|g| g.labels()))?;
    let scale = T::one() / T::from_usize(n).expect("pixel count fits");

    let mut head_grads: Vec<LinearHead<T>> = segments.iter().map(|s| s.zeros_like()).collect();
    let mut bb_grads = bb.zeros_like();
    let (hidden, e, d_in) = (bb.hidden_dim(), bb.embed_dim(), bb.input_dim());
    let mut h_pre = vec![T::zero(); hidden];
    let mut h = vec![T::zero(); hidden];
    let mut dh = vec![T::zero(); hidden];
    let mut z = vec![T::zero(); e];
    let mut dz = vec![T::zero(); e];
    let mut logits = vec![T::zero(); rows];
    let mut total = T::zero();

    for grid in batch {
        let inputs = backbone_inputs::<T>(grid, model.dims.local_context);
        for (p, &label) in grid.labels().iter().enumerate() {
            if label == IGNORE {
                continue;
            }
            let row = check_label(label, rows)?;
            let x = &inputs[p * d_in..(p + 1) * d_in];
            bb.pixel_forward(x, &mut h_pre, &mut h, &mut z);
            let want_dz = mask.backbone.then_some(dz.as_mut_slice());
            total += head_pixel(
                &segments,
                &flags,
                &z,
                row,
                scale,
                &mut logits,
                &mut head_grads,
                want_dz,
            );
            if mask.backbone {
                bb.pixel_backward(x, &h_pre, &h, &dz, &mut dh, &mut bb_grads);
            }
        }
    }
    let (blocks, future) = split_head_grads(model, head_grads);
    Ok((
        total * scale,
        Grads {
            backbone: bb_grads,
            blocks,
            future,
        },
    ))
}
