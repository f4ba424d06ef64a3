//! Poly schedule and momentum SGD with weight decay.

use serde::{Deserialize, Serialize};

use super::loss::Grads;
use super::{SegModel, TrainableMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Quantity decayed by the poly schedule; the other one stays constant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyTarget {
    #[default]
    LearningRate,
    WeightDecay,
}

/// `base * (1 - iter / total_iters)^power`.
pub fn poly_lr<T: Scalar>(base: T, iter: usize, total_iters: usize, power: T) -> Result<T> {
    if total_iters == 0 {
        return Err(Error::Range("total_iters must be >= 1".into()));
    }
    if iter > total_iters {
        return Err(Error::Range(format!(
            "iteration {iter} beyond schedule of {total_iters}"
        )));
    }
    let frac = T::from_usize(iter).unwrap() / T::from_usize(total_iters).unwrap();
    Ok(base * (T::one() - frac).powf(power))
}

/// Mutable parameter slices of a model in the same order as
/// [`Grads::named_slices`], each tagged with its trainable flag.
fn param_slices<'a, T: Scalar>(
    model: &'a mut SegModel<T>,
    mask: &TrainableMask,
) -> Vec<(&'a mut [T], bool)> {
    let bb = &mut model.backbone;
    let mut v: Vec<(&mut [T], bool)> = vec![
        (bb.w1.as_mut_slice(), mask.backbone),
        (bb.b1.as_mut_slice(), mask.backbone),
        (bb.w2.as_mut_slice(), mask.backbone),
        (bb.b2.as_mut_slice(), mask.backbone),
    ];
    let (blocks, future) = model.classifiers.parts_mut();
    for (b, &t) in blocks.iter_mut().zip(&mask.blocks) {
        let head = &mut b.head;
        v.push((head.weight.as_mut_slice(), t));
        v.push((head.bias.as_mut_slice(), t));
    }
    if let Some(f) = future {
        v.push((f.head.weight.as_mut_slice(), mask.future));
        v.push((f.head.bias.as_mut_slice(), mask.future));
    }
    v
}

fn velocity_slices<T: Scalar>(v: &mut Grads<T>) -> Vec<&mut [T]> {
    let mut out: Vec<&mut [T]> = vec![
        v.backbone.w1.as_mut_slice(),
        v.backbone.b1.as_mut_slice(),
        v.backbone.w2.as_mut_slice(),
        v.backbone.b2.as_mut_slice(),
    ];
    for b in &mut v.blocks {
        out.push(b.weight.as_mut_slice());
        out.push(b.bias.as_mut_slice());
    }
    if let Some(f) = &mut v.future {
        out.push(f.weight.as_mut_slice());
        out.push(f.bias.as_mut_slice());
    }
    out
}

/// One momentum-SGD update of every trainable entry:
/// `v <- momentum * v + g + weight_decay * w; w <- w - lr * v`.
/// Entries outside `mask` keep their parameter and velocity bits.
///
/// All trainable gradients are checked for finiteness before anything is
/// written, so a failed step leaves the model untouched.
pub fn sgd_step<T: Scalar>(
    model: &mut SegModel<T>,
    grads: &Grads<T>,
    velocity: &mut Grads<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
    mask: &TrainableMask,
) -> Result<()> {
    if mask.blocks.len() != model.classifiers.blocks().len() {
        return Err(Error::Shape(
            "trainable mask does not match classifier blocks".into(),
        ));
    }
    let named = grads.named_slices();
    let params = param_slices(model, mask);
    let vel = velocity_slices(velocity);
    if named.len() != params.len() || vel.len() != params.len() {
        return Err(Error::Shape(format!(
            "model has {} parameter blocks, gradients {}, velocity {}",
            params.len(),
            named.len(),
            vel.len()
        )));
    }
    for (((name, g), (w, trainable)), v) in named.iter().zip(&params).zip(&vel) {
        if g.len() != w.len() || v.len() != w.len() {
            return Err(Error::Shape(format!(
                "gradient or velocity for {name} misaligned"
            )));
        }
        if *trainable && g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(name.clone()));
        }
    }
    for (((_, g), (w, trainable)), v) in named.into_iter().zip(params).zip(vel) {
        if !trainable {
            continue;
        }
        sgd_update(w, g, v, lr, momentum, weight_decay);
    }
    Ok(())
}

/// The update of [`sgd_step`] on one flat parameter slice.
pub fn sgd_update<T: Scalar>(
    w: &mut [T],
    g: &[T],
    v: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) {
    for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = momentum * *vi + gi + weight_decay * *wi;
        *wi -= lr * *vi;
    }
}
