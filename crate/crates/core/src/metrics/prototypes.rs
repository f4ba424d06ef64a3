use crate::datagen::FeatureGrid;
use crate::error::{Error, Result};
use crate::model::{embed, BackboneParams};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Mean embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    pub classes: Vec<u16>,
    /// One row per entry of `classes`.
    pub means: Matrix<T>,
    pub counts: Vec<u64>,
}

/// Mean backbone embedding of all pixels labeled with each class of
/// `class_set`, using the images' own labels.
pub fn class_prototypes<T: Scalar>(
    backbone: &BackboneParams<T>,
    local_context: bool,
    images: &[FeatureGrid],
    class_set: &[u16],
) -> Result<PrototypeSet<T>> {
    let e = backbone.embed_dim();
    let max_id = class_set.iter().copied().max().unwrap_or(0) as usize;
    let mut slot = vec![usize::MAX; max_id + 1];
    for (i, &c) in class_set.iter().enumerate() {
        slot[c as usize] = i;
    }
    let mut sums = Matrix::<T>::zeros(class_set.len(), e);
    let mut counts = vec![0u64; class_set.len()];
    for img in images {
        let emb = embed(backbone, img, local_context)?;
        for (p, &l) in img.labels().iter().enumerate() {
            let Some(&i) = slot.get(l as usize) else {
                continue;
            };
            if i == usize::MAX {
                continue;
            }
            counts[i] += 1;
            for (s, &z) in sums.row_mut(i).iter_mut().zip(emb.pixel(p)) {
                *s += z;
            }
        }
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Prototype(format!(
            "class {} has no pixels",
            class_set[i]
        )));
    }
    for (i, &n) in counts.iter().enumerate() {
        let n = T::from_u64(n).expect("count fits");
        sums.row_mut(i).iter_mut().for_each(|s| *s /= n);
    }
    Ok(PrototypeSet {
        classes: class_set.to_vec(),
        means: sums,
        counts,
    })
}
