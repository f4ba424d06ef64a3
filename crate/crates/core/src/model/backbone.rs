//! Per-pixel two-layer ReLU backbone.

use serde::{Deserialize, Serialize};

use crate::datagen::FeatureGrid;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// `z = W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> BackboneParams<T> {
    pub fn zeros(input_dim: usize, hidden: usize, embed: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input_dim),
            b1: vec![T::zero(); hidden],
            w2: Matrix::zeros(embed, hidden),
            b2: vec![T::zero(); embed],
        }
    }

    /// He-normal weights, zero biases. Draws `W1` then `W2`, row-major.
    pub fn init(input_dim: usize, hidden: usize, embed: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(input_dim, hidden, embed);
        let s1 = (2.0 / input_dim as f64).sqrt();
        p.w1.as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.normal_scalar(0.0, s1));
        let s2 = (2.0 / hidden as f64).sqrt();
        p.w2.as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.normal_scalar(0.0, s2));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.embed_dim())
    }

    /// Forward pass for one input vector, keeping the hidden activations.
    #[inline]
    pub(crate) fn pixel_forward(&self, x: &[T], h_pre: &mut [T], h: &mut [T], z: &mut [T]) {
        self.w1.matvec_into(x, h_pre);
        for ((hp, hv), b) in h_pre.iter_mut().zip(h.iter_mut()).zip(&self.b1) {
            *hp += *b;
            *hv = hp.max(T::zero());
        }
        self.w2.matvec_into(h, z);
        for (zv, b) in z.iter_mut().zip(&self.b2) {
            *zv += *b;
        }
    }

    /// Accumulates parameter gradients given `dL/dz` for one pixel.
    #[inline]
    pub(crate) fn pixel_backward(
        &self,
        x: &[T],
        h_pre: &[T],
        h: &[T],
        dz: &[T],
        dh: &mut [T],
        grads: &mut BackboneParams<T>,
    ) {
        let hidden = self.hidden_dim();
        dh.iter_mut().for_each(|v| *v = T::zero());
        for (i, &g) in dz.iter().enumerate() {
            grads.b2[i] += g;
            let grow = grads.w2.row_mut(i);
            for (gw, &hv) in grow.iter_mut().zip(h) {
                *gw += g * hv;
            }
            for (d, &w) in dh.iter_mut().zip(self.w2.row(i)) {
                *d += g * w;
            }
        }
        for j in 0..hidden {
            if h_pre[j] <= T::zero() {
                continue;
            }
            let g = dh[j];
            grads.b1[j] += g;
            for (gw, &xv) in grads.w1.row_mut(j).iter_mut().zip(x) {
                *gw += g * xv;
            }
        }
    }
}

/// Per-pixel embeddings of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid<T> {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> EmbeddingGrid<T> {
    pub fn pixel(&self, p: usize) -> &[T] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Backbone input vectors for every pixel, row-major.
///
/// Without local context this is the raw feature. With it, each vector is the
/// feature followed by the mean feature of its 3x3 neighbourhood (clipped at
/// the border), doubling the input width.
pub fn backbone_inputs<T: Scalar>(grid: &FeatureGrid, local_context: bool) -> Vec<T> {
    let d = grid.feat_dim();
    if !local_context {
        return grid
            .features()
            .iter()
            .map(|&v| T::from_feature(v))
            .collect();
    }
    let (h, w) = (grid.height(), grid.width());
    let mut out = Vec::with_capacity(h * w * 2 * d);
    let mut mean = vec![0.0f64; d];
    for r in 0..h {
        for c in 0..w {
            mean.iter_mut().for_each(|m| *m = 0.0);
            let mut n = 0.0;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    for (m, &v) in mean.iter_mut().zip(grid.pixel(rr * w + cc)) {
                        *m += v as f64;
                    }
                    n += 1.0;
                }
            }
            out.extend(grid.pixel(r * w + c).iter().map(|&v| T::from_feature(v)));
            out.extend(mean.iter().map(|&m| T::lit(m / n)));
        }
    }
    out
}

pub(crate) fn input_width(feat_dim: usize, local_context: bool) -> usize {
    if local_context {
        2 * feat_dim
    } else {
        feat_dim
    }
}

/// Embeds every pixel of `grid`.
pub fn embed<T: Scalar>(
    backbone: &BackboneParams<T>,
    grid: &FeatureGrid,
    local_context: bool,
) -> Result<EmbeddingGrid<T>> {
    let d_in = input_width(grid.feat_dim(), local_context);
    if d_in != backbone.input_dim() {
        return Err(Error::Shape(format!(
            "backbone expects {}-dim input, grid provides {d_in}",
            backbone.input_dim()
        )));
    }
    let inputs = backbone_inputs::<T>(grid, local_context);
    let e = backbone.embed_dim();
    let mut h_pre = vec![T::zero(); backbone.hidden_dim()];
    let mut h = h_pre.clone();
    let mut data = vec![T::zero(); grid.num_pixels() * e];
    for (x, z) in inputs.chunks_exact(d_in).zip(data.chunks_exact_mut(e)) {
        backbone.pixel_forward(x, &mut h_pre, &mut h, z);
    }
    Ok(EmbeddingGrid {
        height: grid.height(),
        width: grid.width(),
        dim: e,
        data,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, d: usize, seed: u64) -> FeatureGrid {
        let mut rng = RngStream::new(seed, 0);
        let f = (0..h * w * d)
            .map(|_| rng.normal(0.0, 1.0) as f32)
            .collect();
        FeatureGrid::new(h, w, d, f, vec![0; h * w]).unwrap()
    }

    #[test]
    fn zero_params_give_zero_embeddings() {
        let bb = BackboneParams::<f64>::zeros(3, 4, 2);
        let e = embed(&bb, &grid(2, 2, 3, 1), false).unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_scalar_network() {
        let bb = BackboneParams {
            w1: Matrix::from_vec(1, 1, vec![2.0]),
            b1: vec![0.0],
            w2: Matrix::from_vec(1, 1, vec![3.0]),
            b2: vec![1.0],
        };
        let g = FeatureGrid::new(1, 1, 1, vec![0.5], vec![0]).unwrap();
        assert_eq!(embed(&bb, &g, false).unwrap().data, vec![4.0]);
    }

    /// Scalar-loop oracle written independently of the matvec helpers.
    fn naive(bb: &BackboneParams<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; bb.hidden_dim()];
        for j in 0..h.len() {
            let mut s = bb.b1[j];
            for i in 0..x.len() {
                s += bb.w1.get(j, i) * x[i];
            }
            h[j] = if s > 0.0 { s } else { 0.0 };
        }
        (0..bb.embed_dim())
            .map(|k| {
                let mut s = bb.b2[k];
                for j in 0..h.len() {
                    s += bb.w2.get(k, j) * h[j];
                }
                s
            })
            .collect()
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        for seed in 0..10 {
            let mut rng = RngStream::new(seed, 7);
            let mut bb = BackboneParams::<f64>::init(3, 5, 4, &mut rng);
            bb.b1.iter_mut().for_each(|b| *b = rng.normal(0.0, 0.5));
            bb.b2.iter_mut().for_each(|b| *b = rng.normal(0.0, 0.5));
            let g = grid(2, 2, 3, seed);
            let e = embed(&bb, &g, false).unwrap();
            for p in 0..4 {
                let x: Vec<f64> = g.pixel(p).iter().map(|&v| v as f64).collect();
                for (a, b) in e.pixel(p).iter().zip(naive(&bb, &x)) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn local_context_appends_neighbourhood_mean() {
        let g = FeatureGrid::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![0; 4]).unwrap();
        let x: Vec<f64> = backbone_inputs(&g, true);
        // every pixel of a 2x2 grid sees the whole grid
        assert_eq!(x, vec![1.0, 2.5, 2.0, 2.5, 3.0, 2.5, 4.0, 2.5]);
        let bb = BackboneParams::<f64>::zeros(1, 2, 2);
        assert!(matches!(embed(&bb, &g, true), Err(Error::Shape(_))));
    }
}
