//! Synthetic segmentation data.
//!
//! Every image is a background field with axis-aligned rectangles of
//! foreground classes painted on top in order. A pixel of class `c` gets the
//! feature `mix(mu_c + sigma * eps)`, where `mu_c` is a unit vector drawn once
//! per class (background included), `eps` is standard normal noise and `mix`
//! is a frozen random map of `mixing_depth` layers, each `x -> B tanh(A x)`.
//!
//! Draw order. Stream 0 of the seed: the `N + 1` class means (d normals each,
//! class-id order), then per mixing layer the entries of `A` then `B`
//! (row-major). Each image has its own stream (see [`crate::rng`]) drawn as:
//! one Bernoulli draw per optional object, then per placed extra object its
//! class, height, width, top, left; then the primary object's height, width,
//! top, left; then `d` normals per pixel in row-major pixel order.
//!
//! Train image `i` has primary class `1 + i / images_per_class`, so every
//! class appears in at least one train and one eval image. The primary object
//! is painted last and therefore always visible.

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureGrid, BACKGROUND};
use crate::error::{Error, Result};
use crate::rng::{RngStream, DATA_STREAM, EVAL_IMAGE_BASE, TRAIN_IMAGE_BASE};

const MIXING_GAIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Foreground classes `N`.
    pub classes: usize,
    pub feat_dim: usize,
    pub height: usize,
    pub width: usize,
    pub images_per_class: usize,
    pub eval_images_per_class: usize,
    /// Inclusive range of objects per image (the primary object included).
    pub min_objects: usize,
    pub max_objects: usize,
    /// Chance that each of the `max_objects - min_objects` optional objects
    /// is placed.
    pub cooccurrence: f64,
    pub noise_sigma: f64,
    pub mixing_depth: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            classes: 10,
            feat_dim: 16,
            height: 16,
            width: 16,
            images_per_class: 12,
            eval_images_per_class: 6,
            min_objects: 1,
            max_objects: 3,
            cooccurrence: 0.2,
            noise_sigma: 0.1,
            mixing_depth: 1,
            seed: 1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation("datagen", m.to_string()));
        if self.classes == 0 || self.feat_dim == 0 || self.height == 0 || self.width == 0 {
            return bad("classes, feat_dim, height and width must be >= 1");
        }
        if self.images_per_class == 0 || self.eval_images_per_class == 0 {
            return bad("images per class must be >= 1");
        }
        if self.min_objects == 0 || self.max_objects < self.min_objects {
            return bad("object count range must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.cooccurrence) {
            return bad("cooccurrence must lie in [0, 1]");
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma <= 0.0 {
            return bad("noise_sigma must be a finite value > 0");
        }
        if self.classes >= super::IGNORE as usize {
            return bad("too many classes for u16 labels");
        }
        Ok(())
    }

    /// Side-length range of generated rectangles.
    pub fn object_sides(&self) -> (usize, usize) {
        let short = self.height.min(self.width);
        let min_side = (short / 5).max(2);
        let max_side = (short / 2).max(min_side);
        (min_side, max_side)
    }

    fn check_geometry(&self) -> Result<()> {
        let (min_side, _) = self.object_sides();
        let short = self.height.min(self.width);
        if short < 2 * min_side || self.max_objects * min_side * min_side > self.height * self.width
        {
            return Err(Error::Generation(format!(
                "{}x{} grid too small for up to {} objects of side >= {min_side}",
                self.height, self.width, self.max_objects
            )));
        }
        Ok(())
    }
}

/// One painted rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectRect {
    pub class: u16,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl ObjectRect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }
}

/// Draws the object layout of one image, in paint order (primary last).
pub fn plan_image(params: &SynthParams, primary: u16, rng: &mut RngStream) -> Vec<ObjectRect> {
    let (min_side, max_side) = params.object_sides();
    let optional = params.max_objects - params.min_objects;
    let extra = params.min_objects - 1
        + (0..optional)
            .filter(|_| rng.bernoulli(params.cooccurrence))
            .count();
    let place = |class: u16, rng: &mut RngStream| {
        let height = rng.range_inclusive(min_side, max_side.min(params.height));
        let width = rng.range_inclusive(min_side, max_side.min(params.width));
        let top = rng.range_inclusive(0, params.height - height);
        let left = rng.range_inclusive(0, params.width - width);
        ObjectRect {
            class,
            top,
            left,
            height,
            width,
        }
    };
    let mut rects = Vec::with_capacity(extra + 1);
    for _ in 0..extra {
        let class = rng.range_inclusive(1, params.classes) as u16;
        rects.push(place(class, rng));
    }
    rects.push(place(primary, rng));
    rects
}

/// Paints rectangles in order onto a background label grid.
pub fn paint_labels(height: usize, width: usize, rects: &[ObjectRect]) -> Vec<u16> {
    let mut labels = vec![BACKGROUND; height * width];
    for r in rects {
        for row in r.top..r.top + r.height {
            labels[row * width + r.left..row * width + r.left + r.width].fill(r.class);
        }
    }
    labels
}

struct Mixing {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    dim: usize,
}

impl Mixing {
    fn draw(dim: usize, depth: usize, rng: &mut RngStream) -> Self {
        let a_std = MIXING_GAIN / (dim as f64).sqrt();
        let b_std = 1.0 / (dim as f64).sqrt();
        let layers = (0..depth)
            .map(|_| {
                let a = (0..dim * dim).map(|_| rng.normal(0.0, a_std)).collect();
                let b = (0..dim * dim).map(|_| rng.normal(0.0, b_std)).collect();
                (a, b)
            })
            .collect();
        Self { layers, dim }
    }

    fn apply(&self, x: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim;
        for (a, b) in &self.layers {
            for i in 0..d {
                let pre: f64 = a[i * d..(i + 1) * d]
                    .iter()
                    .zip(x.iter())
                    .map(|(w, v)| w * v)
                    .sum();
                scratch[i] = pre.tanh();
            }
            for i in 0..d {
                x[i] = b[i * d..(i + 1) * d]
                    .iter()
                    .zip(scratch.iter())
                    .map(|(w, v)| w * v)
                    .sum();
            }
        }
    }
}

fn render(
    params: &SynthParams,
    means: &[Vec<f64>],
    mixing: &Mixing,
    primary: u16,
    stream: u64,
) -> Result<FeatureGrid> {
    let mut rng = RngStream::new(params.seed, stream);
    let rects = plan_image(params, primary, &mut rng);
    let labels = paint_labels(params.height, params.width, &rects);
    let d = params.feat_dim;
    let mut features = Vec::with_capacity(labels.len() * d);
    let mut x = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for &label in &labels {
        let mu = &means[label as usize];
        for (xi, m) in x.iter_mut().zip(mu) {
            *xi = m + params.noise_sigma * rng.normal(0.0, 1.0);
        }
        mixing.apply(&mut x, &mut scratch);
        features.extend(x.iter().map(|&v| v as f32));
    }
    FeatureGrid::new(params.height, params.width, d, features, labels)
}

/// Generates `(train, eval)` datasets. Pure function of `params`.
pub fn generate_dataset(params: &SynthParams) -> Result<(Dataset, Dataset)> {
    params.validate()?;
    params.check_geometry()?;
    let d = params.feat_dim;
    let mut rng = RngStream::new(params.seed, DATA_STREAM);
    let means: Vec<Vec<f64>> = (0..=params.classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
            let n = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|x| *x /= n);
            v
        })
        .collect();
    let mixing = Mixing::draw(d, params.mixing_depth, &mut rng);

    let build = |per_class: usize, base: u64| -> Result<Dataset> {
        let images = (0..params.classes * per_class)
            .map(|i| {
                let primary = (1 + i / per_class) as u16;
                render(params, &means, &mixing, primary, base + i as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(params.classes, params.height, params.width, d, images)
    };
    Ok((
        build(params.images_per_class, TRAIN_IMAGE_BASE)?,
        build(params.eval_images_per_class, EVAL_IMAGE_BASE)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            classes: 4,
            feat_dim: 3,
            height: 10,
            width: 10,
            images_per_class: 2,
            eval_images_per_class: 1,
            ..SynthParams::default()
        }
    }

    #[test]
    fn zero_noise_identity_mixing_gives_one_vector_per_class() {
        let p = SynthParams {
            noise_sigma: 1e-300,
            mixing_depth: 0,
            ..small()
        };
        let (train, _) = generate_dataset(&p).unwrap();
        let mut seen: Vec<Option<Vec<f32>>> = vec![None; p.classes + 1];
        for img in &train.images {
            for (px, &l) in img.labels().iter().enumerate() {
                let f = img.pixel(px).to_vec();
                match &seen[l as usize] {
                    None => seen[l as usize] = Some(f),
                    Some(prev) => assert_eq!(prev, &f),
                }
            }
        }
    }

    #[test]
    fn every_class_present_in_both_splits() {
        let (train, eval) = generate_dataset(&small()).unwrap();
        assert!(train.class_histogram().iter().all(|&c| c > 0));
        assert!(eval.class_histogram()[1..].iter().all(|&c| c > 0));
        assert_eq!(train.len(), 8);
        assert_eq!(eval.len(), 4);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SynthParams { seed: 2, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn tiny_grid_is_generation_error() {
        let p = SynthParams {
            height: 3,
            width: 3,
            ..small()
        };
        assert!(matches!(generate_dataset(&p), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SynthParams {
            classes: 0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthParams {
            noise_sigma: 0.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthParams {
            min_objects: 3,
            max_objects: 2,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthParams {
            cooccurrence: 1.5,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn pixel_counts_match_rectangle_recount() {
        let p = SynthParams {
            classes: 10,
            feat_dim: 16,
            height: 24,
            width: 24,
            seed: 7,
            ..SynthParams::default()
        };
        let (train, _) = generate_dataset(&p).unwrap();
        let mut expected = vec![0u64; p.classes + 1];
        for i in 0..train.len() {
            let primary = (1 + i / p.images_per_class) as u16;
            let rects = plan_image(
                &p,
                primary,
                &mut RngStream::new(p.seed, TRAIN_IMAGE_BASE + i as u64),
            );
            for row in 0..p.height {
                for col in 0..p.width {
                    let owner = rects
                        .iter()
                        .rev()
                        .find(|r| r.contains(row, col))
                        .map_or(0, |r| r.class);
                    expected[owner as usize] += 1;
                }
            }
        }
        assert_eq!(train.class_histogram(), expected);
    }
}
