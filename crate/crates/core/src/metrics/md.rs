//! Moving distance: how far the prototype/weight cosine pattern of a class
//! group moves between the step it was learned and later steps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cosine::{cos_matrix, CosMatrix};
use super::prototypes::{class_prototypes, PrototypeSet};
use crate::datagen::{ClassSchedule, FeatureGrid};
use crate::error::{Error, Result};
use crate::model::{BackboneParams, LinearHead};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdSource {
    Observed,
    Probing,
}

impl fmt::Display for MdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MdSource::Observed => "observed",
            MdSource::Probing => "probing",
        })
    }
}

impl FromStr for MdSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(MdSource::Observed),
            "probing" => Ok(MdSource::Probing),
            _ => Err(Error::Artifact(format!("unknown MD source {s:?}"))),
        }
    }
}

/// Which weights stand in for "class weights of step t" at time `t + k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdMode {
    /// The rows' values at time `t + k` (drift of both weights and features).
    #[default]
    Current,
    /// The rows' values at time `t` (drift of features only).
    FrozenAtLearning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdRecord {
    pub source: MdSource,
    /// Step whose class group is tracked.
    pub t: usize,
    /// Lag in steps.
    pub k: usize,
    pub value: f64,
}

/// Mean absolute entry-wise difference of two equally shaped cosine
/// matrices.
pub fn moving_distance<T: Scalar>(cos_ref: &CosMatrix<T>, cos_now: &CosMatrix<T>) -> Result<T> {
    let (a, b) = (&cos_ref.values, &cos_now.values);
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::validation(
            "metrics",
            format!(
                "cosine matrices differ in shape: {}x{} vs {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    if a.is_empty() {
        return Err(Error::validation("metrics", "empty cosine matrix"));
    }
    let sum: T = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (*y - *x).abs())
        .sum();
    Ok(sum / T::from_usize(a.len()).unwrap())
}

/// Per-step snapshots of one run. Index `t - 1` holds the state after step
/// `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts<T> {
    pub local_context: bool,
    pub backbones: Vec<BackboneParams<T>>,
    /// Learned classifier rows (class-id order) after each step.
    pub heads: Vec<LinearHead<T>>,
    /// Probe trained after each step, when probing ran.
    pub probes: Vec<Option<LinearHead<T>>>,
}

fn rows_of<T: Scalar>(head: &LinearHead<T>, classes: &[u16], what: &str) -> Result<Matrix<T>> {
    let mut rows = Vec::with_capacity(classes.len());
    for &c in classes {
        if c as usize >= head.rows() {
            return Err(Error::Artifact(format!("{what} has no row for class {c}")));
        }
        rows.push(head.weight.row(c as usize).to_vec());
    }
    Ok(Matrix::from_rows(&rows))
}

/// Moving distance of every class group `t = 2..T` at every lag
/// `k = 1..T-t`, for the observed classifier and (when every step has one)
/// the probing classifier. Prototypes cover all classes and come from
/// `images`.
pub fn md_trajectory<T: Scalar>(
    artifacts: &RunArtifacts<T>,
    images: &[FeatureGrid],
    schedule: &ClassSchedule,
    mode: MdMode,
) -> Result<Vec<MdRecord>> {
    let num_steps = schedule.num_steps();
    if artifacts.backbones.len() < num_steps || artifacts.heads.len() < num_steps {
        return Err(Error::Artifact(format!(
            "need snapshots for {num_steps} steps, have {} backbones and {} heads",
            artifacts.backbones.len(),
            artifacts.heads.len()
        )));
    }
    let all: Vec<u16> = (0..schedule.num_classes() as u16).collect();
    let mut protos: BTreeMap<usize, PrototypeSet<T>> = BTreeMap::new();
    for step in 2..=num_steps {
        let p = class_prototypes(
            &artifacts.backbones[step - 1],
            artifacts.local_context,
            images,
            &all,
        )?;
        protos.insert(step, p);
    }
    let with_probes = artifacts.probes.len() >= num_steps
        && artifacts.probes[..num_steps].iter().all(Option::is_some);

    let mut out = Vec::new();
    let mut sources = vec![MdSource::Observed];
    if with_probes {
        sources.push(MdSource::Probing);
    }
    for source in sources {
        let head_at = |step: usize| -> &LinearHead<T> {
            match source {
                MdSource::Observed => &artifacts.heads[step - 1],
                MdSource::Probing => artifacts.probes[step - 1].as_ref().expect("checked above"),
            }
        };
        for t in 2..=num_steps {
            let group = schedule.classes_at(t);
            let what = format!("{source} classifier after step {t}");
            let reference =
                cos_matrix(&protos[&t], &rows_of(head_at(t), group, &what)?)?.tagged(t, t);
            for k in 1..=num_steps - t {
                let weights_step = match mode {
                    MdMode::Current => t + k,
                    MdMode::FrozenAtLearning => t,
                };
                let what = format!("{source} classifier after step {weights_step}");
                let now = cos_matrix(
                    &protos[&(t + k)],
                    &rows_of(head_at(weights_step), group, &what)?,
                )?
                .tagged(t + k, t);
                out.push(MdRecord {
                    source,
                    t,
                    k,
                    value: moving_distance(&reference, &now)?.as_f64(),
                });
            }
        }
    }
    Ok(out)
}
