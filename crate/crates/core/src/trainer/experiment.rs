//! Full runs: step loop, evaluation, probing, snapshots and the run log.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Split};
use super::step::{run_step, StepOptions, StepOutcome};
use crate::datagen::{
    build_schedule, generate_dataset, load_cssf, make_task_stream, ClassSchedule, Dataset,
    FeatureGrid, Scenario, StepData, BACKGROUND, IGNORE,
};
use crate::error::{Error, Result};
use crate::metrics::{
    md_trajectory, miou_groups, ConfusionMatrix, MdRecord, MetricsReport, RunArtifacts,
};
use crate::model::{
    load_checkpoint, predict, save_checkpoint, ClassifierBank, ClassifierBlock, LinearHead,
    SegModel, Strategy,
};
use crate::probing::run_probe;
use crate::rng::{RngStream, BACKBONE_INIT_STREAM, STEP_STREAM_BASE};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub classes: Vec<u16>,
    pub images: usize,
    /// Step 1 loaded from a shared checkpoint instead of trained.
    pub reused: bool,
    pub outcome: Option<StepOutcome>,
    pub observed: MetricsReport,
    pub probe: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub name: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub setting: String,
    pub scenario: Scenario,
    pub num_classes: usize,
    pub schedule: Vec<Vec<u16>>,
    pub steps: Vec<StepRecord>,
    /// Observed metrics after the last step.
    pub final_metrics: MetricsReport,
    /// Wall-clock seconds spent in steps `2..T` (the whole run for joint).
    pub incremental_seconds: f64,
    /// Mean trainable parameter count over steps `2..T`.
    pub avg_trainable_params: Option<f64>,
    pub md: Vec<MdRecord>,
    pub config: ExperimentConfig,
}

impl ExperimentLog {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub log: ExperimentLog,
    pub artifacts: RunArtifacts<T>,
    pub model: SegModel<T>,
}

/// Train and eval splits named by the config.
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &config.data;
    match (&d.synth, &d.train_path, &d.eval_path) {
        (Some(p), _, _) => generate_dataset(p),
        (None, Some(train), Some(eval)) => Ok((load_cssf(train)?, load_cssf(eval)?)),
        _ => Err(Error::Config("data: no source given".into())),
    }
}

/// Observed mIoU after step `t`: predictions over the learned rows, labels
/// of not-yet-seen classes counted as background.
pub fn evaluate_observed<T: Scalar>(
    model: &SegModel<T>,
    images: &[FeatureGrid],
    schedule: &ClassSchedule,
    step: usize,
) -> Result<MetricsReport> {
    let k = schedule.seen_classes(step);
    if model.classifiers.regular_rows() != k {
        return Err(Error::State(format!(
            "model has {} learned rows, C^(1:{step}) has {k} classes",
            model.classifiers.regular_rows()
        )));
    }
    let mut conf = ConfusionMatrix::new(k);
    for img in images {
        let pred = predict(model, img)?;
        let labels: Vec<u16> = img
            .labels()
            .iter()
            .map(|&l| {
                if l != IGNORE && l as usize >= k {
                    BACKGROUND
                } else {
                    l
                }
            })
            .collect();
        conf.add(&pred, &labels)?;
    }
    miou_groups(&conf, schedule, step)
}

fn step1_path(config: &ExperimentConfig) -> Option<PathBuf> {
    config
        .experiment
        .checkpoint_dir
        .as_ref()
        .map(|d| d.join(format!("{}.ckpt", config.step1_key())))
}

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("snapshots").join(format!("step_{step}.ckpt"))
}

pub fn probe_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("snapshots").join(format!("probe_{step}.ckpt"))
}

/// Stores a probe as a one-block model sharing the step's backbone.
pub fn save_probe<T: Scalar>(
    model: &SegModel<T>,
    probe: &LinearHead<T>,
    path: &Path,
) -> Result<()> {
    let mut bank = ClassifierBank::new();
    bank.push_block(ClassifierBlock {
        step: model.current_step,
        classes: (0..probe.rows() as u16).collect(),
        head: probe.clone(),
        frozen: true,
    })?;
    let probe_model = SegModel {
        backbone: model.backbone.clone(),
        classifiers: bank,
        strategy: model.strategy,
        current_step: model.current_step,
        backbone_frozen: true,
        dims: model.dims,
    };
    save_checkpoint(&probe_model, path)
}

/// Reads the per-step snapshots (and probes, where present) of a run
/// directory.
pub fn load_run_artifacts<T: Scalar>(dir: &Path, num_steps: usize) -> Result<RunArtifacts<T>> {
    let mut art = RunArtifacts::default();
    for t in 1..=num_steps {
        let m: SegModel<T> = load_checkpoint(snapshot_path(dir, t))?;
        art.local_context = m.dims.local_context;
        art.heads.push(m.classifiers.regular_head());
        art.backbones.push(m.backbone);
        let p = probe_path(dir, t);
        art.probes.push(if p.exists() {
            Some(load_checkpoint::<T>(&p)?.classifiers.regular_head())
        } else {
            None
        });
    }
    Ok(art)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs a configured experiment in `f64`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput<f64>> {
    let (train, eval) = load_data(config)?;
    run_experiment_on(config, &train, &eval)
}

/// Runs a configured experiment on already loaded splits.
pub fn run_experiment_on<T: Scalar>(
    config: &ExperimentConfig,
    train: &Dataset,
    eval: &Dataset,
) -> Result<RunOutput<T>> {
    config.validate()?;
    let e = &config.experiment;
    let schedule = build_schedule(&e.setting, train.num_classes, e.scenario)?;
    let out_dir = e.output_dir.clone();
    if let Some(d) = &out_dir {
        ensure_dir(&d.join("snapshots"))?;
    }
    let dims = config.dims(train.feat_dim);
    let opts = StepOptions {
        init_std: config.model.init_std,
        spare_rows: config.model.spare_rows,
    };
    let mut model: SegModel<T> = SegModel::new(
        dims,
        e.strategy,
        &mut RngStream::new(e.seed, BACKBONE_INIT_STREAM),
    );
    let mut artifacts = RunArtifacts {
        local_context: dims.local_context,
        ..RunArtifacts::default()
    };
    let mut records = Vec::new();

    let (train_schedule, stream_steps) = if e.strategy == Strategy::Joint {
        let joint = schedule.collapsed();
        let all = StepData {
            step: 1,
            images: train.images.clone(),
            source_indices: (0..train.len()).collect(),
            dropped: 0,
        };
        (joint, vec![all])
    } else {
        let stream = make_task_stream(train, eval, &schedule)?;
        (schedule.clone(), stream.steps)
    };

    for data in &stream_steps {
        let t = data.step;
        let mut reused = false;
        let outcome = match (t, step1_path(config)) {
            (1, Some(path)) if e.strategy != Strategy::Joint && path.exists() => {
                let mut m: SegModel<T> = load_checkpoint(&path)?;
                if m.dims != dims || m.current_step != 1 {
                    return Err(Error::Checkpoint(format!(
                        "{} does not hold a matching step-1 model",
                        path.display()
                    )));
                }
                m.strategy = e.strategy;
                model = m;
                reused = true;
                log::info!("{}: step 1 loaded from {}", config.name(), path.display());
                None
            }
            (1, Some(path)) if e.strategy != Strategy::Joint => {
                let mut rng = RngStream::new(e.seed, STEP_STREAM_BASE + 1);
                let o = run_step(
                    &mut model,
                    data,
                    &train_schedule,
                    &config.hyper,
                    &opts,
                    &mut rng,
                )?;
                ensure_dir(path.parent().expect("checkpoint file has a parent"))?;
                save_checkpoint(&model, &path)?;
                Some(o)
            }
            _ => {
                let mut rng = RngStream::new(e.seed, STEP_STREAM_BASE + t as u64);
                Some(run_step(
                    &mut model,
                    data,
                    &train_schedule,
                    &config.hyper,
                    &opts,
                    &mut rng,
                )?)
            }
        };
        if let Some(o) = &outcome {
            log::info!(
                "{}: step {t}/{} trained on {} images, loss {:.4}, {:.1}s",
                config.name(),
                train_schedule.num_steps(),
                o.images,
                o.final_loss,
                o.wall_seconds
            );
        }
        let observed = if e.strategy == Strategy::Joint {
            let conf = joint_confusion(&model, &eval.images, schedule.num_classes())?;
            miou_groups(&conf, &schedule, schedule.num_steps())?
        } else {
            evaluate_observed(&model, &eval.images, &schedule, t)?
        };

        let probe = if e.probing {
            let r = run_probe(
                &model.backbone,
                dims.local_context,
                &train.images,
                &eval.images,
                &schedule,
                &config.probe_hyper(),
                config.model.init_std,
                e.seed,
            )?;
            if let Some(d) = &out_dir {
                save_probe(&model, &r.head, &probe_path(d, t))?;
            }
            artifacts.probes.push(Some(r.head));
            Some(r.metrics)
        } else {
            artifacts.probes.push(None);
            None
        };
        if let Some(d) = &out_dir {
            save_checkpoint(&model, snapshot_path(d, t))?;
        }
        artifacts.backbones.push(model.backbone.clone());
        artifacts.heads.push(model.classifiers.regular_head());
        records.push(StepRecord {
            step: t,
            classes: train_schedule.classes_at(t).to_vec(),
            images: data.images.len(),
            reused,
            outcome,
            observed,
            probe,
        });
    }

    let incremental: Vec<&StepOutcome> = records
        .iter()
        .filter(|r| e.strategy == Strategy::Joint || r.step >= 2)
        .filter_map(|r| r.outcome.as_ref())
        .collect();
    let incremental_seconds = incremental.iter().map(|o| o.wall_seconds).sum();
    let avg_trainable_params =
        (e.strategy != Strategy::Joint && !incremental.is_empty()).then(|| {
            incremental
                .iter()
                .map(|o| o.trainable_params as f64)
                .sum::<f64>()
                / incremental.len() as f64
        });

    let md = if e.md && e.strategy != Strategy::Joint {
        let images = match config.analysis.prototype_split {
            Split::Eval => &eval.images,
            Split::Train => &train.images,
        };
        md_trajectory(&artifacts, images, &schedule, config.analysis.md_mode)?
    } else {
        Vec::new()
    };

    let log = ExperimentLog {
        name: config.name(),
        strategy: e.strategy,
        seed: e.seed,
        setting: e.setting.to_string(),
        scenario: e.scenario,
        num_classes: schedule.num_classes(),
        schedule: schedule.steps().to_vec(),
        final_metrics: records.last().expect("at least one step").observed.clone(),
        steps: records,
        incremental_seconds,
        avg_trainable_params,
        md,
        config: config.clone(),
    };
    if let Some(d) = &out_dir {
        crate::report::write_run_bundle(&log, d)?;
    }
    Ok(RunOutput {
        log,
        artifacts,
        model,
    })
}

fn joint_confusion<T: Scalar>(
    model: &SegModel<T>,
    images: &[FeatureGrid],
    k: usize,
) -> Result<ConfusionMatrix> {
    let mut conf = ConfusionMatrix::new(k);
    for img in images {
        conf.add(&predict(model, img)?, img.labels())?;
    }
    Ok(conf)
}
