//! Experiment configuration files.
//!
//! A config is a TOML document (`key = value` lines grouped in sections):
//!
//! ```toml
//! [experiment]
//! name = "dft-5-1"          # optional, used as legend label
//! seed = 1                  # model init, shuffling, probes
//! setting = "5-1"           # "X-Y" or explicit list "5,1,1,1,1,1"
//! scenario = "overlapped"   # or "disjoint"
//! strategy = "dft"          # dft | fixb | fixbc | fixbc_p | joint
//! probing = true
//! md = true
//! output_dir = "runs/dft"   # optional; report bundle and snapshots
//! checkpoint_dir = "runs/base" # optional; shared step-1 checkpoints
//!
//! [hyper]                   # all optional
//! lr0 = 0.01
//! momentum = 0.9
//! weight_decay = 1e-4
//! poly_power = 0.9
//! epochs_per_step = 40
//! batch_size = 8
//! poly_target = "learning_rate"   # or "weight_decay"
//!
//! [model]                   # all optional
//! hidden = 64
//! embed = 32
//! local_context = false
//! init_std = 0.01
//! spare_rows = 0            # >0: keep this many unbound future rows
//!
//! [data]                    # either synth parameters...
//! [data.synth]
//! classes = 10              # every SynthParams field; seed defaults
//! feat_dim = 16             # to experiment.seed
//! # ...or dataset files
//! # train_path = "train.cssf"
//! # eval_path = "eval.cssf"
//!
//! [probe]                   # all optional
//! epochs = 80               # default: 2 x epochs_per_step
//! lr0 = 0.01
//!
//! [analysis]
//! md_mode = "current"       # or "frozen_at_learning"
//! prototype_split = "eval"  # or "train"
//! ```

use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{Scenario, Setting, SynthParams};
use crate::error::{Error, Result};
use crate::metrics::MdMode;
use crate::model::{Hyper, ModelDims, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub setting: Setting,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    pub strategy: Strategy,
    #[serde(default)]
    pub probing: bool,
    #[serde(default)]
    pub md: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_scenario() -> Scenario {
    Scenario::Overlapped
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub embed: usize,
    pub local_context: bool,
    /// Std of new classifier rows (weights); biases start at zero.
    pub init_std: f64,
    /// 0: pre-allocate exactly the scheduled future classes. Otherwise keep
    /// this many unbound spare rows without using the schedule.
    pub spare_rows: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 32,
            local_context: false,
            init_std: 0.01,
            spare_rows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub synth: Option<SynthParams>,
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub eval_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub epochs: Option<usize>,
    pub lr0: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Eval,
    Train,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub md_mode: MdMode,
    pub prototype_split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Synthetic `5-1` overlapped benchmark over 10 classes with default
    /// hyperparameters; data seed equals the run seed.
    pub fn reference(seed: u64, strategy: Strategy) -> Self {
        Self {
            experiment: ExperimentSection {
                name: Some(strategy.name().to_string()),
                seed,
                setting: Setting::Increment {
                    initial: 5,
                    increment: 1,
                },
                scenario: Scenario::Overlapped,
                strategy,
                probing: false,
                md: false,
                output_dir: None,
                checkpoint_dir: None,
            },
            hyper: Hyper::default(),
            model: ModelSection::default(),
            data: DataSection {
                synth: Some(SynthParams {
                    seed,
                    ..SynthParams::default()
                }),
                train_path: None,
                eval_path: None,
            },
            probe: ProbeSection::default(),
            analysis: AnalysisSection::default(),
        }
    }

    /// Parses TOML text. A `[data.synth]` table without `seed` inherits
    /// `experiment.seed`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let seed = doc
            .get("experiment")
            .and_then(|e| e.get("seed"))
            .and_then(|s| s.as_integer());
        if let (Some(seed), Some(synth)) = (
            seed,
            doc.get_mut("data")
                .and_then(|d| d.get_mut("synth"))
                .and_then(|s| s.as_table_mut()),
        ) {
            synth.entry("seed").or_insert(toml::Value::Integer(seed));
        }
        // Re-parse the original text for errors so line numbers are reported.
        let cfg: Self = match toml::from_str::<Self>(text) {
            Ok(_) => doc
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            Err(e) => return Err(Error::Config(e.to_string())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.model.hidden == 0 || self.model.embed == 0 {
            return Err(Error::Config("model: hidden and embed must be >= 1".into()));
        }
        if !(self.model.init_std > 0.0 && self.model.init_std.is_finite()) {
            return Err(Error::Config("model: init_std must be > 0".into()));
        }
        match (
            &self.data.synth,
            &self.data.train_path,
            &self.data.eval_path,
        ) {
            (Some(s), None, None) => s.validate(),
            (None, Some(_), Some(_)) => Ok(()),
            _ => Err(Error::Config(
                "data: give either [data.synth] or both train_path and eval_path".into(),
            )),
        }
    }

    pub fn name(&self) -> String {
        self.experiment.name.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-s{}",
                self.experiment.strategy, self.experiment.setting, self.experiment.seed
            )
        })
    }

    pub fn dims(&self, feat_dim: usize) -> ModelDims {
        ModelDims {
            feat_dim,
            hidden: self.model.hidden,
            embed: self.model.embed,
            local_context: self.model.local_context,
        }
    }

    /// Probe optimizer settings: the main ones with doubled epochs unless
    /// overridden.
    pub fn probe_hyper(&self) -> Hyper {
        Hyper {
            epochs_per_step: self.probe.epochs.unwrap_or(2 * self.hyper.epochs_per_step),
            lr0: self.probe.lr0.unwrap_or(self.hyper.lr0),
            ..self.hyper.clone()
        }
    }

    /// Identifies everything step 1 depends on (strategy excluded).
    pub fn step1_key(&self) -> String {
        let e = &self.experiment;
        let fingerprint = serde_json::json!({
            "seed": e.seed,
            "setting": e.setting.to_string(),
            "scenario": e.scenario,
            "hyper": self.hyper,
            "model": self.model,
            "data": self.data,
        })
        .to_string();
        let mut h = DefaultHasher::new();
        fingerprint.hash(&mut h);
        format!("step1-{:016x}", h.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
seed = 4
setting = "5-1"
strategy = "fixbc_p"

[data.synth]
classes = 10
"#;

    #[test]
    fn minimal_config_with_inherited_seed() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.experiment.strategy, Strategy::FixBCP);
        assert_eq!(c.data.synth.as_ref().unwrap().seed, 4);
        assert_eq!(c.hyper, Hyper::default());
        assert_eq!(c.probe_hyper().epochs_per_step, 80);
    }

    #[test]
    fn reference_round_trips_through_toml() {
        let c = ExperimentConfig::reference(2, Strategy::Dft);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = MINIMAL.replace("strategy = \"fixbc_p\"", "strategy = \"ewc\"");
        let err = ExperimentConfig::from_toml_str(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 5"), "{err}");
        let err = ExperimentConfig::from_toml_str("[experiment]\nseed = \n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn data_source_must_be_unambiguous() {
        let text = MINIMAL.replace(
            "[data.synth]\nclasses = 10",
            "[data]\ntrain_path = \"a.cssf\"",
        );
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn step1_key_ignores_strategy_only() {
        let a = ExperimentConfig::reference(1, Strategy::Dft);
        let b = ExperimentConfig::reference(1, Strategy::FixBC);
        let c = ExperimentConfig::reference(2, Strategy::Dft);
        assert_eq!(a.step1_key(), b.step1_key());
        assert_ne!(a.step1_key(), c.step1_key());
    }
}
