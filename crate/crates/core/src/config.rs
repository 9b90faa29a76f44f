//! Run configuration: one TOML file per experiment.
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/default"
//!
//! [space]            # C, L, N, M and the feature inventory
//! channels = 8
//! length = 4
//! num_cells = 1
//! num_steps = 1
//! features = [
//!   { modality = "A", index = 0, shape = [8, 4], axes = ["channel", "temporal"] },
//!   # ...
//! ]
//!
//! [train]            # Ep, BS, Drpt, LR, L2, MaxLR, MinLR, L2
//! epochs = 20
//! batch_size = 64
//!
//! [task]
//! kind = "planted"   # or "external" with `manifest = "path/manifest.json"`
//! planted_pair = ["A_2", "B_3"]
//! ```
//!
//! Every field except `space` and `task` has a default. Unknown keys are
//! rejected, and every error names the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::CellOutput;
use crate::error::{FusionError, Result};
use crate::feature_adapter::FeatureSpec;
use crate::hypernet::SearchSpaceConfig;
use crate::network::TaskMode;
use crate::ops::PrimitiveOpKind;
use crate::scalar::Scalar;
use crate::search::TrainConfig;
use crate::tasks::{generate, load_external, Datasets, PlantedTaskSpec};

/// Overrides `output_dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "FUSIONNAS_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub space: SpaceSection,
    #[serde(default)]
    pub train: TrainSection,
    pub task: TaskSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    /// C
    pub channels: usize,
    /// L
    pub length: usize,
    /// N
    pub num_cells: usize,
    /// M
    pub num_steps: usize,
    #[serde(default)]
    pub cell_output: CellOutput,
    pub features: Vec<FeatureSpec>,
}

/// Training settings; the seed comes from the top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Ep
    pub epochs: usize,
    /// BS
    pub batch_size: usize,
    /// Drpt
    pub dropout: f64,
    /// LR
    pub arch_lr: f64,
    /// L2 (architecture)
    pub arch_l2: f64,
    /// MaxLR
    pub net_max_lr: f64,
    /// MinLR
    pub net_min_lr: f64,
    /// L2 (network)
    pub net_l2: f64,
    pub eval_epochs: usize,
    pub rank_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            dropout: t.dropout,
            arch_lr: t.arch_lr,
            arch_l2: t.arch_l2,
            net_max_lr: t.net_max_lr,
            net_min_lr: t.net_min_lr,
            net_l2: t.net_l2,
            eval_epochs: t.eval_epochs,
            rank_epochs: t.rank_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSection {
    Planted(PlantedSection),
    External(ExternalSection),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSection {
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
}

/// Planted-task settings; features come from `[space]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSection {
    /// Feature labels such as `"A_2"`.
    pub planted_pair: (String, String),
    pub planted_op: PrimitiveOpKind,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub label_noise: f64,
    pub mode: TaskMode,
    pub planted_gains: (f64, f64),
    pub teacher_channels: usize,
    pub teacher_length: usize,
}

impl Default for PlantedSection {
    fn default() -> Self {
        let d = PlantedTaskSpec::default();
        Self {
            planted_pair: (d.features[d.planted_pair.0].label(), d.features[d.planted_pair.1].label()),
            planted_op: d.planted_op,
            n_classes: d.n_classes,
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            label_noise: d.label_noise,
            mode: d.mode,
            planted_gains: d.planted_gains,
            teacher_channels: d.teacher_channels,
            teacher_length: d.teacher_length,
        }
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> FusionError {
    FusionError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl Default for RunConfig {
    /// The desk-scale planted task with a one-cell, one-step space.
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            space: SpaceSection {
                channels: 8,
                length: 4,
                num_cells: 1,
                num_steps: 1,
                cell_output: CellOutput::SumOfSteps,
                features: PlantedTaskSpec::default().features,
            },
            train: TrainSection::default(),
            task: TaskSection::Planted(PlantedSection::default()),
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("$", e.to_string().trim().to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FusionError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let sp = &self.space;
        for (name, v) in [
            ("channels", sp.channels),
            ("length", sp.length),
            ("num_cells", sp.num_cells),
            ("num_steps", sp.num_steps),
        ] {
            if v == 0 {
                return Err(config_err(format!("space.{name}"), "must be positive"));
            }
        }
        if sp.features.len() < 2 {
            return Err(config_err("space.features", "at least two features are required"));
        }
        for (i, f) in sp.features.iter().enumerate() {
            f.validate().map_err(|e| config_err(format!("space.features[{i}]"), e.to_string()))?;
            if sp.features[..i].iter().any(|g| g.label() == f.label()) {
                return Err(config_err(format!("space.features[{i}]"), format!("duplicate feature {}", f.label())));
            }
        }
        self.train_config()
            .check()
            .map_err(|(field, message)| config_err(format!("train.{field}"), message))?;
        if let TaskSection::Planted(p) = &self.task {
            let spec = self.planted_spec().map_err(|e| match e {
                FusionError::Config { .. } => e,
                other => config_err("task", other.to_string()),
            })?;
            spec.validate().map_err(|e| {
                let field = match &e {
                    FusionError::Dataset(m) if m.contains("classes") => "task.n_classes",
                    FusionError::Dataset(m) if m.contains("noise") => "task.label_noise",
                    FusionError::Dataset(m) if m.contains("sample") => "task.n_train",
                    FusionError::Dataset(m) if m.contains("gains") => "task.planted_gains",
                    FusionError::Dataset(m) if m.contains("Zero") => "task.planted_op",
                    FusionError::Dataset(m) if m.contains("teacher") => "task.teacher_channels",
                    _ => "task.planted_pair",
                };
                config_err(field, e.to_string())
            })?;
            let _ = p;
        }
        Ok(())
    }

    pub fn search_space(&self) -> SearchSpaceConfig {
        SearchSpaceConfig {
            features: self.space.features.clone(),
            num_cells: self.space.num_cells,
            num_steps: self.space.num_steps,
            channels: self.space.channels,
            length: self.space.length,
            cell_output: self.space.cell_output,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            dropout: t.dropout,
            arch_lr: t.arch_lr,
            arch_l2: t.arch_l2,
            net_max_lr: t.net_max_lr,
            net_min_lr: t.net_min_lr,
            net_l2: t.net_l2,
            seed: self.seed,
            eval_epochs: t.eval_epochs,
            rank_epochs: t.rank_epochs,
        }
    }

    /// The planted-task spec, seeded from the run seed.
    pub fn planted_spec(&self) -> Result<PlantedTaskSpec> {
        let TaskSection::Planted(p) = &self.task else {
            return Err(config_err("task.kind", "not a planted task"));
        };
        let find = |label: &str, slot: usize| {
            self.space
                .features
                .iter()
                .position(|f| f.label() == label)
                .ok_or_else(|| config_err(format!("task.planted_pair[{slot}]"), format!("no feature named `{label}`")))
        };
        Ok(PlantedTaskSpec {
            features: self.space.features.clone(),
            planted_pair: (find(&p.planted_pair.0, 0)?, find(&p.planted_pair.1, 1)?),
            planted_op: p.planted_op,
            n_classes: p.n_classes,
            n_train: p.n_train,
            n_val: p.n_val,
            n_test: p.n_test,
            label_noise: p.label_noise,
            mode: p.mode,
            planted_gains: p.planted_gains,
            teacher_channels: p.teacher_channels,
            teacher_length: p.teacher_length,
            seed: self.seed,
        })
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output_dir.clone(),
        }
    }

    /// Generates or loads the datasets. `base_dir` anchors relative
    /// manifest paths.
    pub fn load_datasets<T: Scalar>(&self, base_dir: &Path) -> Result<Datasets<T>> {
        match &self.task {
            TaskSection::Planted(_) => Ok(generate(&self.planted_spec()?)?.datasets),
            TaskSection::External(e) => {
                let path = if e.manifest.is_absolute() {
                    e.manifest.clone()
                } else {
                    base_dir.join(&e.manifest)
                };
                let data = load_external::<T>(&path)?;
                if data.features != self.space.features {
                    return Err(config_err(
                        "space.features",
                        format!("feature inventory differs from the one in {}", path.display()),
                    ));
                }
                Ok(data)
            }
        }
    }
}
