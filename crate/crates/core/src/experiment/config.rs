//! Run configuration: defaults, then a TOML file, then `key=value` overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, generate_synthetic, Dataset, Manifest, SyntheticConfig};
use crate::error::{Error, Result};
use crate::losses::{ContrastiveConfig, ObjectiveConfig};
use crate::model::{Activation, AdamConfig, BatchConfig, ModelDims, TrainConfig};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "M3COL_OUT_DIR";

/// Where the samples come from. With neither key set the default synthetic data is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Manifest path, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub embed: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub encoder_activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 32,
            classifier_hidden: 64,
            dropout: 0.5,
            encoder_activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub accumulation: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 150,
            lr: 5e-3,
            weight_decay: 1e-3,
            step_size: 100,
            gamma: 0.1,
            batch_size: None,
            accumulation: 1,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub unimodal_supervision: bool,
    pub label_mixup: bool,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            unimodal_supervision: true,
            label_mixup: false,
        }
    }
}

/// Reference numbers shown next to measured ones. Purely informational.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    /// Test metrics in percent, keyed by metric name.
    pub test: BTreeMap<String, f64>,
    /// Test accuracy in percent, keyed by ablation variant.
    pub ablation_acc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Z-score every feature column with training statistics.
    pub standardize: bool,
    pub data: DataSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub contrastive: ContrastiveConfig,
    pub objective: ObjectiveSection,
    #[serde(skip_serializing_if = "reference_is_empty")]
    pub reference: ReferenceSection,
    /// Directory relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn reference_is_empty(r: &ReferenceSection) -> bool {
    r.test.is_empty() && r.ablation_acc.is_empty()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            seed: 0,
            out_dir: None,
            standardize: true,
            data: DataSection::default(),
            model: ModelSection::default(),
            optim: OptimSection::default(),
            contrastive: ContrastiveConfig::default(),
            objective: ObjectiveSection::default(),
            reference: ReferenceSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Sets `path.to.key` in `table` to the TOML value `raw`, or to the string `raw`
/// when it does not parse as a value.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text` after applying `overrides` in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text, overrides)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if config.base_dir.as_os_str().is_empty() {
            config.base_dir = PathBuf::from(".");
        }
        Ok(config)
    }

    /// Resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.manifest.is_some() && self.data.synthetic.is_some() {
            return Err(Error::Config("config: set data.manifest or data.synthetic, not both".into()));
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!("config: dropout {} outside [0, 1)", self.model.dropout)));
        }
        let m = &self.model;
        if m.hidden == 0 || m.embed == 0 || m.classifier_hidden == 0 {
            return Err(Error::Config("config: model widths must be positive".into()));
        }
        self.train_config().validate().map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn synthetic(&self) -> Option<SyntheticConfig> {
        match (&self.data.manifest, &self.data.synthetic) {
            (None, None) => Some(SyntheticConfig::default()),
            (None, Some(s)) => Some(s.clone()),
            _ => None,
        }
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.data.manifest.as_ref().map(|p| self.base_dir.join(p))
    }

    /// Raw (unstandardised) data named by the config.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.manifest_path() {
            Some(path) => {
                let manifest = Manifest::read(&path)?;
                load_dataset(path.parent().unwrap_or(Path::new(".")), &manifest)
            }
            None => generate_synthetic(&self.synthetic().expect("no manifest means synthetic")),
        }
    }

    pub fn model_dims(&self, input_dims: Vec<usize>, num_classes: usize) -> ModelDims {
        ModelDims {
            input_dims,
            hidden: self.model.hidden,
            embed: self.model.embed,
            classifier_hidden: self.model.classifier_hidden,
            num_classes,
            dropout: self.model.dropout,
            encoder_activation: self.model.encoder_activation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optim;
        TrainConfig {
            epochs: o.epochs,
            lr: o.lr,
            step_size: o.step_size,
            gamma: o.gamma,
            adam: AdamConfig {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
            },
            objective: ObjectiveConfig {
                contrastive: self.contrastive.clone(),
                unimodal_supervision: self.objective.unimodal_supervision,
                label_mixup: self.objective.label_mixup,
            },
            batch: BatchConfig {
                batch_size: o.batch_size,
                accumulation: o.accumulation,
            },
        }
    }

    /// Output directory: `explicit`, then the environment override, then the
    /// config's `out_dir`, then `runs/<name>`.
    pub fn resolve_out_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }
}

/// Synthetic settings from either a bare table or a run config's `[data.synthetic]`.
pub fn load_synthetic_config(path: &Path) -> Result<SyntheticConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
    let config = if table.contains_key("data") {
        RunConfig::from_toml(&text, &[])?
            .synthetic()
            .ok_or_else(|| Error::Config("config: data source is a manifest, not synthetic".into()))?
    } else {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("synthetic config: {e}")))?
    };
    config.validate()?;
    Ok(config)
}
