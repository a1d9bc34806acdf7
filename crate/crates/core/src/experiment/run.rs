//! One training run from a [`RunConfig`] and the artifacts it leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::data::{Dataset, StandardizationStats};
use crate::error::{Error, Result};
use crate::eval::{corrupt_modality_eval, evaluate, CorruptTarget, CorruptionReport, EvalReport, FeatureMoments, MetricsReport};
use crate::model::{train_epochs, Checkpoint, EpochLog, M3colModel, RngState};

pub const REPORT_FORMAT: &str = "m3col-report";
pub const REPORT_VERSION: u32 = 1;

/// Random stream used for training draws; model initialisation uses the seed directly.
const TRAIN_STREAM: u64 = 1;
/// Random stream used by corruption probes.
const PROBE_STREAM: u64 = 2;

/// Model-ready data: standardised when configured, plus the moments of the training inputs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub standardization: Option<StandardizationStats>,
    pub input_moments: FeatureMoments,
}

impl PreparedData {
    pub fn new(raw: Dataset, standardize: bool) -> Result<Self> {
        let (dataset, standardization) = if standardize {
            let stats = StandardizationStats::from_batch(&raw.train);
            let dataset = Dataset {
                name: raw.name,
                train: stats.apply(&raw.train)?,
                test: stats.apply(&raw.test)?,
            };
            (dataset, Some(stats))
        } else {
            (raw, None)
        };
        let input_moments = FeatureMoments::from_batch(&dataset.train);
        Ok(Self { dataset, standardization, input_moments })
    }

    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Self::new(config.load_dataset()?, config.standardize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySummary {
    pub name: String,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub modalities: Vec<ModalitySummary>,
}

impl DatasetSummary {
    pub fn of(d: &Dataset) -> Self {
        Self {
            name: d.name.clone(),
            n_train: d.train.len(),
            n_test: d.test.len(),
            num_classes: d.num_classes(),
            modalities: d
                .modality_names()
                .iter()
                .zip(d.train.widths())
                .map(|(name, width)| ModalitySummary { name: name.clone(), width })
                .collect(),
        }
    }
}

/// Everything a training run reports. Contains no timings, so equal seeds give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub curves: Vec<EpochLog>,
    pub train: MetricsReport,
    pub test: EvalReport,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub model: M3colModel,
}

/// Trains on already prepared data and evaluates the final model.
pub fn run_prepared(config: &RunConfig, data: &PreparedData) -> Result<RunOutcome> {
    let d = &data.dataset;
    let dims = config.model_dims(d.train.widths(), d.num_classes());
    let mut model = M3colModel::init(dims, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let log = train_epochs(&mut model, &d.train, &config.train_config(), &mut rng)?;

    let train_probs = model.predict(&d.train)?.fused;
    let report = RunReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        seed: config.seed,
        config: config.clone(),
        dataset: DatasetSummary::of(d),
        curves: log.epochs,
        train: MetricsReport::from_probabilities(&train_probs, d.train.labels())?,
        test: evaluate(&model, &d.test)?,
    };
    let mut checkpoint = Checkpoint::new(&model, d.modality_names().to_vec());
    checkpoint.rng = Some(RngState::capture(&rng));
    checkpoint.standardization = data.standardization.clone();
    checkpoint.input_moments = Some(data.input_moments.clone());
    Ok(RunOutcome { report, checkpoint, model })
}

/// Loads data, trains and evaluates as `config` describes.
pub fn run_training(config: &RunConfig) -> Result<RunOutcome> {
    run_prepared(config, &PreparedData::from_config(config)?)
}

/// Training curve as CSV with one unimodal cross-entropy column per modality.
pub fn curves_csv(curves: &[EpochLog], modality_names: &[String]) -> String {
    let mut out = String::from("epoch,phase,lr,contrastive");
    for name in modality_names {
        let _ = write!(out, ",ce_uni_{name}");
    }
    out.push_str(",ce_multi,total,train_acc\n");
    for e in curves {
        let phase = e.phase.map_or("none", |p| p.as_str());
        let _ = write!(out, "{},{phase},{:e},{:e}", e.epoch, e.lr, e.contrastive);
        for m in 0..modality_names.len() {
            match e.ce_uni.get(m) {
                Some(v) => {
                    let _ = write!(out, ",{v:e}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:e},{:e},{}", e.ce_multi, e.total, e.train_acc);
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `curves.csv`, `checkpoint.json` and `config.toml` into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = outcome.report.dataset.modalities.iter().map(|m| m.name.clone()).collect();
    write(&dir.join("report.json"), &outcome.report.to_json()?)?;
    write(&dir.join("curves.csv"), &curves_csv(&outcome.report.curves, &names))?;
    write(&dir.join("config.toml"), &outcome.report.config.to_toml()?)?;
    outcome.checkpoint.save(&dir.join("checkpoint.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub split: Split,
    pub metrics: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionReport>,
}

/// Evaluates a saved model on raw `dataset`, applying the checkpoint's standardisation.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    split: Split,
    corrupt: Option<CorruptTarget>,
    seed: u64,
) -> Result<CheckpointEval> {
    let model = checkpoint.model()?;
    let raw = match split {
        Split::Train => &dataset.train,
        Split::Test => &dataset.test,
    };
    if raw.widths() != model.dims().input_dims {
        return Err(Error::Shape {
            op: "evaluate_checkpoint",
            left: format!("checkpoint input dims {:?}", model.dims().input_dims),
            right: format!("dataset widths {:?}", raw.widths()),
        });
    }
    if raw.num_classes() > model.dims().num_classes {
        return Err(Error::Label {
            label: raw.num_classes() - 1,
            num_classes: model.dims().num_classes,
        });
    }
    let batch = match &checkpoint.standardization {
        Some(stats) => stats.apply(raw)?,
        None => raw.clone(),
    };
    let metrics = evaluate(&model, &batch)?;
    let corruption = match corrupt {
        Some(target) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(PROBE_STREAM);
            Some(corrupt_modality_eval(&model, &batch, checkpoint.input_moments.as_ref(), target, &mut rng)?)
        }
        None => None,
    };
    Ok(CheckpointEval { split, metrics, corruption })
}
