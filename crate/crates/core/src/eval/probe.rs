//! Full evaluation and corrupted-input probes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{error_crosstab, mean_max_confidence, ErrorCrosstab, MetricsReport};
use crate::data::{column_moments, LabeledBatch};
use crate::error::{Error, Result};
use crate::model::M3colModel;
use crate::numgrad::Matrix;

/// Raw per-modality column means and standard deviations of training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMoments {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl FeatureMoments {
    pub fn from_batch(batch: &LabeledBatch) -> Self {
        let (means, stds) = batch.modalities().iter().map(column_moments).unzip();
        Self { means, stds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "modality")]
pub enum CorruptTarget {
    None,
    Modality(usize),
    All,
}

/// `rows` samples of per-column Gaussian noise matching modality `m`'s moments.
pub fn corrupt_features<R: Rng + ?Sized>(
    moments: &FeatureMoments,
    m: usize,
    rows: usize,
    rng: &mut R,
) -> Result<Matrix> {
    let (means, stds) = match (moments.means.get(m), moments.stds.get(m)) {
        (Some(a), Some(b)) if a.len() == b.len() => (a, b),
        _ => {
            return Err(Error::Index { index: m, len: moments.means.len() });
        }
    };
    let mut x = Matrix::zeros(rows, means.len());
    for row in x.data_mut().chunks_mut(means.len().max(1)) {
        for ((v, mu), sd) in row.iter_mut().zip(means).zip(stds) {
            *v = mu + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub target: CorruptTarget,
    pub metrics: MetricsReport,
    pub mean_confidence: f64,
}

/// Fused-head metrics with the targeted modalities replaced by moment-matched noise.
pub fn corrupt_modality_eval<R: Rng + ?Sized>(
    model: &M3colModel,
    test: &LabeledBatch,
    moments: Option<&FeatureMoments>,
    target: CorruptTarget,
    rng: &mut R,
) -> Result<CorruptionReport> {
    let moments = moments
        .ok_or_else(|| Error::Contract("corruption probe needs training feature moments".into()))?;
    if moments.means.len() != test.num_modalities() {
        return Err(Error::Shape {
            op: "corrupt_modality_eval",
            left: format!("{} modalities in moments", moments.means.len()),
            right: format!("{} in batch", test.num_modalities()),
        });
    }
    let targets: Vec<usize> = match target {
        CorruptTarget::None => vec![],
        CorruptTarget::Modality(m) => {
            if m >= test.num_modalities() {
                return Err(Error::Index { index: m, len: test.num_modalities() });
            }
            vec![m]
        }
        CorruptTarget::All => (0..test.num_modalities()).collect(),
    };
    let mut batch = test.clone();
    for m in targets {
        let noise = corrupt_features(moments, m, test.len(), rng)?;
        batch = batch.with_modality(m, noise)?;
    }
    let probs = model.predict(&batch)?.fused;
    Ok(CorruptionReport {
        target,
        metrics: MetricsReport::from_probabilities(&probs, batch.labels())?,
        mean_confidence: mean_max_confidence(&probs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub modality: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fused: MetricsReport,
    pub mean_confidence: f64,
    pub unimodal: Vec<NamedMetrics>,
    /// Present for two-modality data.
    pub crosstab: Option<ErrorCrosstab>,
}

/// Fused and per-modality head metrics on `batch`.
pub fn evaluate(model: &M3colModel, batch: &LabeledBatch) -> Result<EvalReport> {
    let preds = model.predict(batch)?;
    let truth = batch.labels();
    let unimodal = batch
        .modality_names()
        .iter()
        .zip(&preds.unimodal)
        .map(|(name, p)| {
            Ok(NamedMetrics {
                modality: name.clone(),
                metrics: MetricsReport::from_probabilities(p, truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let crosstab = if batch.num_modalities() == 2 {
        Some(error_crosstab(&preds.unimodal_labels(), &preds.fused_labels(), truth)?)
    } else {
        None
    };
    Ok(EvalReport {
        fused: MetricsReport::from_probabilities(&preds.fused, truth)?,
        mean_confidence: mean_max_confidence(&preds.fused)?,
        unimodal,
        crosstab,
    })
}
