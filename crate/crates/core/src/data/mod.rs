//! Labelled multimodal batches, standardisation, file ingestion and synthetic data.

mod io;
mod synthetic;

pub use io::{load_dataset, write_dataset, Manifest, SplitFiles};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::Matrix;

/// Columns whose standard deviation is below this are left unscaled.
pub const STD_EPS: f64 = 1e-12;

/// Aligned per-modality feature matrices and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    modalities: Vec<Matrix>,
    labels: Vec<usize>,
    num_classes: usize,
    names: Vec<String>,
}

impl LabeledBatch {
    pub fn new(
        modalities: Vec<Matrix>,
        labels: Vec<usize>,
        num_classes: usize,
        names: Vec<String>,
    ) -> Result<Self> {
        if names.len() != modalities.len() {
            return Err(Error::Contract(format!(
                "{} modality names for {} modalities",
                names.len(),
                modalities.len()
            )));
        }
        for (m, x) in modalities.iter().enumerate() {
            if x.rows() != labels.len() {
                return Err(Error::Shape {
                    op: "LabeledBatch::new",
                    left: format!("modality {m} ({}) has {} rows", names[m], x.rows()),
                    right: format!("{} labels", labels.len()),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label: bad,
                num_classes,
            });
        }
        Ok(Self {
            modalities,
            labels,
            num_classes,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn modalities(&self) -> &[Matrix] {
        &self.modalities
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modality_names(&self) -> &[String] {
        &self.names
    }

    pub fn widths(&self) -> Vec<usize> {
        self.modalities.iter().map(Matrix::cols).collect()
    }

    /// Rows `indices` of every modality, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let modalities = self
            .modalities
            .iter()
            .map(|x| x.select_rows(indices))
            .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(modalities, labels, self.num_classes, self.names.clone())
    }

    /// Same batch with modality `m` replaced.
    pub fn with_modality(&self, m: usize, features: Matrix) -> Result<Self> {
        let mut modalities = self.modalities.clone();
        let slot = modalities.get_mut(m).ok_or(Error::Index {
            index: m,
            len: self.modalities.len(),
        })?;
        if features.shape() != slot.shape() {
            return Err(Error::shape("with_modality", slot.shape(), features.shape()));
        }
        *slot = features;
        Self::new(modalities, self.labels.clone(), self.num_classes, self.names.clone())
    }

    /// Index of a modality by name or decimal position.
    pub fn modality_index(&self, key: &str) -> Option<usize> {
        self.names
            .iter()
            .position(|n| n == key)
            .or_else(|| key.parse().ok().filter(|&i| i < self.names.len()))
    }
}

/// A train/test pair sharing modalities and classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: LabeledBatch,
    pub test: LabeledBatch,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn modality_names(&self) -> &[String] {
        self.train.modality_names()
    }
}

/// Per-modality column means and standard deviations from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<Vec<f64>>,
    /// Population standard deviations; columns below [`STD_EPS`] are stored as 1.
    pub stds: Vec<Vec<f64>>,
}

/// Population mean and standard deviation of every column.
pub(crate) fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows().max(1) as f64;
    let mut means = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut vars = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let stds = vars.into_iter().map(|s| (s / n).sqrt()).collect();
    (means, stds)
}

impl StandardizationStats {
    pub fn from_batch(train: &LabeledBatch) -> Self {
        let (means, stds) = train
            .modalities()
            .iter()
            .map(|x| {
                let (m, s) = column_moments(x);
                let s = s.into_iter().map(|v| if v < STD_EPS { 1.0 } else { v }).collect();
                (m, s)
            })
            .unzip();
        Self { means, stds }
    }

    pub fn apply(&self, batch: &LabeledBatch) -> Result<LabeledBatch> {
        if batch.num_modalities() != self.means.len() {
            return Err(Error::Shape {
                op: "standardize",
                left: format!("{} modalities in stats", self.means.len()),
                right: format!("{} in batch", batch.num_modalities()),
            });
        }
        let modalities = batch
            .modalities()
            .iter()
            .enumerate()
            .map(|(m, x)| {
                let (means, stds) = (&self.means[m], &self.stds[m]);
                if x.cols() != means.len() {
                    return Err(Error::shape("standardize", (x.rows(), means.len()), x.shape()));
                }
                Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                    (x.get(r, c) - means[c]) / stds[c]
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledBatch::new(
            modalities,
            batch.labels().to_vec(),
            batch.num_classes(),
            batch.modality_names().to_vec(),
        )
    }
}

/// Z-scores `apply_to` with `stats`, or with statistics computed from `train` when absent.
pub fn standardize(
    train: &LabeledBatch,
    apply_to: &LabeledBatch,
    stats: Option<&StandardizationStats>,
) -> Result<(LabeledBatch, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizationStats::from_batch(train),
    };
    let out = stats.apply(apply_to)?;
    Ok((out, stats))
}
