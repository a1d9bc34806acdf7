//! Versioned JSON checkpoint.
//!
//! ```text
//! {
//!   "format": "m3col-checkpoint",
//!   "version": 1,
//!   "dims": { input_dims, hidden, embed, classifier_hidden, num_classes, dropout, encoder_activation },
//!   "modality_names": [..],
//!   "parameters": [ { "name": "encoder0.w1", "rows": r, "cols": c, "values": [row-major f64] }, .. ],
//!   "rng": { "seed": "<64 hex chars>", "stream": u64, "word_pos": "<decimal u128>" } | null,
//!   "standardization": { "means": [[..]], "stds": [[..]] } | null,
//!   "input_moments": { "means": [[..]], "stds": [[..]] } | null
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and read back bit-exactly.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{M3colModel, ModelDims};
use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::eval::FeatureMoments;
use crate::numgrad::Matrix;

pub const CHECKPOINT_FORMAT: &str = "m3col-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Config(format!("malformed rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub modality_names: Vec<String>,
    pub parameters: Vec<NamedMatrix>,
    pub rng: Option<RngState>,
    /// Train-split z-score statistics applied to raw features before the model.
    pub standardization: Option<StandardizationStats>,
    /// Per-column moments of the model's training inputs, used by the corruption probes.
    pub input_moments: Option<FeatureMoments>,
}

impl Checkpoint {
    pub fn new(model: &M3colModel, modality_names: Vec<String>) -> Self {
        let parameters = model
            .parameter_names()
            .into_iter()
            .zip(model.parameters())
            .map(|(name, m)| NamedMatrix {
                name,
                rows: m.rows(),
                cols: m.cols(),
                values: m.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims: model.dims().clone(),
            modality_names,
            parameters,
            rng: None,
            standardization: None,
            input_moments: None,
        }
    }

    pub fn model(&self) -> Result<M3colModel> {
        let params = self
            .parameters
            .iter()
            .map(|p| Matrix::new(p.rows, p.cols, p.values.clone()))
            .collect::<Result<Vec<_>>>()?;
        M3colModel::from_parameters(self.dims.clone(), params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("not a checkpoint (format '{}')", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
