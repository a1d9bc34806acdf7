//! Seeded multimodal data with class structure and a cross-class shared pool.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledBatch};
use crate::error::{Error, Result};
use crate::numgrad::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub modalities: usize,
    /// Width of every modality unless `dims` is given.
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    pub samples_per_class: usize,
    pub latent_dim: usize,
    /// Scale of the class latents and of the shared pool vectors.
    pub signal: f64,
    /// Standard deviation of latent and observation noise.
    pub noise: f64,
    /// Probability that a sample also receives a pool component.
    pub shared_prob: f64,
    pub shared_pool: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            modalities: 2,
            dim: 64,
            dims: None,
            samples_per_class: 200,
            latent_dim: 16,
            signal: 1.0,
            noise: 1.5,
            shared_prob: 0.3,
            shared_pool: 4,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn widths(&self) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| vec![self.dim; self.modalities])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic: {msg}")));
        let counts = [
            ("classes", self.classes),
            ("modalities", self.modalities),
            ("samples_per_class", self.samples_per_class),
            ("latent_dim", self.latent_dim),
            ("shared_pool", self.shared_pool),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        let widths = self.widths();
        if widths.len() != self.modalities || widths.contains(&0) {
            return bad(format!("dims {widths:?} must be {} positive widths", self.modalities));
        }
        if !(self.signal >= 0.0 && self.signal.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("signal and noise must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.shared_prob) {
            return bad(format!("shared_prob {} outside [0, 1]", self.shared_prob));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generates a stratified train/test split from `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.latent_dim;
    let widths = config.widths();

    let class_latents: Vec<Vec<f64>> =
        (0..config.classes).map(|_| gaussian(&mut rng, k, config.signal)).collect();
    let maps: Vec<Matrix> = widths
        .iter()
        .map(|&d| Matrix::new(k, d, gaussian(&mut rng, k * d, 1.0 / (k as f64).sqrt())))
        .collect::<Result<_>>()?;
    let pool: Vec<Vec<f64>> =
        (0..config.shared_pool).map(|_| gaussian(&mut rng, k, config.signal)).collect();

    let total = config.classes * config.samples_per_class;
    let mut latent = Matrix::zeros(total, k);
    let mut labels = Vec::with_capacity(total);
    for (c, z) in class_latents.iter().enumerate() {
        for _ in 0..config.samples_per_class {
            let r = labels.len();
            let noise = gaussian(&mut rng, k, config.noise);
            let row = latent.row_mut(r);
            for ((u, zc), e) in row.iter_mut().zip(z).zip(&noise) {
                *u = zc + e;
            }
            if rng.random::<f64>() < config.shared_prob {
                let v = &pool[rng.random_range(0..pool.len())];
                for (u, p) in row.iter_mut().zip(v) {
                    *u += p;
                }
            }
            labels.push(c);
        }
    }

    let mut features = Vec::with_capacity(maps.len());
    for a in &maps {
        let mut x = latent.matmul(a)?;
        let noise = gaussian(&mut rng, x.len(), config.noise);
        for (v, e) in x.data_mut().iter_mut().zip(&noise) {
            *v += e;
        }
        features.push(x);
    }

    let n_test = (config.samples_per_class as f64 * config.test_fraction).round() as usize;
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..config.classes {
        let mut rows: Vec<usize> =
            (c * config.samples_per_class..(c + 1) * config.samples_per_class).collect();
        rows.shuffle(&mut rng);
        let (te, tr) = rows.split_at(n_test.min(rows.len()));
        test_idx.extend_from_slice(te);
        train_idx.extend_from_slice(tr);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);

    let names: Vec<String> = (0..config.modalities).map(|m| format!("m{m}")).collect();
    let all = LabeledBatch::new(features, labels, config.classes, names)?;
    Ok(Dataset {
        name: "synthetic".into(),
        train: all.select(&train_idx)?,
        test: all.select(&test_idx)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let d = generate_synthetic(&SyntheticConfig::default()).unwrap();
        assert_eq!(d.train.len() + d.test.len(), 800);
        assert_eq!((d.train.len(), d.test.len()), (560, 240));
        assert_eq!(d.train.widths(), vec![64, 64]);
        for c in 0..4 {
            assert_eq!(d.test.labels().iter().filter(|&&y| y == c).count(), 60);
        }
    }

    #[test]
    fn noiseless_rows_identical_within_class() {
        let cfg = SyntheticConfig {
            noise: 0.0,
            shared_prob: 0.0,
            samples_per_class: 10,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        for x in d.train.modalities() {
            for c in 0..cfg.classes {
                let rows: Vec<&[f64]> = (0..d.train.len())
                    .filter(|&i| d.train.labels()[i] == c)
                    .map(|i| x.row(i))
                    .collect();
                assert!(rows.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn seeded() {
        let cfg = SyntheticConfig { samples_per_class: 20, ..Default::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SyntheticConfig { classes: 0, ..Default::default() },
            SyntheticConfig { shared_prob: 1.5, ..Default::default() },
            SyntheticConfig { noise: -1.0, ..Default::default() },
            SyntheticConfig { dims: Some(vec![3]), ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }
}
