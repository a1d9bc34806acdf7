//! Mixing coefficients, partner permutations and convex-combination mixtures.
//!
//! One [`MixupPlan`] holds a coefficient `lambda_i ~ Beta(alpha, alpha)` per batch
//! row, shared by all modalities, and an independent partner permutation per
//! modality. Row `i` of modality `m` is mixed with row `perm_m(i)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{Graph, Matrix, Tensor};

/// Natural log of a `Gamma(shape, 1)` draw.
///
/// Marsaglia-Tsang squeeze for `shape >= 1`; for `shape < 1` the draw for
/// `shape + 1` is boosted by `U^(1/shape)`, which is done in log space because
/// `U^(1/0.15)` underflows often enough to matter.
pub fn sample_gamma_ln<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::Parameter(format!(
            "gamma shape must be positive and finite, got {shape}"
        )));
    }
    if shape < 1.0 {
        let boost = open_unit(rng).ln() / shape;
        return Ok(sample_gamma_ln(shape + 1.0, rng)? + boost);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = open_unit(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return Ok(d.ln() + v.ln());
        }
    }
}

/// Uniform draw on `(0, 1]`.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// One draw from `Beta(alpha, alpha)` as `G1 / (G1 + G2)` with `Gi ~ Gamma(alpha)`.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!(
            "beta shape must be positive, got {alpha}"
        )));
    }
    let a = sample_gamma_ln(alpha, rng)?;
    let b = sample_gamma_ln(alpha, rng)?;
    // G1 / (G1 + G2) = 1 / (1 + exp(ln G2 - ln G1))
    let lambda = 1.0 / (1.0 + (b - a).exp());
    Ok(lambda.clamp(0.0, 1.0))
}

/// Per-batch mixing coefficients and per-modality partner permutations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupPlan {
    lambdas: Vec<f64>,
    permutations: Vec<Vec<usize>>,
    alpha: f64,
}

impl MixupPlan {
    pub fn new(lambdas: Vec<f64>, permutations: Vec<Vec<usize>>, alpha: f64) -> Result<Self> {
        let n = lambdas.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::Parameter(format!("mixing coefficient {l} outside [0, 1]")));
        }
        for (m, perm) in permutations.iter().enumerate() {
            if !is_permutation(perm, n) {
                return Err(Error::Parameter(format!(
                    "partner list for modality {m} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(Self {
            lambdas,
            permutations,
            alpha,
        })
    }

    /// `lambda == 1` everywhere and identity partners: every mixture is the original row.
    pub fn identity(n: usize, num_modalities: usize) -> Result<Self> {
        Self::new(
            vec![1.0; n],
            vec![(0..n).collect(); num_modalities],
            f64::NAN,
        )
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.permutations.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn permutation(&self, modality: usize) -> Result<&[usize]> {
        self.permutations
            .get(modality)
            .map(Vec::as_slice)
            .ok_or(Error::Index {
                index: modality,
                len: self.permutations.len(),
            })
    }

    /// Plan whose modality `k` uses this plan's modality `order[k]` permutation.
    pub fn reorder_modalities(&self, order: &[usize]) -> Result<Self> {
        let permutations = order
            .iter()
            .map(|&m| self.permutation(m).map(<[usize]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lambdas: self.lambdas.clone(),
            permutations,
            alpha: self.alpha,
        })
    }

    /// Same coefficients with every modality using modality 0's partners.
    pub fn with_shared_permutation(&self) -> Self {
        let shared = self.permutations.first().cloned().unwrap_or_default();
        Self {
            lambdas: self.lambdas.clone(),
            permutations: vec![shared; self.permutations.len()],
            alpha: self.alpha,
        }
    }

    /// Relabels batch rows: new row `r` is old row `sigma[r]`.
    ///
    /// Coefficients follow their rows and partners are conjugated, so mixture
    /// `r` of the new plan equals mixture `sigma[r]` of the old one.
    pub fn permute_rows(&self, sigma: &[usize]) -> Result<Self> {
        let n = self.len();
        if !is_permutation(sigma, n) {
            return Err(Error::Parameter("row relabelling is not a permutation".into()));
        }
        let mut inverse = vec![0; n];
        for (r, &old) in sigma.iter().enumerate() {
            inverse[old] = r;
        }
        let lambdas = sigma.iter().map(|&old| self.lambdas[old]).collect();
        let permutations = self
            .permutations
            .iter()
            .map(|perm| sigma.iter().map(|&old| inverse[perm[old]]).collect())
            .collect();
        Ok(Self {
            lambdas,
            permutations,
            alpha: self.alpha,
        })
    }
}

fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Draws `n` coefficients and one uniform permutation per modality.
///
/// Fixed points are allowed: a row may be paired with itself.
pub fn make_plan<R: Rng + ?Sized>(
    n: usize,
    num_modalities: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MixupPlan> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let lambdas = (0..n)
        .map(|_| sample_beta(alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    let permutations = (0..num_modalities)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    MixupPlan::new(lambdas, permutations, alpha)
}

/// Differentiable mixtures: row `i` is `lambda_i * x[i] + (1 - lambda_i) * x[perm(i)]`.
pub fn make_mixtures(
    g: &mut Graph,
    features: Tensor,
    plan: &MixupPlan,
    modality: usize,
) -> Result<Tensor> {
    let perm = plan.permutation(modality)?;
    if g.shape(features).0 != plan.len() {
        return Err(Error::Shape {
            op: "make_mixtures",
            left: format!("{} rows", g.shape(features).0),
            right: format!("plan of {}", plan.len()),
        });
    }
    g.mix_rows(features, perm, plan.lambdas())
}

/// Non-recording version of [`make_mixtures`].
pub fn mix_matrix(features: &Matrix, plan: &MixupPlan, modality: usize) -> Result<Matrix> {
    let mut g = Graph::new();
    let x = g.leaf(features.clone());
    let y = make_mixtures(&mut g, x, plan, modality)?;
    Ok(g.value(y).clone())
}

/// Row `i` is `lambda_i * onehot(y_i) + (1 - lambda_i) * onehot(y_perm(i))`.
pub fn mixed_onehot_targets(
    labels: &[usize],
    plan: &MixupPlan,
    num_classes: usize,
    modality: usize,
) -> Result<Matrix> {
    let perm = plan.permutation(modality)?;
    if labels.len() != plan.len() {
        return Err(Error::Shape {
            op: "mixed_onehot_targets",
            left: format!("{} labels", labels.len()),
            right: format!("plan of {}", plan.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Label {
            label: bad,
            num_classes,
        });
    }
    let mut out = Matrix::zeros(labels.len(), num_classes);
    for (i, &y) in labels.iter().enumerate() {
        let lambda = plan.lambdas()[i];
        let row = out.row_mut(i);
        row[y] += lambda;
        row[labels[perm[i]]] += 1.0 - lambda;
    }
    Ok(out)
}
