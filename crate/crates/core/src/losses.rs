//! Contrastive and supervised losses, the phase schedule and the combined objective.
//!
//! All contrastive losses L2-normalise their embedding inputs internally and
//! are built from two pieces: a temperature-scaled similarity matrix and a
//! weighted sum over its row-wise log-softmax. Each loss is a 1x1 node on the
//! caller's [`Graph`], so every term is differentiable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixup::MixupPlan;
use crate::model::ForwardOutputs;
use crate::numgrad::{Graph, Matrix, Tensor};

/// Tolerance on `|‖row‖ - 1|` accepted by [`l_sim`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Which contrastive loss is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    M3co,
    Multisclip,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::M3co => "m3co",
            Phase::Multisclip => "multisclip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastiveMode {
    /// Mixup loss for the first `schedule_fraction` of epochs, soft-alignment after.
    Scheduled,
    OnlyM3co,
    OnlyMultisclip,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub beta: f64,
    pub alpha: f64,
    pub schedule_fraction: f64,
    pub mode: ContrastiveMode,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            beta: 0.1,
            alpha: 0.15,
            schedule_fraction: 1.0 / 3.0,
            mode: ContrastiveMode::Scheduled,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Parameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.schedule_fraction > 0.0 && self.schedule_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "schedule fraction must lie in (0, 1], got {}",
                self.schedule_fraction
            )));
        }
        Ok(())
    }

    /// Active contrastive loss at `epoch`, or `None` when the term is disabled.
    pub fn phase_at(&self, epoch: usize, total_epochs: usize) -> Option<Phase> {
        match self.mode {
            ContrastiveMode::Scheduled => {
                Some(schedule_phase(epoch, total_epochs, self.schedule_fraction))
            }
            ContrastiveMode::OnlyM3co => Some(Phase::M3co),
            ContrastiveMode::OnlyMultisclip => Some(Phase::Multisclip),
            ContrastiveMode::None => None,
        }
    }
}

/// Contrastive settings plus the switches used by the ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub contrastive: ContrastiveConfig,
    /// Include the per-modality cross-entropy terms.
    pub unimodal_supervision: bool,
    /// Vanilla mixup: train the heads on mixed inputs against mixed one-hot targets.
    pub label_mixup: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            contrastive: ContrastiveConfig::default(),
            unimodal_supervision: true,
            label_mixup: false,
        }
    }
}

/// Per-term values of one evaluation of the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub phase: Option<Phase>,
    pub contrastive: f64,
    /// Empty when unimodal supervision is disabled.
    pub ce_uni: Vec<f64>,
    pub ce_multi: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `beta * contrastive + sum(ce_uni) + ce_multi`, recomputed from the parts.
    pub fn recomputed_total(&self, beta: f64) -> f64 {
        beta * self.contrastive + self.ce_uni.iter().sum::<f64>() + self.ce_multi
    }
}

/// Supervision for the classification heads.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    /// One target matrix per unimodal head, then one for the fused head.
    Soft {
        unimodal: &'a [Matrix],
        fused: &'a Matrix,
    },
}

fn check_unit_rows(g: &Graph, t: Tensor, what: &str) -> Result<()> {
    for (r, row) in g.value(t).row_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "{what} row {r} has norm {norm}, expected unit norm"
            )));
        }
    }
    Ok(())
}

fn check_same_shape(g: &Graph, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, g.shape(a), g.shape(b)));
    }
    if g.shape(a).0 == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// `a · bᵀ / tau`.
fn similarity(g: &mut Graph, a: Tensor, b: Tensor, tau: f64) -> Result<Tensor> {
    let bt = g.transpose(b);
    let s = g.matmul(a, bt)?;
    Ok(g.scale(s, 1.0 / tau))
}

/// `-sum(weights ⊙ log_probs) / denom` for a constant weight matrix.
fn weighted_nll(g: &mut Graph, log_probs: Tensor, weights: Matrix, denom: f64) -> Result<Tensor> {
    let w = g.mul_const(log_probs, weights)?;
    let s = g.sum(w);
    Ok(g.scale(s, -1.0 / denom))
}

/// Unidirectional loss of one anchor against a candidate bank, positive at index `m`.
///
/// Inputs must already be unit rows.
pub fn l_sim(
    g: &mut Graph,
    anchor: Tensor,
    candidates: Tensor,
    m: usize,
    tau: f64,
) -> Result<Tensor> {
    let (ar, ae) = g.shape(anchor);
    let (n, e) = g.shape(candidates);
    if ar != 1 || ae != e {
        return Err(Error::shape("l_sim", (ar, ae), (n, e)));
    }
    if m >= n {
        return Err(Error::Index { index: m, len: n });
    }
    check_unit_rows(g, anchor, "anchor")?;
    check_unit_rows(g, candidates, "candidate")?;
    let s = similarity(g, anchor, candidates, tau)?;
    let ls = g.log_softmax_rows(s);
    let mut pick = Matrix::zeros(1, n);
    pick.set(0, m, 1.0);
    weighted_nll(g, ls, pick, 1.0)
}

/// Mean InfoNCE of `p1` rows against the `p2` bank with positives on the diagonal.
pub fn conventional_contrastive(g: &mut Graph, p1: Tensor, p2: Tensor, tau: f64) -> Result<Tensor> {
    check_same_shape(g, "conventional_contrastive", p1, p2)?;
    let n = g.shape(p1).0;
    let a = g.row_l2_normalize(p1)?;
    let b = g.row_l2_normalize(p2)?;
    let s = similarity(g, a, b, tau)?;
    let ls = g.log_softmax_rows(s);
    weighted_nll(g, ls, Matrix::identity(n), n as f64)
}

/// One modality's half of the bidirectional mixup loss.
///
/// Forward terms anchor mixture `i` against the other modality's bank with
/// targets `i` (weight `lambda_i`) and `perm(i)` (weight `1 - lambda_i`).
/// Reverse terms anchor other-modality rows `i` and `perm(i)` against the
/// mixture bank, both with target `i`.
fn m3co_direction(
    g: &mut Graph,
    mixed: Tensor,
    other: Tensor,
    lambdas: &[f64],
    perm: &[usize],
    tau: f64,
) -> Result<Tensor> {
    let n = lambdas.len();
    let mut forward_w = Matrix::zeros(n, n);
    let mut reverse_w = Matrix::zeros(n, n);
    for i in 0..n {
        let (l, j) = (lambdas[i], perm[i]);
        forward_w.set(i, i, forward_w.get(i, i) + l);
        forward_w.set(i, j, forward_w.get(i, j) + (1.0 - l));
        reverse_w.set(i, i, reverse_w.get(i, i) + l);
        reverse_w.set(j, i, reverse_w.get(j, i) + (1.0 - l));
    }
    let s = similarity(g, mixed, other, tau)?;
    let st = g.transpose(s);
    let ls_forward = g.log_softmax_rows(s);
    let ls_reverse = g.log_softmax_rows(st);
    let forward = weighted_nll(g, ls_forward, forward_w, n as f64)?;
    let reverse = weighted_nll(g, ls_reverse, reverse_w, n as f64)?;
    g.add(forward, reverse)
}

/// Bidirectional mixup contrastive loss for the modality pair `modalities = (a, b)`.
///
/// `p1_mixed` / `p2_mixed` are the encoded mixtures built with the plan's
/// permutations for modalities `a` and `b` respectively. Returns the average of
/// both modalities' halves.
#[allow(clippy::too_many_arguments)]
pub fn m3co_pair(
    g: &mut Graph,
    p1: Tensor,
    p2: Tensor,
    p1_mixed: Tensor,
    p2_mixed: Tensor,
    plan: &MixupPlan,
    modalities: (usize, usize),
    tau: f64,
) -> Result<Tensor> {
    check_same_shape(g, "m3co_pair", p1, p2)?;
    check_same_shape(g, "m3co_pair", p1, p1_mixed)?;
    check_same_shape(g, "m3co_pair", p2, p2_mixed)?;
    if plan.len() != g.shape(p1).0 {
        return Err(Error::Shape {
            op: "m3co_pair",
            left: format!("{} rows", g.shape(p1).0),
            right: format!("plan of {}", plan.len()),
        });
    }
    let perm_a = plan.permutation(modalities.0)?.to_vec();
    let perm_b = plan.permutation(modalities.1)?.to_vec();
    let a = g.row_l2_normalize(p1)?;
    let b = g.row_l2_normalize(p2)?;
    let am = g.row_l2_normalize(p1_mixed)?;
    let bm = g.row_l2_normalize(p2_mixed)?;
    let first = m3co_direction(g, am, b, plan.lambdas(), &perm_a, tau)?;
    let second = m3co_direction(g, bm, a, plan.lambdas(), &perm_b, tau)?;
    let both = g.add(first, second)?;
    Ok(g.scale(both, 0.5))
}

/// Within-modality soft targets: row-wise softmax of `p · pᵀ / tau` over unit rows.
pub fn multisclip_weights(g: &mut Graph, p_unit: Tensor, tau: f64) -> Result<Tensor> {
    let s = similarity(g, p_unit, p_unit, tau)?;
    Ok(g.softmax_rows(s))
}

/// Bidirectional soft-alignment loss, averaged over both modalities' weightings.
pub fn multisclip_pair(g: &mut Graph, p1: Tensor, p2: Tensor, tau: f64) -> Result<Tensor> {
    check_same_shape(g, "multisclip_pair", p1, p2)?;
    let n = g.shape(p1).0 as f64;
    let a = g.row_l2_normalize(p1)?;
    let b = g.row_l2_normalize(p2)?;
    let w1 = multisclip_weights(g, a, tau)?;
    let w2 = multisclip_weights(g, b, tau)?;

    // ls_ba[i, l] = log p(l | anchor b_i over bank a); ls_ab likewise.
    let s_ba = similarity(g, b, a, tau)?;
    let s_ab = g.transpose(s_ba);
    let ls_ba = g.log_softmax_rows(s_ba);
    let ls_ab = g.log_softmax_rows(s_ab);
    let ls_ba_t = g.transpose(ls_ba);
    let ls_ab_t = g.transpose(ls_ab);

    let first_terms = g.add(ls_ba, ls_ab_t)?;
    let first = g.mul(w1, first_terms)?;
    let second_terms = g.add(ls_ab, ls_ba_t)?;
    let second = g.mul(w2, second_terms)?;
    let both = g.add(first, second)?;
    let s = g.sum(both);
    Ok(g.scale(s, -0.5 / n))
}

/// Sum of the pairwise loss over every unordered modality pair.
pub fn multi_modal_contrastive(
    g: &mut Graph,
    embeddings: &[Tensor],
    mixed: Option<&[Tensor]>,
    plan: Option<&MixupPlan>,
    tau: f64,
    phase: Phase,
) -> Result<Tensor> {
    let m = embeddings.len();
    if m < 2 {
        return Err(Error::ModalityCount(m));
    }
    let mut terms = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            let term = match phase {
                Phase::M3co => {
                    let (mixed, plan) = match (mixed, plan) {
                        (Some(x), Some(p)) => (x, p),
                        _ => {
                            return Err(Error::Contract(
                                "mixup phase needs mixed embeddings and a plan".into(),
                            ))
                        }
                    };
                    if mixed.len() != m {
                        return Err(Error::Contract(format!(
                            "{} mixed embeddings for {m} modalities",
                            mixed.len()
                        )));
                    }
                    m3co_pair(
                        g,
                        embeddings[a],
                        embeddings[b],
                        mixed[a],
                        mixed[b],
                        plan,
                        (a, b),
                        tau,
                    )?
                }
                Phase::Multisclip => multisclip_pair(g, embeddings[a], embeddings[b], tau)?,
            };
            terms.push(term);
        }
    }
    g.add_all(&terms)
}

fn check_labels(labels: &[usize], n: usize, num_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: format!("{n} rows"),
            right: format!("{} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Label {
            label: bad,
            num_classes,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(g: &mut Graph, logits: Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = g.shape(logits);
    check_labels(labels, n, c)?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut onehot = Matrix::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let ls = g.log_softmax_rows(logits);
    weighted_nll(g, ls, onehot, n as f64)
}

/// Mean cross-entropy against per-row target distributions.
pub fn soft_cross_entropy(g: &mut Graph, logits: Tensor, targets: &Matrix) -> Result<Tensor> {
    let (n, c) = g.shape(logits);
    if targets.shape() != (n, c) {
        return Err(Error::shape("soft_cross_entropy", (n, c), targets.shape()));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    for (r, row) in targets.row_iter().enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0) {
            return Err(Error::Contract(format!(
                "target row {r} is not a distribution (sums to {total})"
            )));
        }
    }
    let ls = g.log_softmax_rows(logits);
    weighted_nll(g, ls, targets.clone(), n as f64)
}

/// Mixup phase for epochs `< ceil(fraction * total_epochs)`, soft alignment afterwards.
pub fn schedule_phase(epoch: usize, total_epochs: usize, fraction: f64) -> Phase {
    // the small offset keeps exact products such as 0.2 * 500 from rounding up
    let cutoff = (fraction * total_epochs as f64 - 1e-9).ceil();
    if (epoch as f64) < cutoff {
        Phase::M3co
    } else {
        Phase::Multisclip
    }
}

/// `beta * contrastive + sum(unimodal CE) + fused CE` for one forward pass.
///
/// In the mixup phase `outputs.mixed` and `plan` must be present.
pub fn total_objective(
    g: &mut Graph,
    outputs: &ForwardOutputs,
    targets: Targets<'_>,
    plan: Option<&MixupPlan>,
    config: &ObjectiveConfig,
    epoch: usize,
    total_epochs: usize,
) -> Result<(Tensor, LossBreakdown)> {
    let cc = &config.contrastive;
    let phase = cc.phase_at(epoch, total_epochs);

    let mut terms = Vec::new();
    let mut contrastive = 0.0;
    if let Some(phase) = phase {
        let c = multi_modal_contrastive(
            g,
            &outputs.embeddings,
            outputs.mixed.as_deref(),
            plan,
            cc.temperature,
            phase,
        )?;
        contrastive = g.scalar(c);
        terms.push(g.scale(c, cc.beta));
    }

    let head_loss = |g: &mut Graph, logits: Tensor, head: Option<usize>| -> Result<Tensor> {
        match targets {
            Targets::Hard(labels) => cross_entropy(g, logits, labels),
            Targets::Soft { unimodal, fused } => {
                let t = match head {
                    Some(m) => unimodal.get(m).ok_or(Error::Index {
                        index: m,
                        len: unimodal.len(),
                    })?,
                    None => fused,
                };
                soft_cross_entropy(g, logits, t)
            }
        }
    };

    let mut ce_uni = Vec::new();
    if config.unimodal_supervision {
        for (m, &logits) in outputs.uni_logits.iter().enumerate() {
            let t = head_loss(g, logits, Some(m))?;
            ce_uni.push(g.scalar(t));
            terms.push(t);
        }
    }
    let fused = head_loss(g, outputs.fused_logits, None)?;
    let ce_multi = g.scalar(fused);
    terms.push(fused);

    let total = g.add_all(&terms)?;
    let breakdown = LossBreakdown {
        phase,
        contrastive,
        ce_uni,
        ce_multi,
        total: g.scalar(total),
    };
    Ok((total, breakdown))
}
