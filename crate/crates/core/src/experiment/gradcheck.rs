//! Finite-difference checks of every loss on a frozen micro-batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::error::Result;
use crate::losses::{
    conventional_contrastive, cross_entropy, l_sim, multi_modal_contrastive, total_objective,
    ObjectiveConfig, Phase, Targets,
};
use crate::mixup::{make_plan, MixupPlan};
use crate::model::{Activation, BoundModel, M3colModel, ModelDims};
use crate::numgrad::{finite_diff_gradcheck, GradCheck, Graph, Matrix, Tensor, DEFAULT_STEP};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub loss: String,
    pub max_relative_error: f64,
    pub entries: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&GradcheckRow> {
        self.rows.iter().filter(|r| !r.passed).collect()
    }
}

const N: usize = 6;
const EMBED: usize = 5;
const TAU: f64 = 0.5;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

struct Fixture {
    plan: MixupPlan,
    batch: LabeledBatch,
    model: M3colModel,
    embeddings: Vec<Matrix>,
}

impl Fixture {
    fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = make_plan(N, 2, 0.4, &mut rng)?;
        let labels = (0..N).map(|i| i % 3).collect();
        let batch = LabeledBatch::new(
            vec![gaussian(&mut rng, N, 5), gaussian(&mut rng, N, 4)],
            labels,
            3,
            vec!["a".into(), "b".into()],
        )?;
        let dims = ModelDims {
            input_dims: vec![5, 4],
            hidden: 6,
            embed: EMBED,
            classifier_hidden: 5,
            num_classes: 3,
            dropout: 0.5,
            encoder_activation: Activation::Relu,
        };
        let model = M3colModel::init(dims, seed)?;
        let embeddings = (0..4).map(|_| gaussian(&mut rng, N, EMBED)).collect();
        Ok(Self { plan, batch, model, embeddings })
    }

    /// Evaluation-mode forward pass with the frozen plan, built on `leaves`.
    fn forward(&self, g: &mut Graph, leaves: &[Tensor]) -> Result<crate::model::ForwardOutputs> {
        let bound = BoundModel::from_handles(2, leaves)?;
        // dropout is off, so the generator is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.model.forward(g, &bound, &self.batch, Some(&self.plan), false, &mut rng)
    }

    fn params(&self) -> Vec<Matrix> {
        self.model.parameters().into_iter().cloned().collect()
    }
}

fn row(loss: &str, check: GradCheck, tolerance: f64) -> GradcheckRow {
    GradcheckRow {
        loss: loss.into(),
        max_relative_error: check.max_relative_error,
        entries: check.entries_checked,
        passed: check.max_relative_error < tolerance,
    }
}

/// Runs every check and reports the worst relative error of each loss.
pub fn run_gradcheck_suite(tolerance: f64, seed: u64) -> Result<GradcheckReport> {
    let fx = Fixture::new(seed)?;
    let h = DEFAULT_STEP;
    let e = &fx.embeddings;
    let mut rows = Vec::new();

    let c = finite_diff_gradcheck(
        |g, p| {
            let a = g.row_l2_normalize(p[0])?;
            let c = g.row_l2_normalize(p[1])?;
            l_sim(g, a, c, 2, TAU)
        },
        &[e[0].select_rows(&[0])?, e[1].clone()],
        h,
    )?;
    rows.push(row("l_sim", c, tolerance));

    let c = finite_diff_gradcheck(
        |g, p| conventional_contrastive(g, p[0], p[1], TAU),
        &[e[0].clone(), e[1].clone()],
        h,
    )?;
    rows.push(row("conventional_contrastive", c, tolerance));

    let c = finite_diff_gradcheck(
        |g, p| multi_modal_contrastive(g, &p[..2], Some(&p[2..]), Some(&fx.plan), TAU, Phase::M3co),
        e,
        h,
    )?;
    rows.push(row("m3co", c, tolerance));

    let c = finite_diff_gradcheck(
        |g, p| multi_modal_contrastive(g, p, None, None, TAU, Phase::Multisclip),
        &e[..2],
        h,
    )?;
    rows.push(row("multisclip", c, tolerance));

    let labels = fx.batch.labels();
    let c = finite_diff_gradcheck(
        |g, p| {
            let out = fx.forward(g, p)?;
            let terms = out
                .uni_logits
                .iter()
                .map(|&l| cross_entropy(g, l, labels))
                .collect::<Result<Vec<_>>>()?;
            g.add_all(&terms)
        },
        &fx.params(),
        h,
    )?;
    rows.push(row("ce_unimodal", c, tolerance));

    let c = finite_diff_gradcheck(
        |g, p| {
            let out = fx.forward(g, p)?;
            cross_entropy(g, out.fused_logits, labels)
        },
        &fx.params(),
        h,
    )?;
    rows.push(row("ce_multimodal", c, tolerance));

    let objective = ObjectiveConfig::default();
    for (name, epoch) in [("total_objective_m3co_phase", 0), ("total_objective_multisclip_phase", 2)] {
        let c = finite_diff_gradcheck(
            |g, p| {
                let out = fx.forward(g, p)?;
                let (loss, _) =
                    total_objective(g, &out, Targets::Hard(labels), Some(&fx.plan), &objective, epoch, 3)?;
                Ok(loss)
            },
            &fx.params(),
            h,
        )?;
        rows.push(row(name, c, tolerance));
    }

    Ok(GradcheckReport { tolerance, step: h, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_tight_tolerance_fails() {
        let report = run_gradcheck_suite(DEFAULT_TOLERANCE, 0).unwrap();
        for r in &report.rows {
            assert!(r.passed, "{}: {:e}", r.loss, r.max_relative_error);
        }
        assert_eq!(report.rows.len(), 8);
        let strict = run_gradcheck_suite(1e-12, 0).unwrap();
        assert!(!strict.passed());
    }
}
