//! Measured quantities for the verification criteria. Each function returns the
//! worst deviation it saw so callers can compare against their own tolerance.

use m3col::eval::{auc_binary, f1_scores};
use m3col::losses::{conventional_contrastive, l_sim, m3co_pair, multisclip_pair, multisclip_weights};
use m3col::mixup::{make_plan, MixupPlan};
use m3col::model::{Activation, M3colModel, ModelDims};
use m3col::data::LabeledBatch;
use m3col::{Graph, Matrix, Result, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_rows, mix, normalize, rng, to_matrix, Rows};

/// Evaluates a scalar loss built from `inputs` as graph leaves.
pub fn graph_loss(inputs: &[&Rows], f: impl FnOnce(&mut Graph, &[Tensor]) -> Result<Tensor>) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|r| g.leaf(to_matrix(r))).collect();
    let loss = f(&mut g, &leaves).unwrap();
    g.scalar(loss)
}

fn random_shape(rng: &mut ChaCha8Rng, min_n: usize) -> (usize, usize) {
    (rng.random_range(min_n..=8), rng.random_range(1..=16))
}

fn random_alpha(rng: &mut ChaCha8Rng) -> f64 {
    [0.15, 0.4, 1.0, 2.0][rng.random_range(0..4)]
}

fn random_tau(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.05..1.0)
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleErrors {
    pub l_sim: f64,
    pub conventional: f64,
    pub m3co: f64,
    pub multisclip: f64,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        self.l_sim.max(self.conventional).max(self.m3co).max(self.multisclip)
    }
}

/// Vectorized losses against the naive reference on random instances.
pub fn oracle_equivalence(instances: usize, seed: u64) -> OracleErrors {
    let mut rng = rng(seed);
    let mut worst = OracleErrors::default();
    for _ in 0..instances {
        let (n, e) = random_shape(&mut rng, 1);
        let tau = random_tau(&mut rng);
        let p1 = gaussian_rows(&mut rng, n, e);
        let p2 = gaussian_rows(&mut rng, n, e);
        let m1 = gaussian_rows(&mut rng, n, e);
        let m2 = gaussian_rows(&mut rng, n, e);
        let plan = make_plan(n, 2, random_alpha(&mut rng), &mut rng).unwrap();

        let anchor = normalize(&gaussian_rows(&mut rng, 1, e));
        let bank = normalize(&p2);
        let m = rng.random_range(0..n);
        let got = graph_loss(&[&anchor, &bank], |g, t| l_sim(g, t[0], t[1], m, tau));
        let want = super::l_sim(&anchor[0], &bank, m, tau);
        worst.l_sim = worst.l_sim.max((got - want).abs());

        let got = graph_loss(&[&p1, &p2], |g, t| conventional_contrastive(g, t[0], t[1], tau));
        let want = super::conventional(&p1, &p2, tau);
        worst.conventional = worst.conventional.max((got - want).abs());

        let got = graph_loss(&[&p1, &p2, &m1, &m2], |g, t| {
            m3co_pair(g, t[0], t[1], t[2], t[3], &plan, (0, 1), tau)
        });
        let want = super::m3co_pair(&p1, &p2, &m1, &m2, &plan, tau);
        worst.m3co = worst.m3co.max((got - want).abs());

        let got = graph_loss(&[&p1, &p2], |g, t| multisclip_pair(g, t[0], t[1], tau));
        let want = super::multisclip_pair(&p1, &p2, tau);
        worst.multisclip = worst.multisclip.max((got - want).abs());
    }
    worst
}

/// With unit coefficients and identity partners the mixup loss collapses to
/// conventional InfoNCE in both directions.
pub fn degeneracy(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, e) = random_shape(&mut rng, 1);
        let tau = random_tau(&mut rng);
        let p1 = gaussian_rows(&mut rng, n, e);
        let p2 = gaussian_rows(&mut rng, n, e);
        let plan = MixupPlan::identity(n, 2).unwrap();
        let got = graph_loss(&[&p1, &p2], |g, t| m3co_pair(g, t[0], t[1], t[0], t[1], &plan, (0, 1), tau));
        let want = graph_loss(&[&p1, &p2], |g, t| {
            let a = conventional_contrastive(g, t[0], t[1], tau)?;
            let b = conventional_contrastive(g, t[1], t[0], tau)?;
            g.add(a, b)
        });
        worst = worst.max((got - want).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InvariantErrors {
    pub batch_permutation: f64,
    pub swap_m3co: f64,
    pub swap_multisclip: f64,
    pub weight_normalization: f64,
    pub affine_commutation: f64,
    /// Largest |loss| seen on single-sample batches; must be exactly 0.
    pub singleton: f64,
}

fn permute(rows: &Rows, sigma: &[usize]) -> Rows {
    sigma.iter().map(|&i| rows[i].clone()).collect()
}

fn pair_losses(p1: &Rows, p2: &Rows, plan: &MixupPlan, tau: f64) -> [f64; 3] {
    let m1 = mix(p1, plan.lambdas(), plan.permutation(0).unwrap());
    let m2 = mix(p2, plan.lambdas(), plan.permutation(1).unwrap());
    [
        graph_loss(&[p1, p2], |g, t| conventional_contrastive(g, t[0], t[1], tau)),
        graph_loss(&[p1, p2, &m1, &m2], |g, t| m3co_pair(g, t[0], t[1], t[2], t[3], plan, (0, 1), tau)),
        graph_loss(&[p1, p2], |g, t| multisclip_pair(g, t[0], t[1], tau)),
    ]
}

fn affine_commutation_error(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(2..=8);
    let widths = [rng.random_range(1..=10), rng.random_range(1..=10)];
    let dims = ModelDims {
        input_dims: widths.to_vec(),
        hidden: rng.random_range(1..=12),
        embed: rng.random_range(1..=16),
        classifier_hidden: 4,
        num_classes: 3,
        dropout: 0.0,
        encoder_activation: Activation::Identity,
    };
    let model = M3colModel::init(dims, rng.random()).unwrap();
    let modalities = widths.iter().map(|&w| to_matrix(&gaussian_rows(rng, n, w))).collect();
    let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
    let batch = LabeledBatch::new(modalities, labels, 3, vec!["a".into(), "b".into()]).unwrap();
    let plan = make_plan(n, 2, random_alpha(rng), rng).unwrap();

    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let out = model.forward(&mut g, &bound, &batch, Some(&plan), false, rng).unwrap();
    let mut worst: f64 = 0.0;
    for (m, (&e, &em)) in out.embeddings.iter().zip(out.mixed.as_ref().unwrap()).enumerate() {
        let rows: Rows = g.value(e).row_iter().map(<[f64]>::to_vec).collect();
        let expected = mix(&rows, plan.lambdas(), plan.permutation(m).unwrap());
        let got = g.value(em);
        for (i, row) in expected.iter().enumerate() {
            for (a, b) in row.iter().zip(got.row(i)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

pub fn structural_invariants(instances: usize, seed: u64) -> InvariantErrors {
    let mut rng = rng(seed);
    let mut worst = InvariantErrors::default();
    for _ in 0..instances {
        let (n, e) = random_shape(&mut rng, 2);
        let tau = random_tau(&mut rng);
        let p1 = gaussian_rows(&mut rng, n, e);
        let p2 = gaussian_rows(&mut rng, n, e);
        let plan = make_plan(n, 2, random_alpha(&mut rng), &mut rng).unwrap();

        let base = pair_losses(&p1, &p2, &plan, tau);
        let sigma = shuffled(&mut rng, n);
        let relabelled = plan.permute_rows(&sigma).unwrap();
        let moved = pair_losses(&permute(&p1, &sigma), &permute(&p2, &sigma), &relabelled, tau);
        for (a, b) in base.iter().zip(&moved) {
            worst.batch_permutation = worst.batch_permutation.max((a - b).abs());
        }

        let m1 = gaussian_rows(&mut rng, n, e);
        let m2 = gaussian_rows(&mut rng, n, e);
        let swapped = plan.reorder_modalities(&[1, 0]).unwrap();
        let fwd = graph_loss(&[&p1, &p2, &m1, &m2], |g, t| m3co_pair(g, t[0], t[1], t[2], t[3], &plan, (0, 1), tau));
        let rev = graph_loss(&[&p2, &p1, &m2, &m1], |g, t| {
            m3co_pair(g, t[0], t[1], t[2], t[3], &swapped, (0, 1), tau)
        });
        worst.swap_m3co = worst.swap_m3co.max((fwd - rev).abs());
        let fwd = graph_loss(&[&p1, &p2], |g, t| multisclip_pair(g, t[0], t[1], tau));
        let rev = graph_loss(&[&p2, &p1], |g, t| multisclip_pair(g, t[0], t[1], tau));
        worst.swap_multisclip = worst.swap_multisclip.max((fwd - rev).abs());

        let mut g = Graph::new();
        let p = g.leaf(to_matrix(&normalize(&p1)));
        let w = multisclip_weights(&mut g, p, tau).unwrap();
        for row in g.value(w).row_iter() {
            let s: f64 = row.iter().sum();
            worst.weight_normalization = worst.weight_normalization.max((s - 1.0).abs());
        }

        worst.affine_commutation = worst.affine_commutation.max(affine_commutation_error(&mut rng));

        let q1 = gaussian_rows(&mut rng, 1, e);
        let q2 = gaussian_rows(&mut rng, 1, e);
        let single = make_plan(1, 2, random_alpha(&mut rng), &mut rng).unwrap();
        for v in pair_losses(&q1, &q2, &single, tau) {
            worst.singleton = worst.singleton.max(v.abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricErrors {
    pub f1: f64,
    pub auc: f64,
}

/// Random labels and scores; ties are frequent because half the sets use a coarse score grid.
pub fn metric_oracles(sets: usize, seed: u64) -> MetricErrors {
    let mut rng = rng(seed);
    let mut worst = MetricErrors::default();
    for s in 0..sets {
        let n = rng.random_range(2..=50);
        let c = rng.random_range(2..=6);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let f1 = f1_scores(&pred, &truth, c).unwrap();
        let oracle = super::confusion_f1(&pred, &truth, c);
        let mut dev: f64 = 0.0;
        for (got, want) in f1.per_class.iter().zip(&oracle) {
            dev = dev
                .max((got.precision - want.0).abs())
                .max((got.recall - want.1).abs())
                .max((got.f1 - want.2).abs());
            assert_eq!(got.support, want.3);
        }
        let macro_f1 = oracle.iter().map(|o| o.2).sum::<f64>() / c as f64;
        let weighted = oracle.iter().map(|o| o.2 * o.3 as f64).sum::<f64>() / n as f64;
        dev = dev.max((f1.macro_f1 - macro_f1).abs()).max((f1.weighted_f1 - weighted).abs());
        worst.f1 = worst.f1.max(dev);

        let mut binary: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        binary[0] = 0;
        binary[1] = 1;
        let scores: Vec<f64> = if s % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        let got = auc_binary(&scores, &binary).unwrap();
        worst.auc = worst.auc.max((got - super::pairwise_auc(&scores, &binary)).abs());
    }
    worst
}

pub fn matrix_rows(m: &Matrix) -> Rows {
    m.row_iter().map(<[f64]>::to_vec).collect()
}
