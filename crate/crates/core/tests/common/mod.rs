//! Term-by-term reference implementations and the measured checks built on them.
#![allow(dead_code)]

pub mod checks;

use m3col::mixup::MixupPlan;
use m3col::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, e: usize) -> Rows {
    (0..n).map(|_| (0..e).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

pub fn to_matrix(rows: &Rows) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(rows: &Rows) -> Rows {
    rows.iter()
        .map(|r| {
            let n = dot(r, r).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

/// `-log( exp(a·b_m/τ) / Σ_j exp(a·b_j/τ) )`.
pub fn l_sim(anchor: &[f64], bank: &Rows, m: usize, tau: f64) -> f64 {
    let num = (dot(anchor, &bank[m]) / tau).exp();
    let den: f64 = bank.iter().map(|b| (dot(anchor, b) / tau).exp()).sum();
    -(num / den).ln()
}

pub fn conventional(p1: &Rows, p2: &Rows, tau: f64) -> f64 {
    let (a, b) = (normalize(p1), normalize(p2));
    let n = a.len();
    (0..n).map(|i| l_sim(&a[i], &b, i, tau)).sum::<f64>() / n as f64
}

/// One modality's bidirectional mixup loss; `mixed[i]` mixes sample `i` with `perm[i]`.
fn m3co_single(mixed: &Rows, other: &Rows, lambdas: &[f64], perm: &[usize], tau: f64) -> f64 {
    let n = mixed.len() as f64;
    let mut forward = 0.0;
    let mut reverse = 0.0;
    for (i, &l) in lambdas.iter().enumerate() {
        let j = perm[i];
        forward += l * l_sim(&mixed[i], other, i, tau) + (1.0 - l) * l_sim(&mixed[i], other, j, tau);
        reverse += l * l_sim(&other[i], mixed, i, tau) + (1.0 - l) * l_sim(&other[j], mixed, i, tau);
    }
    forward / n + reverse / n
}

pub fn m3co_pair(p1: &Rows, p2: &Rows, m1: &Rows, m2: &Rows, plan: &MixupPlan, tau: f64) -> f64 {
    let (a, b) = (normalize(p1), normalize(p2));
    let (am, bm) = (normalize(m1), normalize(m2));
    let first = m3co_single(&am, &b, plan.lambdas(), plan.permutation(0).unwrap(), tau);
    let second = m3co_single(&bm, &a, plan.lambdas(), plan.permutation(1).unwrap(), tau);
    0.5 * (first + second)
}

pub fn softmax_weights(p: &Rows, tau: f64) -> Rows {
    p.iter()
        .map(|pi| {
            let den: f64 = p.iter().map(|pt| (dot(pi, pt) / tau).exp()).sum();
            p.iter().map(|pl| (dot(pi, pl) / tau).exp() / den).collect()
        })
        .collect()
}

fn multisclip_single(own: &Rows, other: &Rows, tau: f64) -> f64 {
    let w = softmax_weights(own, tau);
    let n = own.len();
    let mut total = 0.0;
    for i in 0..n {
        for l in 0..n {
            total += w[i][l] * (l_sim(&other[i], own, l, tau) + l_sim(&own[l], other, i, tau));
        }
    }
    total / n as f64
}

pub fn multisclip_pair(p1: &Rows, p2: &Rows, tau: f64) -> f64 {
    let (a, b) = (normalize(p1), normalize(p2));
    0.5 * (multisclip_single(&a, &b, tau) + multisclip_single(&b, &a, tau))
}

/// Rows of `x` mixed as `λ_i x_i + (1 - λ_i) x_perm(i)`.
pub fn mix(x: &Rows, lambdas: &[f64], perm: &[usize]) -> Rows {
    x.iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .zip(&x[perm[i]])
                .map(|(a, b)| lambdas[i] * a + (1.0 - lambdas[i]) * b)
                .collect()
        })
        .collect()
}

/// Per-class (precision, recall, f1, support) by explicit confusion-matrix counting.
pub fn confusion_f1(pred: &[usize], truth: &[usize], c: usize) -> Vec<(f64, f64, f64, usize)> {
    let mut cm = vec![vec![0usize; c]; c];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    (0..c)
        .map(|k| {
            let tp = cm[k][k] as f64;
            let predicted: usize = (0..c).map(|t| cm[t][k]).sum();
            let actual: usize = cm[k].iter().sum();
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f, actual)
        })
        .collect()
}

/// AUC by enumerating every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], truth: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in truth.iter().enumerate() {
        for (j, &yj) in truth.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}
