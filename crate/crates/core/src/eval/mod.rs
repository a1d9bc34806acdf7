//! Classification metrics, the two-modality error crosstab and robustness probes.

mod probe;

pub use probe::{
    corrupt_features, corrupt_modality_eval, evaluate, CorruptTarget, CorruptionReport, EvalReport,
    FeatureMoments, NamedMetrics,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::Matrix;

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            op,
            left: format!("{a} predictions"),
            right: format!("{b} labels"),
        });
    }
    if a == 0 {
        return Err(Error::EmptyEval);
    }
    Ok(())
}

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths("accuracy", pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// F1 of class 1, only for two-class problems.
    pub binary_f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class, macro, weighted and binary F1. Undefined precision, recall or F1 count as 0.
pub fn f1_scores(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<F1Scores> {
    check_lengths("f1_scores", pred.len(), truth.len())?;
    if let Some(&label) = pred.iter().chain(truth).find(|&&y| y >= num_classes) {
        return Err(Error::Label { label, num_classes });
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        support[t] += 1;
        if p == t {
            tp[t] += 1;
        }
    }
    let per_class: Vec<ClassScores> = (0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores { class: c, precision, recall, f1, support: support[c] }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / num_classes as f64;
    let weighted_f1 =
        per_class.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / truth.len() as f64;
    let binary_f1 = (num_classes == 2).then(|| per_class[1].f1);
    Ok(F1Scores { per_class, macro_f1, weighted_f1, binary_f1 })
}

/// Area under the ROC curve for class-1 `scores`, with ties counted half.
pub fn auc_binary(scores: &[f64], truth: &[usize]) -> Result<f64> {
    check_lengths("auc_binary", scores.len(), truth.len())?;
    if let Some(&label) = truth.iter().find(|&&y| y > 1) {
        return Err(Error::Label { label, num_classes: 2 });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("auc_binary: NaN score".into()));
    }
    let positives = truth.iter().filter(|&&y| y == 1).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{positives} positive and {negatives} negative samples"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks: a tie group occupying ranks i+1..=j gets (i+1+j)/2
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&k| truth[k] == 1).count() as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Percentages of samples by (modality A correct, modality B correct, fused correct).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCrosstab {
    pub n_samples: usize,
    /// `counts[a][b][f]`, index 1 meaning correct.
    pub counts: [[[usize; 2]; 2]; 2],
    pub percent: [[[f64; 2]; 2]; 2],
}

impl ErrorCrosstab {
    pub fn get(&self, a_correct: bool, b_correct: bool, fused_correct: bool) -> f64 {
        self.percent[a_correct as usize][b_correct as usize][fused_correct as usize]
    }

    pub fn total_percent(&self) -> f64 {
        self.percent.iter().flatten().flatten().sum()
    }
}

pub fn error_crosstab(uni_preds: &[Vec<usize>], fused: &[usize], truth: &[usize]) -> Result<ErrorCrosstab> {
    if uni_preds.len() != 2 {
        return Err(Error::ModalityCount(uni_preds.len()));
    }
    for p in uni_preds.iter().map(Vec::as_slice).chain([fused]) {
        check_lengths("error_crosstab", p.len(), truth.len())?;
    }
    let mut counts = [[[0usize; 2]; 2]; 2];
    for i in 0..truth.len() {
        let ok = |p: &[usize]| (p[i] == truth[i]) as usize;
        counts[ok(&uni_preds[0])][ok(&uni_preds[1])][ok(fused)] += 1;
    }
    let n = truth.len() as f64;
    let percent = counts.map(|a| a.map(|b| b.map(|c| 100.0 * c as f64 / n)));
    Ok(ErrorCrosstab { n_samples: truth.len(), counts, percent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub acc: f64,
    pub f1_binary: Option<f64>,
    pub auc: Option<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScores>,
}

impl MetricsReport {
    /// Metrics of argmax predictions from row-wise class `probs`.
    /// AUC is reported for two classes when both occur in `truth`.
    pub fn from_probabilities(probs: &Matrix, truth: &[usize]) -> Result<Self> {
        let pred = probs.argmax_rows();
        let f1 = f1_scores(&pred, truth, probs.cols())?;
        let auc = if probs.cols() == 2 {
            let scores: Vec<f64> = probs.row_iter().map(|r| r[1]).collect();
            match auc_binary(&scores, truth) {
                Ok(v) => Some(v),
                Err(Error::UndefinedAuc(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(Self {
            n_samples: truth.len(),
            acc: accuracy(&pred, truth)?,
            f1_binary: f1.binary_f1,
            auc,
            macro_f1: f1.macro_f1,
            weighted_f1: f1.weighted_f1,
            per_class: f1.per_class,
        })
    }
}

/// Mean over rows of the largest class probability.
pub fn mean_max_confidence(probs: &Matrix) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(Error::EmptyEval);
    }
    let total: f64 = probs
        .row_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / probs.rows() as f64)
}
