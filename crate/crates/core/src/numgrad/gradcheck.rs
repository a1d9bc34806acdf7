use super::{Graph, Matrix, Tensor};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of [`finite_diff_gradcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over all entries.
    pub max_relative_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst_entry: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// `f` receives a fresh graph and one leaf per parameter and must return a 1x1
/// node. It is evaluated twice at the unperturbed point; any bitwise difference
/// means the function is not deterministic and the oracle is rejected.
pub fn finite_diff_gradcheck<F>(f: F, params: &[Matrix], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Tensor]) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Tensor> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let out = f(&mut g, &leaves)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let leaves: Vec<Tensor> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &leaves)?;
    let base = g.scalar(out);
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "function is not deterministic: {base:e} then {again:e}"
        )));
    }
    let grads = g.backward(out)?;

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_entry: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(*leaf)
            .expect("parameters are leaves")
            .data()
            .to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_relative_error || rel.is_nan() {
                report.max_relative_error = rel;
                report.worst_entry = (pi, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
