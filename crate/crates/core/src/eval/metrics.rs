use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ERROR_BOUNDS: [f64; 3] = [0.01, 0.05, 0.10];

/// Fraction of predictions whose error relative to the true latency is
/// within `bound`.
pub fn error_bound_accuracy(preds: &[f64], truths: &[f64], bound: f64) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Domain("no samples to score".into()));
    }
    if let Some(t) = truths.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::Domain(format!("true latency must be positive, got {t}")));
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| (*p - *t).abs() / *t <= bound)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub acc_1pct: f64,
    pub acc_5pct: f64,
    pub acc_10pct: f64,
    pub n_eval: usize,
}

impl ErrorBoundReport {
    pub fn compute(preds: &[f64], truths: &[f64]) -> Result<Self> {
        Ok(ErrorBoundReport {
            acc_1pct: error_bound_accuracy(preds, truths, ERROR_BOUNDS[0])?,
            acc_5pct: error_bound_accuracy(preds, truths, ERROR_BOUNDS[1])?,
            acc_10pct: error_bound_accuracy(preds, truths, ERROR_BOUNDS[2])?,
            n_eval: preds.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_predictions_score_one() {
        let t = [1.0, 2.0, 3.5];
        let r = ErrorBoundReport::compute(&t, &t).unwrap();
        assert_eq!((r.acc_1pct, r.acc_5pct, r.acc_10pct, r.n_eval), (1.0, 1.0, 1.0, 3));
    }

    #[test]
    fn worked_examples() {
        assert_eq!(error_bound_accuracy(&[100.0], &[105.0], 0.05).unwrap(), 1.0);
        assert_eq!(error_bound_accuracy(&[100.0], &[105.0], 0.01).unwrap(), 0.0);
        assert_eq!(
            error_bound_accuracy(&[100.0, 100.0], &[105.0, 200.0], 0.10).unwrap(),
            0.5
        );
    }

    #[test]
    fn domain_errors() {
        assert!(error_bound_accuracy(&[1.0], &[1.0, 2.0], 0.1).is_err());
        assert!(error_bound_accuracy(&[1.0], &[0.0], 0.1).is_err());
        assert!(error_bound_accuracy(&[1.0], &[-3.0], 0.1).is_err());
        assert!(error_bound_accuracy(&[], &[], 0.1).is_err());
    }
}
