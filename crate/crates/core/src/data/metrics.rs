use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node-level regression errors pooled over every node of every graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// `MAE / mean(truth)`.
    pub nmae: f64,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::shape("metrics need at least one value"));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
    }
    let mean_truth = truth.iter().sum::<f64>() / n;
    if mean_truth == 0.0 {
        return Err(Error::Numeric("NMAE undefined: mean ground-truth throughput is 0".into()));
    }
    let mae = ae / n;
    Ok(Metrics { mse: se / n, mae, nmae: mae / mean_truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_predictions() {
        let m = metrics(&[0.2, 0.4], &[0.2, 0.4]).unwrap();
        assert_eq!((m.mse, m.mae, m.nmae), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_offset() {
        let truth = [0.05, 0.15, 0.1, 0.1];
        let pred: Vec<f64> = truth.iter().map(|t| t + 0.01).collect();
        let m = metrics(&pred, &truth).unwrap();
        assert!((m.mae - 0.01).abs() < 1e-15);
        assert!((m.nmae - 0.1).abs() < 1e-13);
        assert!((m.mse - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn reported_nmae_implies_mean_truth() {
        // MAE 0.0026 at NMAE 0.0330 puts the mean truth near 0.0788.
        let mean: f64 = 0.0026 / 0.0330;
        assert!((mean - 0.0788).abs() < 1e-4);
        let truth = [mean - 0.01, mean + 0.01];
        let pred = [truth[0] + 0.0026, truth[1] - 0.0026];
        let m = metrics(&pred, &truth).unwrap();
        assert!((m.nmae - 0.0330).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(metrics(&[0.1], &[0.0]), Err(Error::Numeric(_))));
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[0.1], &[0.1, 0.2]).is_err());
    }
}
