//! Inception score from per-sample class posteriors.

use crate::error::{Error, Result};

const KL_EPS: f64 = 1e-12;

/// `exp(mean_i KL(p(y|x_i) || mean_j p(y|x_j)))`.
///
/// Rows must be probability vectors (nonnegative, summing to 1 within 1e-6).
/// The value lies in [1, C].
pub fn inception_score(class_probs: &[Vec<f64>]) -> Result<f64> {
    let n = class_probs.len();
    if n == 0 {
        return Err(Error::Shape("no probability rows".into()));
    }
    let c = class_probs[0].len();
    for (i, row) in class_probs.iter().enumerate() {
        if row.len() != c {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(Error::Shape(format!(
                "row {i} is not a probability vector (sum {sum})"
            )));
        }
    }

    let mut marginal = vec![0.0f64; c];
    for row in class_probs {
        for (j, &p) in row.iter().enumerate() {
            marginal[j] += p;
        }
    }
    for m in &mut marginal {
        *m /= n as f64;
    }

    let mut mean_kl = 0.0;
    for row in class_probs {
        let mut kl = 0.0;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                kl += p * ((p + KL_EPS).ln() - (marginal[j] + KL_EPS).ln());
            }
        }
        mean_kl += kl;
    }
    mean_kl /= n as f64;
    Ok(mean_kl.exp())
}
