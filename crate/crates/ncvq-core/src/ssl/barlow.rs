//! Redundancy-reduction loss between two embedding batches.

use candle_core::Tensor;

use crate::error::{Error, Result};

const STD_EPS: f64 = 1e-5;

/// Standardize each dimension across the batch (population statistics), form
/// the D×D cross-correlation `C = A_norm^T B_norm / N`, and return
/// `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2`.
///
/// Population statistics make `C = I` exact when both branches present the
/// same decorrelated unit-variance embeddings. Scaling both inputs by a
/// common constant leaves the loss unchanged.
pub fn barlow_twins_loss(e_a: &Tensor, e_b: &Tensor, lambda: f64) -> Result<Tensor> {
    let (n, d) = e_a.dims2()?;
    if n < 2 {
        return Err(Error::Shape(
            "barlow twins needs batch >= 2 for standardization".into(),
        ));
    }
    if e_b.dims2()? != (n, d) {
        return Err(Error::Shape("branch embedding shapes differ".into()));
    }

    let a = standardize(e_a)?;
    let b = standardize(e_b)?;
    let c = (a.t()?.matmul(&b)? / n as f64)?; // (D, D)

    let eye = Tensor::eye(d, c.dtype(), c.device())?;
    let diag_err = ((c.clone() - &eye)? * &eye)?.sqr()?.sum_all()?;
    let off_diag = ((c.clone() - (c * &eye)?)?).sqr()?.sum_all()?;
    Ok((diag_err + (off_diag * lambda)?)?)
}

fn standardize(e: &Tensor) -> Result<Tensor> {
    let mean = e.mean_keepdim(0)?;
    let centered = e.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(0)?;
    let std = (var + STD_EPS)?.sqrt()?;
    Ok(centered.broadcast_div(&std)?)
}

/// Plain-loop reference used by oracle tests; kept here so both routes share
/// the documented convention (population std, eps inside the sqrt).
pub fn barlow_twins_reference(e_a: &[Vec<f64>], e_b: &[Vec<f64>], lambda: f64) -> f64 {
    let n = e_a.len();
    let d = e_a[0].len();
    let norm = |e: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; n];
        for j in 0..d {
            let mean: f64 = e.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var: f64 = e.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = (var + STD_EPS).sqrt();
            for i in 0..n {
                out[i][j] = (e[i][j] - mean) / std;
            }
        }
        out
    };
    let a = norm(e_a);
    let b = norm(e_b);
    let mut loss = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut c = 0.0;
            for r in 0..n {
                c += a[r][i] * b[r][j];
            }
            c /= n as f64;
            if i == j {
                loss += (1.0 - c).powi(2);
            } else {
                loss += lambda * c * c;
            }
        }
    }
    loss
}
