//! Newton-iteration approximate ZCA whitening of a batch.

use candle_core::Tensor;

use crate::error::{Error, Result};

const CENTER_EPS: f64 = 1e-5;

/// Whiten `e` (B, D): center, then multiply by an approximate inverse square
/// root of the batch covariance obtained with `iterations` Newton-Schulz
/// steps. Output covariance approaches the identity as iterations grow.
pub fn iterative_whitening(e: &Tensor, iterations: usize) -> Result<Tensor> {
    let (n, d) = e.dims2()?;
    if n < 2 {
        return Err(Error::Shape("whitening needs batch >= 2".into()));
    }
    let mean = e.mean_keepdim(0)?;
    let centered = e.broadcast_sub(&mean)?;
    if iterations == 0 {
        return Ok(centered);
    }

    let eye = Tensor::eye(d, e.dtype(), e.device())?;
    // regularized population covariance; the trace normalization stays in
    // the graph so its gradient contribution is kept
    let sigma = ((centered.t()?.matmul(&centered)? / n as f64)? + (eye.clone() * CENTER_EPS)?)?;
    let trace = (sigma.clone() * &eye)?.sum_all()?.reshape((1, 1))?;
    let sigma_n = sigma.broadcast_div(&trace)?;

    // P_{k+1} = (3 P_k - P_k^3 Sigma_N) / 2, P_0 = I
    let mut p = eye.clone();
    for _ in 0..iterations {
        let p3 = p.matmul(&p)?.matmul(&p)?;
        p = ((p * 3.0)? - p3.matmul(&sigma_n)?)?;
        p = (p / 2.0)?;
    }
    // whitening matrix: P / sqrt(trace)
    let w = p.broadcast_div(&trace.sqrt()?)?;
    Ok(centered.matmul(&w)?)
}
