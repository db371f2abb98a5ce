//! Stage-1 loss terms. All squared-error losses use the mean over elements
//! so the learning rate is batch-size invariant.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1LossWeights {
    /// SSL loss weight.
    pub eta: f64,
    /// Augmented-reconstruction weight.
    pub zeta: f64,
    /// Commitment weight inside the codebook loss.
    pub beta: f64,
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.sqr()?.mean_all()?)
}

/// `||sg[z] - z_q||^2 + beta ||z - sg[z_q]||^2` (mean reduction).
///
/// With EMA codebook updates the first term carries no parameter gradient
/// (the codebook is not an optimizer variable); its value is still part of
/// the reported loss.
pub fn codebook_loss(z: &Tensor, z_q: &Tensor, beta: f64) -> Result<Tensor> {
    let dictionary = mse(&z.detach(), z_q)?;
    let commitment = mse(z, &z_q.detach())?;
    Ok((dictionary + (commitment * beta)?)?)
}

/// Time-domain plus time-frequency-domain squared error (mean reduction).
pub fn reconstruction_loss(
    x: &Tensor,
    x_hat: &Tensor,
    u: &Tensor,
    u_hat: &Tensor,
) -> Result<Tensor> {
    Ok((mse(x, x_hat)? + mse(u, u_hat)?)?)
}

/// Named stage-1 parts; each is exposed individually for logging.
pub struct Stage1Parts {
    pub reconstruction: Tensor,
    pub codebook: Tensor,
    pub ssl: Option<Tensor>,
    pub aug_reconstruction: Option<Tensor>,
}

/// Weighted total. The SSL and augmented terms are skipped — not added with
/// a zero weight — when absent, so the baseline path reproduces a plain
/// VQVAE objective bit for bit.
pub fn stage1_total_loss(parts: &Stage1Parts, weights: Stage1LossWeights) -> Result<Tensor> {
    let mut total = (parts.reconstruction.clone() + parts.codebook.clone())?;
    if let Some(ssl) = &parts.ssl {
        total = (total + (ssl.clone() * weights.eta)?)?;
    }
    if let Some(aug) = &parts.aug_reconstruction {
        total = (total + (aug.clone() * weights.zeta)?)?;
    }
    Ok(total)
}
