//! Batch normalization over (B, C) or (B, C, T) inputs with explicit
//! train/eval modes and exportable running statistics.

use candle_core::{Tensor, Var};
use candle_nn::VarBuilder;

use crate::error::Result;

pub struct BatchNorm1d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
    /// When false, running stats are neither tracked nor usable in eval;
    /// normalization always uses batch statistics (projector-style BN).
    track_running_stats: bool,
}

impl BatchNorm1d {
    pub fn new(features: usize, track_running_stats: bool, vb: VarBuilder) -> Result<Self> {
        let gamma = vb.get_with_hints(features, "weight", candle_nn::Init::Const(1.0))?;
        let beta = vb.get_with_hints(features, "bias", candle_nn::Init::Const(0.0))?;
        let device = vb.device().clone();
        let dtype = vb.dtype();
        Ok(Self {
            gamma,
            beta,
            running_mean: Var::zeros(features, dtype, &device)?,
            running_var: Var::ones(features, dtype, &device)?,
            eps: 1e-5,
            momentum: 0.1,
            track_running_stats,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let rank = x.rank();
        let (mean, var) = if train || !self.track_running_stats {
            let (mean, var) = match rank {
                2 => {
                    let mean = x.mean(0)?;
                    let var = x.broadcast_sub(&mean)?.sqr()?.mean(0)?;
                    (mean, var)
                }
                3 => {
                    // population stats over batch and time
                    let xt = x.transpose(0, 1)?.flatten_from(1)?;
                    let mean = xt.mean(1)?;
                    let var = xt.broadcast_sub(&mean.unsqueeze(1)?)?.sqr()?.mean(1)?;
                    (mean, var)
                }
                r => {
                    return Err(crate::error::Error::Shape(format!(
                        "batch norm expects rank 2 or 3 input, got {r}"
                    )))
                }
            };
            if train && self.track_running_stats {
                let m = self.momentum;
                let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                    + (mean.detach() * m)?)?;
                let new_var =
                    ((self.running_var.as_tensor() * (1.0 - m))? + (var.detach() * m)?)?;
                self.running_mean.set(&new_mean)?;
                self.running_var.set(&new_var)?;
            }
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().clone(),
                self.running_var.as_tensor().clone(),
            )
        };

        let shape: Vec<usize> = match rank {
            2 => vec![1, mean.dim(0)?],
            _ => vec![1, mean.dim(0)?, 1],
        };
        let mean = mean.reshape(shape.clone())?;
        let std = (var + self.eps)?.sqrt()?.reshape(shape.clone())?;
        let out = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        Ok(out
            .broadcast_mul(&self.gamma.reshape(shape.clone())?)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }

    /// Running statistics for checkpointing, `(mean, var)`.
    pub fn state(&self) -> (Tensor, Tensor) {
        (
            self.running_mean.as_tensor().clone(),
            self.running_var.as_tensor().clone(),
        )
    }

    pub fn load_state(&self, mean: &Tensor, var: &Tensor) -> Result<()> {
        self.running_mean.set(mean)?;
        self.running_var.set(var)?;
        Ok(())
    }
}
