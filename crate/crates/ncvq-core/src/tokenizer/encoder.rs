//! Convolutional residual encoder over time-frequency frames.

use candle_core::{Tensor, D};
use candle_nn::VarBuilder;

use crate::error::Result;
use crate::nn::Conv1d;

pub(crate) struct ResBlock {
    conv3: Conv1d,
    conv1: Conv1d,
}

impl ResBlock {
    pub(crate) fn new(channels: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            conv3: Conv1d::new(channels, channels, 3, 1, 1, vb.pp("conv3"))?,
            conv1: Conv1d::new(channels, channels, 1, 1, 0, vb.pp("conv1"))?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv3.forward(&x.relu()?)?;
        let h = self.conv1.forward(&h.relu()?)?;
        Ok((x + h)?)
    }
}

pub struct Encoder {
    stem: Conv1d,
    downs: Vec<Conv1d>,
    res: Vec<ResBlock>,
    out: Conv1d,
    depth: usize,
}

impl Encoder {
    pub fn new(
        in_channels: usize,
        hidden: usize,
        latent_dim: usize,
        depth: usize,
        n_res_blocks: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let stem = Conv1d::new(in_channels, hidden, 3, 1, 1, vb.pp("stem"))?;
        let mut downs = Vec::with_capacity(depth);
        for i in 0..depth {
            downs.push(Conv1d::new(hidden, hidden, 4, 2, 1, vb.pp(format!("down{i}")))?);
        }
        let mut res = Vec::with_capacity(n_res_blocks);
        for i in 0..n_res_blocks {
            res.push(ResBlock::new(hidden, vb.pp(format!("res{i}")))?);
        }
        let out = Conv1d::new(hidden, latent_dim, 3, 1, 1, vb.pp("out"))?;
        Ok(Self {
            stem,
            downs,
            res,
            out,
            depth,
        })
    }

    /// `u`: (B, C, T'), right-padded here to a multiple of 2^depth.
    /// Output: (B, latent_dim, T_lat) with T_lat = padded / 2^depth.
    pub fn forward(&self, u: &Tensor) -> Result<Tensor> {
        let t = u.dim(D::Minus1)?;
        let mult = 1usize << self.depth;
        let pad = (mult - t % mult) % mult;
        let u = if pad > 0 {
            u.pad_with_zeros(D::Minus1, 0, pad)?
        } else {
            u.clone()
        };
        let mut h = self.stem.forward(&u)?.relu()?;
        for down in &self.downs {
            h = down.forward(&h)?.relu()?;
        }
        for block in &self.res {
            h = block.forward(&h)?;
        }
        self.out.forward(&h)
    }
}
