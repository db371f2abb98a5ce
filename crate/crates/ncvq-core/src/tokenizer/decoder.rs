//! Mirror of the encoder: residual stack, nearest-neighbor upsampling and a
//! projection back to the time-frequency channels.

use candle_core::{Tensor, D};
use candle_nn::VarBuilder;

use super::encoder::ResBlock;
use crate::error::Result;
use crate::nn::{upsample2, Conv1d};

pub struct Decoder {
    stem: Conv1d,
    res: Vec<ResBlock>,
    ups: Vec<Conv1d>,
    out: Conv1d,
}

impl Decoder {
    pub fn new(
        latent_dim: usize,
        hidden: usize,
        out_channels: usize,
        depth: usize,
        n_res_blocks: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let stem = Conv1d::new(latent_dim, hidden, 3, 1, 1, vb.pp("stem"))?;
        let mut res = Vec::with_capacity(n_res_blocks);
        for i in 0..n_res_blocks {
            res.push(ResBlock::new(hidden, vb.pp(format!("res{i}")))?);
        }
        let mut ups = Vec::with_capacity(depth);
        for i in 0..depth {
            ups.push(Conv1d::new(hidden, hidden, 3, 1, 1, vb.pp(format!("up{i}")))?);
        }
        let out = Conv1d::new(hidden, out_channels, 3, 1, 1, vb.pp("out"))?;
        Ok(Self {
            stem,
            res,
            ups,
            out,
        })
    }

    /// Latents (B, D, T_lat) -> time-frequency output cropped to `frames`.
    pub fn forward(&self, z: &Tensor, frames: usize) -> Result<Tensor> {
        let mut h = self.stem.forward(z)?.relu()?;
        for block in &self.res {
            h = block.forward(&h)?;
        }
        for up in &self.ups {
            h = up.forward(&upsample2(&h)?)?.relu()?;
        }
        let u = self.out.forward(&h)?;
        let t = u.dim(D::Minus1)?;
        if t < frames {
            return Err(crate::error::Error::Shape(format!(
                "decoder produced {t} frames, need {frames}"
            )));
        }
        Ok(u.narrow(D::Minus1, 0, frames)?)
    }
}
