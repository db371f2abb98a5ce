//! Shared projector head: three linear layers with one output width, the
//! first two batch-normalized.

use candle_core::{Module, Tensor};
use candle_nn::{Linear, VarBuilder};

use crate::error::Result;
use crate::nn::BatchNorm1d;

pub struct Projector {
    l1: Linear,
    bn1: BatchNorm1d,
    l2: Linear,
    bn2: BatchNorm1d,
    l3: Linear,
    out_dim: usize,
}

impl Projector {
    pub fn new(in_dim: usize, out_dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            l1: candle_nn::linear(in_dim, out_dim, vb.pp("l1"))?,
            bn1: BatchNorm1d::new(out_dim, false, vb.pp("bn1"))?,
            l2: candle_nn::linear(out_dim, out_dim, vb.pp("l2"))?,
            bn2: BatchNorm1d::new(out_dim, false, vb.pp("bn2"))?,
            l3: candle_nn::linear(out_dim, out_dim, vb.pp("l3"))?,
            out_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.l1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward(&self.l2.forward(&h)?, train)?.relu()?;
        Ok(self.l3.forward(&h)?)
    }
}
