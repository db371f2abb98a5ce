//! Minimal bidirectional transformer blocks (pre-norm, full attention).

use candle_core::{Module, Tensor, D};
use candle_nn::{LayerNorm, Linear, VarBuilder};

use crate::error::Result;

struct Attention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    fn new(hidden: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            wq: candle_nn::linear(hidden, hidden, vb.pp("wq"))?,
            wk: candle_nn::linear(hidden, hidden, vb.pp("wk"))?,
            wv: candle_nn::linear(hidden, hidden, vb.pp("wv"))?,
            wo: candle_nn::linear(hidden, hidden, vb.pp("wo"))?,
            heads,
            head_dim: hidden / heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, _) = x.dims3()?;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, s, self.heads, self.head_dim))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let q = split(self.wq.forward(x)?)?;
        let k = split(self.wk.forward(x)?)?;
        let v = split(self.wv.forward(x)?)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let scores = (q.matmul(&k.transpose(2, 3)?)? * scale)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .reshape((b, s, self.heads * self.head_dim))?;
        Ok(self.wo.forward(&out)?)
    }
}

struct FeedForward {
    w1: Linear,
    w2: Linear,
}

impl FeedForward {
    fn new(hidden: usize, inner: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            w1: candle_nn::linear(hidden, inner, vb.pp("w1"))?,
            w2: candle_nn::linear(inner, hidden, vb.pp("w2"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.w2.forward(&self.w1.forward(x)?.gelu_erf()?)?)
    }
}

pub struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl Block {
    pub fn new(hidden: usize, heads: usize, ff_ratio: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            ln1: candle_nn::layer_norm(hidden, 1e-5, vb.pp("ln1"))?,
            attn: Attention::new(hidden, heads, vb.pp("attn"))?,
            ln2: candle_nn::layer_norm(hidden, 1e-5, vb.pp("ln2"))?,
            ff: FeedForward::new(hidden, hidden * ff_ratio.max(1), vb.pp("ff"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        Ok((&h + self.ff.forward(&self.ln2.forward(&h)?)?)?)
    }
}
