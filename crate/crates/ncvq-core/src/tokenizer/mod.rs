//! Stage-1 tokenizer: encoder, EMA vector quantizer and decoder over the
//! time-frequency view, with a quantization-free path for augmented views.

mod codebook;
mod decoder;
mod encoder;
mod loss;

pub use codebook::{Codebook, Quantized};
pub use decoder::Decoder;
pub use encoder::Encoder;
pub use loss::{
    codebook_loss, reconstruction_loss, stage1_total_loss, Stage1LossWeights, Stage1Parts,
};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;

use crate::config::TokenizerConfig;
use crate::error::{Error, Result};
use crate::stft::{Stft, StftConfig};

/// Latents from one two-branch forward pass.
///
/// `z` comes from the original branch and is quantized into `z_q` with token
/// grid `k`; `z_prime`, when present, comes from the augmented branch and
/// bypasses quantization entirely.
pub struct LatentBatch {
    pub z: Tensor,
    pub z_prime: Option<Tensor>,
    pub z_q: Tensor,
    pub k: Tensor,
}

/// Geometry derived from series length and transform settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentShape {
    pub series_len: usize,
    pub frames: usize,
    pub depth: usize,
    pub t_lat: usize,
}

/// Smallest depth whose token grid is at most `max_t_lat` long.
pub fn auto_depth(frames: usize, max_t_lat: usize) -> usize {
    let mut depth = 0usize;
    while frames.div_ceil(1 << depth) > max_t_lat {
        depth += 1;
    }
    depth
}

pub fn latent_shape(stft: StftConfig, series_len: usize, downsample: Option<usize>) -> LatentShape {
    let frames = stft.n_frames(series_len);
    let depth = downsample.unwrap_or_else(|| auto_depth(frames, 64));
    LatentShape {
        series_len,
        frames,
        depth,
        t_lat: frames.div_ceil(1 << depth),
    }
}

pub struct NcTokenizer {
    pub stft: Stft,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub codebook: Codebook,
    shape: LatentShape,
}

impl NcTokenizer {
    pub fn new(
        cfg: &TokenizerConfig,
        stft_cfg: StftConfig,
        series_len: usize,
        dtype: DType,
        device: &Device,
        vb: VarBuilder,
    ) -> Result<Self> {
        let shape = latent_shape(stft_cfg, series_len, cfg.downsample);
        let stft = Stft::new(stft_cfg, dtype, device)?;
        let channels = stft_cfg.n_channels();
        let encoder = Encoder::new(
            channels,
            cfg.hidden,
            cfg.codebook_dim,
            shape.depth,
            cfg.n_res_blocks,
            vb.pp("encoder"),
        )?;
        let decoder = Decoder::new(
            cfg.codebook_dim,
            cfg.hidden,
            channels,
            shape.depth,
            cfg.n_res_blocks,
            vb.pp("decoder"),
        )?;
        let codebook = Codebook::new(
            cfg.codebook_size,
            cfg.codebook_dim,
            cfg.ema_decay,
            cfg.commitment_beta,
            cfg.smoothing_eps,
            dtype,
            device,
        )?;
        Ok(Self {
            stft,
            encoder,
            decoder,
            codebook,
            shape,
        })
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn t_lat(&self) -> usize {
        self.shape.t_lat
    }

    fn check_finite(x: &Tensor, what: &str) -> Result<()> {
        let finite = x
            .to_dtype(DType::F64)?
            .abs()?
            .max_all()?
            .to_scalar::<f64>()?
            .is_finite();
        if !finite {
            return Err(Error::NonFinite {
                part: what.to_string(),
                step: 0,
            });
        }
        Ok(())
    }

    /// Series (B, L) -> time-frequency view (B, 2F, T').
    pub fn view(&self, x: &Tensor) -> Result<Tensor> {
        self.stft.forward(x)
    }

    /// Series (B, L) -> continuous latents (B, D, T_lat).
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_finite(x, "encoder input")?;
        let u = self.stft.forward(x)?;
        self.encoder.forward(&u)
    }

    pub fn encode_view(&self, u: &Tensor) -> Result<Tensor> {
        self.encoder.forward(u)
    }

    /// Latents -> (time-frequency output, time-domain reconstruction).
    pub fn decode(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        Self::check_finite(z, "decoder input")?;
        let u_hat = self.decoder.forward(z, self.shape.frames)?;
        let x_hat = self.stft.inverse(&u_hat, self.shape.series_len)?;
        Ok((u_hat, x_hat))
    }

    /// Token grid (B, T_lat) -> series (B, L), for generation.
    pub fn decode_tokens(&self, k: &Tensor) -> Result<Tensor> {
        let z_q = self.codebook.lookup(k)?;
        let (_, x_hat) = self.decode(&z_q)?;
        Ok(x_hat)
    }

    /// Token grid for a batch without gradients (probe/eval path).
    pub fn tokenize(&self, x: &Tensor) -> Result<Quantized> {
        let z = self.encode(x)?.detach();
        self.codebook.quantize(&z)
    }
}
