//! Stage-2 masked bidirectional transformer over token grids.

mod decode;
mod schedule;
mod transformer;

pub use decode::{iterative_decode, DecodeOptions};
pub use schedule::{mask_schedule_gamma, masked_after_step, train_mask_count};

use std::collections::HashMap;

use candle_core::Tensor;
use candle_nn::{LayerNorm, Linear, Module, VarBuilder};
use rand::Rng as _;

use crate::config::PriorConfig;
use crate::error::{Error, Result};
use crate::nn::init::near_orthogonal;
use crate::rng::Rng;
use transformer::Block;

pub struct MaskedPrior {
    token_embed: Tensor,
    class_embed: Tensor,
    pos_embed: Tensor,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    head: Linear,
    /// 64 -> hidden lift used for embedding transfer; identity-free record
    /// of the initialization so it can be checked and persisted.
    lift: Option<Tensor>,
    k: usize,
    t_lat: usize,
    n_classes: usize,
    cfg: PriorConfig,
}

impl MaskedPrior {
    /// Vocabulary: `k` codes plus one mask token. Class conditioning uses a
    /// separate table with one extra unconditional entry.
    pub fn new(
        cfg: &PriorConfig,
        k: usize,
        t_lat: usize,
        n_classes: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let h = cfg.hidden_dim;
        let token_embed = vb.get_with_hints(
            (k + 1, h),
            "token_embed",
            candle_nn::Init::Randn {
                mean: 0.0,
                stdev: 0.02,
            },
        )?;
        let class_embed = vb.get_with_hints(
            (n_classes + 1, h),
            "class_embed",
            candle_nn::Init::Randn {
                mean: 0.0,
                stdev: 0.02,
            },
        )?;
        let pos_embed = vb.get_with_hints(
            (t_lat + 1, h),
            "pos_embed",
            candle_nn::Init::Randn {
                mean: 0.0,
                stdev: 0.02,
            },
        )?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(Block::new(h, cfg.heads, cfg.ff_ratio, vb.pp(format!("block{i}")))?);
        }
        let final_ln = candle_nn::layer_norm(h, 1e-5, vb.pp("final_ln"))?;
        let head = candle_nn::linear(h, k, vb.pp("head"))?;
        Ok(Self {
            token_embed,
            class_embed,
            pos_embed,
            blocks,
            final_ln,
            head,
            lift: None,
            k,
            t_lat,
            n_classes,
            cfg: cfg.clone(),
        })
    }

    pub fn mask_token(&self) -> u32 {
        self.k as u32
    }

    pub fn uncond_class(&self) -> u32 {
        self.n_classes as u32
    }

    pub fn t_lat(&self) -> usize {
        self.t_lat
    }

    pub fn codebook_size(&self) -> usize {
        self.k
    }

    pub fn config(&self) -> &PriorConfig {
        &self.cfg
    }

    pub fn token_embeddings(&self) -> Tensor {
        self.token_embed.clone()
    }

    pub fn lift(&self) -> Option<&Tensor> {
        self.lift.as_ref()
    }

    /// Initialize rows 0..K of the token-embedding table to
    /// `codebook @ lift`, with a near-orthogonal lift into the hidden width.
    /// The mask row keeps its random initialization.
    pub fn init_token_embeddings(&mut self, codebook: &Tensor, seed: u64) -> Result<()> {
        let (k, d) = codebook.dims2()?;
        if k != self.k {
            return Err(Error::Shape(format!(
                "codebook has {k} rows, prior expects {}",
                self.k
            )));
        }
        let h = self.cfg.hidden_dim;
        let lift_rows = near_orthogonal(d, h, seed ^ 0x11f7);
        let flat: Vec<f64> = lift_rows.into_iter().flatten().collect();
        let lift = Tensor::from_vec(flat, (d, h), codebook.device())?
            .to_dtype(codebook.dtype())?;
        let lifted = codebook.matmul(&lift)?; // (K, H)
        let mask_row = self.token_embed.narrow(0, self.k, 1)?;
        let new_table = Tensor::cat(&[&lifted, &mask_row], 0)?;
        // the table is VarMap-backed (is_variable), so this Var shares its
        // storage and the write lands in the checkpointed parameter
        let var = candle_core::Var::from_tensor(&self.token_embed)?;
        var.set(&new_table)?;
        self.lift = Some(lift);
        Ok(())
    }

    /// Logits over the K codes for every grid position.
    ///
    /// `tokens`: (B, T_lat) with values in 0..=K (K = mask token).
    /// `labels`: per-sample class ids; `None` uses the unconditional token.
    pub fn logits(&self, tokens: &Tensor, labels: Option<&Tensor>) -> Result<Tensor> {
        let (b, s) = tokens.dims2()?;
        if s != self.t_lat {
            return Err(Error::Shape(format!(
                "token grid length {s} != configured {}",
                self.t_lat
            )));
        }
        let tok = self
            .token_embed
            .index_select(&tokens.flatten_all()?, 0)?
            .reshape((b, s, self.cfg.hidden_dim))?;
        let cls_ids = match labels {
            Some(l) => l.clone(),
            None => Tensor::full(self.uncond_class(), (b,), tokens.device())?,
        };
        let cls = self
            .class_embed
            .index_select(&cls_ids, 0)?
            .reshape((b, 1, self.cfg.hidden_dim))?;
        let mut x = Tensor::cat(&[&cls, &tok], 1)?;
        x = x.broadcast_add(&self.pos_embed.unsqueeze(0)?)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let x = self.final_ln.forward(&x)?;
        let x = x.narrow(1, 1, s)?; // drop the class position
        Ok(self.head.forward(&x)?)
    }
}

/// Draw a training mask: `ceil(gamma(r) * T)` distinct positions.
pub fn sample_mask_positions(t_lat: usize, r: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    let n = train_mask_count(t_lat, r)?;
    let mut pool: Vec<usize> = (0..t_lat).collect();
    for i in 0..n {
        let j = rng.random_range(i..t_lat);
        pool.swap(i, j);
    }
    let mut mask = vec![false; t_lat];
    for &p in &pool[..n] {
        mask[p] = true;
    }
    Ok(mask)
}

/// Replace masked positions with the mask token.
pub fn apply_mask(grid: &[u32], mask: &[bool], mask_token: u32) -> Vec<u32> {
    grid.iter()
        .zip(mask)
        .map(|(&g, &m)| if m { mask_token } else { g })
        .collect()
}

/// Cross-entropy over masked positions only; unmasked positions receive no
/// gradient at all (their logits never enter the loss graph).
pub fn masked_cross_entropy(logits: &Tensor, targets: &Tensor, mask: &[Vec<bool>]) -> Result<Tensor> {
    let (b, s, k) = logits.dims3()?;
    let mut picked: Vec<u32> = Vec::new();
    for (i, row) in mask.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            if m {
                picked.push((i * s + j) as u32);
            }
        }
    }
    if picked.is_empty() {
        return Err(Error::Shape("mask selects no positions".into()));
    }
    let idx = Tensor::from_vec(picked, (mask.iter().map(|r| r.iter().filter(|&&m| m).count()).sum::<usize>(),), logits.device())?;
    let flat_logits = logits.reshape((b * s, k))?.index_select(&idx, 0)?;
    let flat_targets = targets.flatten_all()?.index_select(&idx, 0)?;
    Ok(candle_nn::loss::cross_entropy(&flat_logits, &flat_targets)?)
}

pub fn state_tensors(prior: &MaskedPrior) -> HashMap<String, Tensor> {
    let mut out = HashMap::new();
    if let Some(lift) = &prior.lift {
        out.insert("prior_state/lift".to_string(), lift.clone());
    }
    out
}

pub fn load_state(prior: &mut MaskedPrior, state: &HashMap<String, Tensor>) {
    if let Some(lift) = state.get("prior_state/lift") {
        prior.lift = Some(lift.clone());
    }
}
