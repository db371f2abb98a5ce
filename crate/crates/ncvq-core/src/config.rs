//! Declarative experiment configuration.
//!
//! A config file fully determines a run: dataset, augmentation, both stages'
//! hyperparameters, evaluation settings and the seed. Saved configs are
//! written with every default inlined so archived runs are self-describing,
//! and every artifact records the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationKind, AugmentationSpec};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::stft::StftConfig;

pub const DATA_ROOT_ENV: &str = "NCVQ_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslMethod {
    None,
    BarlowTwins,
    Vibcreg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub method: SslMethod,
    /// Projector output width; each of the three linear layers uses it.
    pub projector_dim: usize,
    pub barlow_lambda: f64,
    pub vibcreg_sim_lambda: f64,
    pub vibcreg_var_mu: f64,
    pub vibcreg_cov_nu: f64,
    pub iternorm_iterations: usize,
    /// SSL loss weight; `None` resolves to 1/projector_dim for Barlow Twins
    /// and 0.01 for VIbCReg.
    pub eta: Option<f64>,
    /// Augmented-branch reconstruction weight.
    pub zeta: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            method: SslMethod::BarlowTwins,
            projector_dim: 4096,
            barlow_lambda: 0.005,
            vibcreg_sim_lambda: 25.0,
            vibcreg_var_mu: 25.0,
            vibcreg_cov_nu: 100.0,
            iternorm_iterations: 5,
            eta: None,
            zeta: 1.0,
        }
    }
}

impl SslConfig {
    pub fn effective_eta(&self) -> f64 {
        match self.method {
            SslMethod::None => 0.0,
            SslMethod::BarlowTwins => self
                .eta
                .unwrap_or(1.0 / self.projector_dim as f64),
            SslMethod::Vibcreg => self.eta.unwrap_or(0.01),
        }
    }

    pub fn effective_zeta(&self) -> f64 {
        if self.method == SslMethod::None {
            0.0
        } else {
            self.zeta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub ema_decay: f64,
    pub commitment_beta: f64,
    pub smoothing_eps: f64,
    pub hidden: usize,
    pub n_res_blocks: usize,
    /// Downsampling depth; `None` picks the smallest depth keeping the
    /// token-grid length at most 64.
    pub downsample: Option<usize>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            codebook_size: 32,
            codebook_dim: 64,
            ema_decay: 0.9,
            commitment_beta: 1.0,
            smoothing_eps: 1e-5,
            hidden: 64,
            n_res_blocks: 2,
            downsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
}

impl StageConfig {
    pub fn stage1_default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 128,
            lr: 1e-3,
            lr_min: 0.0,
            weight_decay: 1e-5,
        }
    }

    pub fn stage2_default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 256,
            lr: 1e-3,
            lr_min: 0.0,
            weight_decay: 1e-5,
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_ratio: usize,
    pub t_steps: usize,
    pub conditional: bool,
    /// Initialize token embeddings from the stage-1 codebook.
    pub embedding_transfer: bool,
    pub freeze_token_embeddings: bool,
    /// Fraction of training labels replaced by the unconditional token.
    pub label_dropout: f64,
    pub temperature: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            layers: 4,
            heads: 4,
            ff_ratio: 1,
            t_steps: 10,
            conditional: true,
            embedding_transfer: true,
            freeze_token_embeddings: false,
            label_dropout: 0.1,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// FID/IS are averaged over this many generation runs.
    pub fid_runs: usize,
    /// Number of samples per generation run; `None` matches the test-set size
    /// capped at `generation_cap`.
    pub n_generate: Option<usize>,
    pub generation_cap: usize,
    pub fcn_epochs: usize,
    pub fcn_batch_size: usize,
    pub fcn_lr: f64,
    pub fcn_channels: [usize; 3],
    /// Cap on points fed to the 2-D embeddings for figures.
    pub embed_cap: usize,
    pub tsne_iters: usize,
    pub tsne_perplexity: f64,
    /// Probe representations: flattened z_q (default) or mean-pooled.
    pub pooled_probe_features: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fid_runs: 4,
            n_generate: None,
            generation_cap: 1000,
            fcn_epochs: 300,
            fcn_batch_size: 128,
            fcn_lr: 1e-3,
            fcn_channels: [128, 256, 128],
            embed_cap: 1000,
            tsne_iters: 300,
            tsne_perplexity: 30.0,
            pooled_probe_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_root: PathBuf,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub val_fraction: f64,
    pub augmentation: AugmentationSpec,
    pub stft: StftConfig,
    pub tokenizer: TokenizerConfig,
    pub ssl: SslConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub prior: PriorConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "TwoPatterns".into(),
            data_root: PathBuf::from("data"),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            val_fraction: 0.2,
            augmentation: AugmentationSpec::default(),
            stft: StftConfig::default(),
            tokenizer: TokenizerConfig::default(),
            ssl: SslConfig::default(),
            stage1: StageConfig::stage1_default(),
            stage2: StageConfig::stage2_default(),
            prior: PriorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full-scale settings: 1000 epochs per stage, 4096-wide projector.
    pub fn paper_scale(dataset: &str) -> Self {
        Self {
            dataset: dataset.into(),
            ..Default::default()
        }
    }

    /// Reduced preset for commodity hardware: 200 epochs per stage, a
    /// 512-wide projector and a lighter feature extractor. Everything else
    /// keeps the full-scale defaults.
    pub fn desk_scale(dataset: &str) -> Self {
        let mut cfg = Self::paper_scale(dataset);
        cfg.stage1.epochs = 200;
        cfg.stage2.epochs = 200;
        cfg.ssl.projector_dim = 512;
        cfg.eval.fcn_epochs = 150;
        cfg.eval.fcn_channels = [64, 128, 64];
        cfg.eval.generation_cap = 500;
        cfg.eval.embed_cap = 600;
        cfg
    }

    pub fn with_ssl(mut self, method: SslMethod, augmentation: AugmentationKind) -> Self {
        self.ssl.method = method;
        self.augmentation.kind = augmentation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        self.stft.validate()?;
        if self.tokenizer.codebook_size < 2 {
            return Err(Error::Config("codebook needs at least 2 codes".into()));
        }
        if self.prior.hidden_dim % self.prior.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by heads {}",
                self.prior.hidden_dim, self.prior.heads
            )));
        }
        if self.prior.t_steps == 0 {
            return Err(Error::Config("t_steps must be positive".into()));
        }
        if self.ssl.effective_eta() < 0.0 || self.ssl.effective_zeta() < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        for (stage, sc) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if sc.epochs == 0 || sc.batch_size == 0 {
                return Err(Error::Config(format!("{stage}: zero epochs or batch size")));
            }
        }
        Ok(())
    }

    /// Effective data root: the environment variable wins over the config.
    pub fn resolved_data_root(&self) -> PathBuf {
        match std::env::var(DATA_ROOT_ENV) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.data_root.clone(),
        }
    }

    /// Canonical serialized form with all defaults inlined.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Hash of the canonical serialization; stamped into every artifact.
    pub fn hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}
