//! Stage-1 training: dual-branch tokenizer with EMA codebook and optional
//! non-contrastive loss.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::Rng as _;

use crate::config::{ExperimentConfig, SslMethod};
use crate::data::{epoch_batches, load_ucr, normalize, split_validation, TimeSeriesDataset};
use crate::error::Result;
use crate::nn::{cosine_lr, deterministic_init, finite_scalar, AdamW, AdamWParams};
use crate::rng::{sub_rng, Rng};
use crate::ssl::{barlow_twins_loss, pool_and_project, vibcreg_loss, Projector, VibcregWeights};
use crate::tokenizer::{
    codebook_loss, reconstruction_loss, stage1_total_loss, NcTokenizer, Stage1LossWeights,
    Stage1Parts,
};

use super::checkpoint::{save_stage1, stage1_best_dir, stage1_dir, RunMeta};
use super::plot::plot_curves;

#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub reconstruction: f64,
    pub codebook: f64,
    pub ssl: Option<f64>,
    pub aug_reconstruction: Option<f64>,
    pub total: f64,
}

/// Per-epoch averages of the four named components.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub reconstruction: f64,
    pub codebook: f64,
    pub ssl: f64,
    pub aug_reconstruction: f64,
    pub total: f64,
    pub validation_reconstruction: f64,
}

pub struct Stage1Trainer {
    pub tokenizer: NcTokenizer,
    pub varmap: VarMap,
    pub projector: Option<Projector>,
    pub optimizer: AdamW,
    pub weights: Stage1LossWeights,
    cfg: ExperimentConfig,
    codebook_rng: Rng,
    step_idx: usize,
}

impl Stage1Trainer {
    pub fn new(cfg: &ExperimentConfig, series_len: usize) -> Result<Self> {
        cfg.validate()?;
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let tokenizer = NcTokenizer::new(
            &cfg.tokenizer,
            cfg.stft,
            series_len,
            DType::F32,
            &device,
            vb.clone(),
        )?;
        let projector = if cfg.ssl.method == SslMethod::None {
            None
        } else {
            Some(Projector::new(
                cfg.tokenizer.codebook_dim,
                cfg.ssl.projector_dim,
                vb.pp("projector"),
            )?)
        };
        deterministic_init(&varmap, cfg.seed)?;
        let optimizer = AdamW::from_varmap(
            &varmap,
            &[],
            AdamWParams {
                lr: cfg.stage1.lr,
                weight_decay: cfg.stage1.weight_decay,
                ..Default::default()
            },
        )?;
        let weights = Stage1LossWeights {
            eta: cfg.ssl.effective_eta(),
            zeta: cfg.ssl.effective_zeta(),
            beta: cfg.tokenizer.commitment_beta,
        };
        Ok(Self {
            tokenizer,
            varmap,
            projector,
            optimizer,
            weights,
            cfg: cfg.clone(),
            codebook_rng: sub_rng(cfg.seed, "codebook_init"),
            step_idx: 0,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optimizer.set_learning_rate(lr);
    }

    /// One optimizer step on a batch `x`: (B, L).
    ///
    /// With ssl = none the augmented branch, projector and their losses are
    /// skipped entirely (no extra randomness is drawn), which keeps the path
    /// bit-identical to a plain VQVAE step.
    pub fn step(&mut self, x: &Tensor, aug_rng: &mut Rng) -> Result<StepLosses> {
        self.step_idx += 1;
        let step = self.step_idx;

        let u = self.tokenizer.view(x)?;
        let z = self.tokenizer.encode_view(&u)?;
        if !self.tokenizer.codebook.is_initialized() {
            self.tokenizer.codebook.init_from_batch(&z, &mut self.codebook_rng)?;
        }
        let q = self.tokenizer.codebook.quantize(&z)?;
        self.tokenizer.codebook.ema_update(&z, &q.k)?;
        let (u_hat, x_hat) = self.tokenizer.decode(&q.z_q_st)?;

        let recon = reconstruction_loss(x, &x_hat, &u, &u_hat)?;
        let cb = codebook_loss(&z, &q.z_q, self.weights.beta)?;

        let mut parts = Stage1Parts {
            reconstruction: recon,
            codebook: cb,
            ssl: None,
            aug_reconstruction: None,
        };

        if let Some(projector) = &self.projector {
            let x_aug = augment_batch(x, &self.cfg, aug_rng)?;
            let u_aug = self.tokenizer.view(&x_aug)?;
            let z_prime = self.tokenizer.encode_view(&u_aug)?;
            let (u_hat_aug, x_hat_aug) = self.tokenizer.decode(&z_prime)?;
            let aug_recon = reconstruction_loss(&x_aug, &x_hat_aug, &u_aug, &u_hat_aug)?;

            let e_orig = pool_and_project(&q.z_q_st, projector, true)?;
            let e_aug = pool_and_project(&z_prime, projector, true)?;
            let ssl = match self.cfg.ssl.method {
                SslMethod::BarlowTwins => {
                    barlow_twins_loss(&e_orig, &e_aug, self.cfg.ssl.barlow_lambda)?
                }
                SslMethod::Vibcreg => vibcreg_loss(
                    &e_orig,
                    &e_aug,
                    VibcregWeights {
                        sim_lambda: self.cfg.ssl.vibcreg_sim_lambda,
                        var_mu: self.cfg.ssl.vibcreg_var_mu,
                        cov_nu: self.cfg.ssl.vibcreg_cov_nu,
                    },
                    self.cfg.ssl.iternorm_iterations,
                )?,
                SslMethod::None => unreachable!("projector exists only with ssl"),
            };
            parts.ssl = Some(ssl);
            parts.aug_reconstruction = Some(aug_recon);
        }

        let total = stage1_total_loss(&parts, self.weights)?;
        let losses = StepLosses {
            reconstruction: finite_scalar(&parts.reconstruction, "reconstruction loss", step)?,
            codebook: finite_scalar(&parts.codebook, "codebook loss", step)?,
            ssl: match &parts.ssl {
                Some(t) => Some(finite_scalar(t, "ssl loss", step)?),
                None => None,
            },
            aug_reconstruction: match &parts.aug_reconstruction {
                Some(t) => Some(finite_scalar(t, "augmented reconstruction loss", step)?),
                None => None,
            },
            total: finite_scalar(&total, "total loss", step)?,
        };
        self.optimizer.backward_step(&total)?;
        Ok(losses)
    }

    /// Mean reconstruction loss (time + time-frequency) over a split,
    /// without EMA updates or gradients.
    pub fn validation_loss(&self, ds: &TimeSeriesDataset) -> Result<f64> {
        let device = Device::Cpu;
        let mut total = 0.0f64;
        let mut count = 0usize;
        for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(256) {
            let x = crate::eval::rows_tensor(ds, chunk, &device)?;
            let u = self.tokenizer.view(&x)?;
            let z = self.tokenizer.encode_view(&u)?.detach();
            let q = self.tokenizer.codebook.quantize(&z)?;
            let (u_hat, x_hat) = self.tokenizer.decode(&q.z_q_st)?;
            let loss = reconstruction_loss(&x, &x_hat, &u, &u_hat)?;
            total += finite_scalar(&loss, "validation loss", self.step_idx)? * chunk.len() as f64;
            count += chunk.len();
        }
        Ok(total / count.max(1) as f64)
    }

    /// Mean time-domain MSE over a split, for reconstruction smoke checks.
    pub fn reconstruction_mse(&self, ds: &TimeSeriesDataset) -> Result<f64> {
        let device = Device::Cpu;
        let mut total = 0.0f64;
        let mut count = 0usize;
        for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(256) {
            let x = crate::eval::rows_tensor(ds, chunk, &device)?;
            let z = self.tokenizer.encode(&x)?.detach();
            let q = self.tokenizer.codebook.quantize(&z)?;
            let (_, x_hat) = self.tokenizer.decode(&q.z_q_st)?;
            let mse = x.sub(&x_hat)?.sqr()?.mean_all()?;
            total += finite_scalar(&mse, "reconstruction mse", 0)? * chunk.len() as f64;
            count += chunk.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

/// Apply the configured augmentation row-wise.
pub fn augment_batch(x: &Tensor, cfg: &ExperimentConfig, rng: &mut Rng) -> Result<Tensor> {
    let (b, l) = x.dims2()?;
    let rows = x.to_vec2::<f32>()?;
    let mut flat = Vec::with_capacity(b * l);
    for row in rows {
        flat.extend(cfg.augmentation.apply(&row, rng));
    }
    Ok(Tensor::from_vec(flat, (b, l), x.device())?)
}

pub struct Stage1RunResult {
    pub checkpoint_dir: std::path::PathBuf,
    pub history: Vec<EpochRecord>,
    pub meta: RunMeta,
}

fn draw_batch(ds: &TimeSeriesDataset, indices: &[usize]) -> Result<Tensor> {
    crate::eval::rows_tensor(ds, indices, &Device::Cpu)
}

/// Full stage-1 job: load + normalize data, train, persist checkpoints,
/// loss curves (CSV + figure) and the validation reconstruction curve.
pub fn run_stage1(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Stage1RunResult> {
    cfg.validate()?;
    cfg.augmentation.validate(usize::MAX)?;
    let (train_raw, test_raw) = load_ucr(&cfg.resolved_data_root(), &cfg.dataset)?;
    cfg.augmentation.validate(train_raw.series_len())?;
    let (train_full, _test) = normalize(&train_raw, &test_raw)?;
    let (train, val) = split_validation(&train_full, cfg.val_fraction, cfg.seed)?;
    run_stage1_with_data(cfg, run_dir, &train, &val, train_full.norm_stats.expect("set"))
}

pub fn run_stage1_with_data(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    train: &TimeSeriesDataset,
    val: &TimeSeriesDataset,
    norm_stats: crate::data::NormStats,
) -> Result<Stage1RunResult> {
    let ckpt_dir = stage1_dir(run_dir);
    std::fs::create_dir_all(&ckpt_dir)?;
    cfg.save(&run_dir.join("config.toml"))?;

    let series_len = train.series_len();
    let mut trainer = Stage1Trainer::new(cfg, series_len)?;
    let mut meta = RunMeta {
        config_toml: cfg.to_toml()?,
        config_hash: cfg.hash(),
        dataset: cfg.dataset.clone(),
        norm_stats,
        series_len,
        n_classes: train.n_classes().max(val.n_classes()),
        epoch: 0,
        stage1_hash: None,
    };

    // resume from a previous partial run of the same config
    let mut start_epoch = 0usize;
    if ckpt_dir.join(super::checkpoint::META_FILE).is_file() {
        let existing = RunMeta::load(&ckpt_dir)?;
        if existing.config_hash == meta.config_hash && existing.epoch < cfg.stage1.epochs {
            trainer.varmap.load(ckpt_dir.join(super::checkpoint::PARAMS_FILE))?;
            let state = candle_core::safetensors::load(
                ckpt_dir.join(super::checkpoint::STATE_FILE),
                &Device::Cpu,
            )?;
            trainer.tokenizer.codebook.load_state(&state)?;
            trainer.optimizer.load_state(&state)?;
            trainer.step_idx = existing.epoch * train.len().div_ceil(cfg.stage1.batch_size);
            start_epoch = existing.epoch;
        }
    }

    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.stage1.epochs);
    let mut best_val = f64::INFINITY;
    let mut csv = String::from(
        "epoch,reconstruction,codebook,ssl,aug_reconstruction,total,validation_reconstruction,lr\n",
    );

    for epoch in start_epoch..cfg.stage1.epochs {
        let lr = cosine_lr(cfg.stage1.lr, cfg.stage1.lr_min, epoch, cfg.stage1.epochs);
        trainer.set_learning_rate(lr);
        let mut shuffle_rng = sub_rng(cfg.seed, &format!("s1_shuffle/{epoch}"));
        let mut aug_rng = sub_rng(cfg.seed, &format!("s1_augment/{epoch}"));

        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for batch in epoch_batches(train.len(), cfg.stage1.batch_size, &mut shuffle_rng) {
            let x = draw_batch(train, &batch)?;
            let losses = trainer.step(&x, &mut aug_rng)?;
            sums[0] += losses.reconstruction;
            sums[1] += losses.codebook;
            sums[2] += losses.ssl.unwrap_or(0.0);
            sums[3] += losses.aug_reconstruction.unwrap_or(0.0);
            sums[4] += losses.total;
            steps += 1;
        }
        let val_loss = trainer.validation_loss(val)?;
        let rec = EpochRecord {
            reconstruction: sums[0] / steps as f64,
            codebook: sums[1] / steps as f64,
            ssl: sums[2] / steps as f64,
            aug_reconstruction: sums[3] / steps as f64,
            total: sums[4] / steps as f64,
            validation_reconstruction: val_loss,
        };
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e}\n",
            epoch,
            rec.reconstruction,
            rec.codebook,
            rec.ssl,
            rec.aug_reconstruction,
            rec.total,
            rec.validation_reconstruction,
            lr
        ));
        history.push(rec);

        meta.epoch = epoch + 1;
        save_stage1(&ckpt_dir, &trainer.varmap, &trainer.tokenizer, Some(&trainer.optimizer), &meta)?;
        if val_loss < best_val {
            best_val = val_loss;
            save_stage1(&stage1_best_dir(run_dir), &trainer.varmap, &trainer.tokenizer, None, &meta)?;
        }
    }

    std::fs::write(ckpt_dir.join("losses.csv"), &csv)?;
    let val_curve: Vec<f64> = history.iter().map(|r| r.validation_reconstruction).collect();
    std::fs::write(
        ckpt_dir.join("val_curve.csv"),
        val_curve
            .iter()
            .enumerate()
            .map(|(e, v)| format!("{e},{v:.6}"))
            .collect::<Vec<_>>()
            .join("\n"),
    )?;
    let curves: Vec<(String, Vec<f64>)> = vec![
        (
            "reconstruction".into(),
            history.iter().map(|r| r.reconstruction).collect(),
        ),
        ("codebook".into(), history.iter().map(|r| r.codebook).collect()),
        ("ssl".into(), history.iter().map(|r| r.ssl).collect()),
        (
            "aug_reconstruction".into(),
            history.iter().map(|r| r.aug_reconstruction).collect(),
        ),
        ("validation".into(), val_curve),
    ];
    plot_curves(&ckpt_dir.join("losses.svg"), "stage-1 losses", &curves)?;

    Ok(Stage1RunResult {
        checkpoint_dir: ckpt_dir,
        history,
        meta,
    })
}

/// Uniform label draw used by the stage-2 trainer; lives here to share the
/// rng plumbing conventions.
pub(crate) fn bernoulli(rng: &mut Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}
