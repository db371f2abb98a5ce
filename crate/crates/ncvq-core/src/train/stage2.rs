//! Stage-2 training: masked-token prediction over the frozen tokenizer's
//! index grids, with codebook-initialized token embeddings.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::Rng as _;

use crate::config::ExperimentConfig;
use crate::data::{epoch_batches, load_ucr, normalize, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::rows_tensor;
use crate::nn::{cosine_lr, deterministic_init, finite_scalar, AdamW, AdamWParams};
use crate::prior::{apply_mask, masked_cross_entropy, sample_mask_positions, MaskedPrior};
use crate::rng::sub_rng;
use crate::tokenizer::NcTokenizer;

use super::checkpoint::{load_stage1, save_stage2, stage1_dir, stage2_dir, RunMeta};
use super::plot::plot_curves;
use super::stage1::bernoulli;

pub struct Stage2Trainer {
    pub prior: MaskedPrior,
    pub varmap: VarMap,
    pub optimizer: AdamW,
    step_idx: usize,
}

impl Stage2Trainer {
    pub fn new(
        cfg: &ExperimentConfig,
        tokenizer: &NcTokenizer,
        n_classes: usize,
    ) -> Result<Self> {
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let mut prior = MaskedPrior::new(
            &cfg.prior,
            cfg.tokenizer.codebook_size,
            tokenizer.t_lat(),
            n_classes,
            vb,
        )?;
        deterministic_init(&varmap, cfg.seed ^ 0x5742)?;
        if cfg.prior.embedding_transfer {
            prior.init_token_embeddings(&tokenizer.codebook.embeddings(), cfg.seed)?;
        }
        let exclude: &[&str] = if cfg.prior.freeze_token_embeddings {
            &["token_embed"]
        } else {
            &[]
        };
        let optimizer = AdamW::from_varmap(
            &varmap,
            exclude,
            AdamWParams {
                lr: cfg.stage2.lr,
                weight_decay: cfg.stage2.weight_decay,
                ..Default::default()
            },
        )?;
        Ok(Self {
            prior,
            varmap,
            optimizer,
            step_idx: 0,
        })
    }

    /// One masked-modeling step over a batch of fully-known grids.
    ///
    /// Per sample: draw r ~ U(0,1), mask ceil(gamma(r) * T) positions, and
    /// take cross-entropy on the masked positions only. A fraction of labels
    /// is replaced by the unconditional token so it learns the marginal.
    pub fn step(
        &mut self,
        grids: &[Vec<u32>],
        labels: &[u32],
        label_dropout: f64,
        rng: &mut crate::rng::Rng,
    ) -> Result<f64> {
        self.step_idx += 1;
        let device = Device::Cpu;
        let b = grids.len();
        let t_lat = self.prior.t_lat();

        let mut masked_grids = Vec::with_capacity(b * t_lat);
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(b);
        let mut used_labels: Vec<u32> = Vec::with_capacity(b);
        for (grid, &label) in grids.iter().zip(labels) {
            let r: f64 = rng.random();
            let mask = sample_mask_positions(t_lat, r, rng)?;
            masked_grids.extend(apply_mask(grid, &mask, self.prior.mask_token()));
            masks.push(mask);
            used_labels.push(if label_dropout > 0.0 && bernoulli(rng, label_dropout) {
                self.prior.uncond_class()
            } else {
                label
            });
        }
        let tokens = Tensor::from_vec(masked_grids, (b, t_lat), &device)?;
        let targets = Tensor::from_vec(
            grids.iter().flatten().copied().collect::<Vec<u32>>(),
            (b, t_lat),
            &device,
        )?;
        let label_t = Tensor::from_vec(used_labels, (b,), &device)?;
        let logits = self.prior.logits(&tokens, Some(&label_t))?;
        let loss = masked_cross_entropy(&logits, &targets, &masks)?;
        let value = finite_scalar(&loss, "stage-2 cross-entropy", self.step_idx)?;
        self.optimizer.backward_step(&loss)?;
        Ok(value)
    }
}

/// Tokenize a whole split into index grids (no gradients).
pub fn tokenize_split(
    tokenizer: &NcTokenizer,
    ds: &TimeSeriesDataset,
) -> Result<(Vec<Vec<u32>>, Vec<u32>)> {
    let device = Device::Cpu;
    let mut grids = Vec::with_capacity(ds.len());
    for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(256) {
        let x = rows_tensor(ds, chunk, &device)?;
        let q = tokenizer.tokenize(&x)?;
        grids.extend(q.k.to_vec2::<u32>()?);
    }
    let labels: Vec<u32> = ds.labels.iter().map(|&l| l as u32).collect();
    Ok((grids, labels))
}

pub struct Stage2RunResult {
    pub checkpoint_dir: std::path::PathBuf,
    pub ce_curve: Vec<f64>,
    pub meta: RunMeta,
}

/// Full stage-2 job against the stage-1 checkpoint in the same run dir.
pub fn run_stage2(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Stage2RunResult> {
    cfg.validate()?;
    let s1 = load_stage1(&stage1_dir(run_dir))?;
    if s1.meta.config_hash != cfg.hash() {
        return Err(Error::HashMismatch {
            expected: cfg.hash(),
            found: s1.meta.config_hash.clone(),
        });
    }
    let (train_raw, test_raw) = load_ucr(&cfg.resolved_data_root(), &cfg.dataset)?;
    let (train, _test) = normalize(&train_raw, &test_raw)?;
    run_stage2_with_data(cfg, run_dir, &s1, &train)
}

pub fn run_stage2_with_data(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    s1: &super::checkpoint::Stage1Artifacts,
    train: &TimeSeriesDataset,
) -> Result<Stage2RunResult> {
    let ckpt_dir = stage2_dir(run_dir);
    std::fs::create_dir_all(&ckpt_dir)?;

    let (grids, labels) = tokenize_split(&s1.tokenizer, train)?;
    let mut trainer = Stage2Trainer::new(cfg, &s1.tokenizer, s1.meta.n_classes)?;

    let mut meta = RunMeta {
        stage1_hash: Some(s1.meta.config_hash.clone()),
        epoch: 0,
        ..s1.meta.clone()
    };

    let n = grids.len();
    let mut ce_curve = Vec::with_capacity(cfg.stage2.epochs);
    let mut csv = String::from("epoch,cross_entropy,lr\n");
    for epoch in 0..cfg.stage2.epochs {
        let lr = cosine_lr(cfg.stage2.lr, cfg.stage2.lr_min, epoch, cfg.stage2.epochs);
        trainer.optimizer.set_learning_rate(lr);
        let mut shuffle_rng = sub_rng(cfg.seed, &format!("s2_shuffle/{epoch}"));
        let mut mask_rng = sub_rng(cfg.seed, &format!("s2_mask/{epoch}"));
        let mut sum = 0.0f64;
        let mut steps = 0usize;
        for batch in epoch_batches(n, cfg.stage2.batch_size, &mut shuffle_rng) {
            let batch_grids: Vec<Vec<u32>> = batch.iter().map(|&i| grids[i].clone()).collect();
            let batch_labels: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
            sum += trainer.step(
                &batch_grids,
                &batch_labels,
                cfg.prior.label_dropout,
                &mut mask_rng,
            )?;
            steps += 1;
        }
        let ce = sum / steps as f64;
        ce_curve.push(ce);
        csv.push_str(&format!("{epoch},{ce:.6},{lr:.6e}\n"));
        meta.epoch = epoch + 1;
        save_stage2(&ckpt_dir, &trainer.varmap, &trainer.prior, Some(&trainer.optimizer), &meta)?;
    }

    std::fs::write(ckpt_dir.join("cross_entropy.csv"), &csv)?;
    plot_curves(
        &ckpt_dir.join("cross_entropy.svg"),
        "stage-2 masked cross-entropy",
        &[("cross_entropy".into(), ce_curve.clone())],
    )?;

    Ok(Stage2RunResult {
        checkpoint_dir: ckpt_dir,
        ce_curve,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SslMethod;
    use crate::train::stage1::Stage1Trainer;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_scale("toy");
        cfg.ssl.method = SslMethod::None;
        cfg.tokenizer.hidden = 16;
        cfg.tokenizer.n_res_blocks = 1;
        cfg.prior.hidden_dim = 32;
        cfg.prior.layers = 1;
        cfg.prior.heads = 4;
        cfg.seed = 4;
        cfg
    }

    fn trained_tokenizer(cfg: &ExperimentConfig, l: usize) -> NcTokenizer {
        let mut t = Stage1Trainer::new(cfg, l).unwrap();
        let mut rng = sub_rng(1, "s2t");
        let flat: Vec<f32> = (0..8 * l).map(|_| rng.random::<f32>() - 0.5).collect();
        let x = Tensor::from_vec(flat, (8, l), &Device::Cpu).unwrap();
        let mut aug = sub_rng(2, "aug");
        for _ in 0..3 {
            t.step(&x, &mut aug).unwrap();
        }
        t.tokenizer
    }

    #[test]
    fn embedding_transfer_applied_and_ablatable() {
        let cfg = small_cfg();
        let tok = trained_tokenizer(&cfg, 32);
        let trainer = Stage2Trainer::new(&cfg, &tok, 2).unwrap();
        let lift = trainer.prior.lift().expect("transfer on by default");
        let expected = tok.codebook.embeddings().matmul(lift).unwrap();
        let rows = trainer
            .prior
            .token_embeddings()
            .narrow(0, 0, cfg.tokenizer.codebook_size)
            .unwrap();
        let d = rows
            .sub(&expected)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(d < 1e-6);

        let mut ablated = cfg.clone();
        ablated.prior.embedding_transfer = false;
        let trainer2 = Stage2Trainer::new(&ablated, &tok, 2).unwrap();
        assert!(trainer2.prior.lift().is_none());
        let rows2 = trainer2
            .prior
            .token_embeddings()
            .narrow(0, 0, cfg.tokenizer.codebook_size)
            .unwrap();
        let d2 = rows2
            .sub(&expected)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(d2 > 1e-3, "ablation must leave rows random");
    }

    #[test]
    fn training_reduces_cross_entropy() {
        let cfg = small_cfg();
        let tok = trained_tokenizer(&cfg, 32);
        let mut trainer = Stage2Trainer::new(&cfg, &tok, 2).unwrap();
        // a deliberately predictable grid distribution
        let grids: Vec<Vec<u32>> = (0..16)
            .map(|i| (0..tok.t_lat()).map(|t| ((i + t) % 4) as u32).collect())
            .collect();
        let labels: Vec<u32> = (0..16).map(|i| (i % 2) as u32).collect();
        let mut rng = sub_rng(7, "mask");
        let first = trainer.step(&grids, &labels, 0.1, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..40 {
            last = trainer.step(&grids, &labels, 0.1, &mut rng).unwrap();
        }
        assert!(last < first, "CE did not improve: {first} -> {last}");
    }
}
