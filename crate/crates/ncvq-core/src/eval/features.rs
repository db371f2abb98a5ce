//! Dataset-specific feature extractor behind FID/IS: a fully-convolutional
//! classifier trained supervised on the train split. Features are the
//! penultimate global-average-pooled activations.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Linear, VarBuilder, VarMap};

use crate::config::EvalConfig;
use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, deterministic_init, AdamW, AdamWParams, BatchNorm1d, Conv1d};
use crate::rng::{fnv1a64, sub_rng};

pub struct FeatureExtractor {
    convs: Vec<Conv1d>,
    bns: Vec<BatchNorm1d>,
    head: Linear,
    varmap: VarMap,
    feature_dim: usize,
    n_classes: usize,
}

impl FeatureExtractor {
    pub fn new(channels: [usize; 3], n_classes: usize, device: &Device) -> Result<Self> {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
        let kernels = [8usize, 5, 3];
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut in_ch = 1usize;
        for (i, (&out_ch, &k)) in channels.iter().zip(&kernels).enumerate() {
            convs.push(Conv1d::new(in_ch, out_ch, k, 1, k / 2, vb.pp(format!("conv{i}")))?);
            bns.push(BatchNorm1d::new(out_ch, true, vb.pp(format!("bn{i}")))?);
            in_ch = out_ch;
        }
        let head = candle_nn::linear(in_ch, n_classes, vb.pp("head"))?;
        Ok(Self {
            convs,
            bns,
            head,
            varmap,
            feature_dim: in_ch,
            n_classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn backbone(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.unsqueeze(1)?; // (B, 1, L)
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = bn.forward(&conv.forward(&h)?, train)?.relu()?;
        }
        Ok(h.mean(2)?) // global average pool -> (B, C)
    }

    /// Penultimate pooled activations, eval mode.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.backbone(x, false)
    }

    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.head.forward(&self.backbone(x, train)?)?)
    }

    /// Per-sample class posteriors in eval mode, as f64 rows.
    pub fn class_probs(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let probs = candle_nn::ops::softmax(&self.logits(x, false)?, 1)?;
        Ok(probs.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    pub fn accuracy(&self, ds: &TimeSeriesDataset, batch_size: usize) -> Result<f64> {
        let device = Device::Cpu;
        let mut correct = 0usize;
        for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
            let x = rows_tensor(ds, chunk, &device)?;
            let preds = self.logits(&x, false)?.argmax(1)?.to_vec1::<u32>()?;
            for (&i, &p) in chunk.iter().zip(&preds) {
                if p as usize == ds.labels[i] {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / ds.len() as f64)
    }

    fn all_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        let data = self.varmap.data().lock().expect("varmap lock");
        for (name, var) in data.iter() {
            out.insert(name.clone(), var.as_tensor().clone());
        }
        drop(data);
        for (i, bn) in self.bns.iter().enumerate() {
            let (mean, var) = bn.state();
            out.insert(format!("bn_state{i}/mean"), mean);
            out.insert(format!("bn_state{i}/var"), var);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self.all_tensors();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        let data = self.varmap.data().lock().expect("varmap lock");
        for (name, var) in data.iter() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("extractor missing {name}")))?;
            var.set(t)?;
        }
        drop(data);
        for (i, bn) in self.bns.iter().enumerate() {
            let mean = tensors
                .get(&format!("bn_state{i}/mean"))
                .ok_or_else(|| Error::Checkpoint("extractor missing bn state".into()))?;
            let var = tensors
                .get(&format!("bn_state{i}/var"))
                .ok_or_else(|| Error::Checkpoint("extractor missing bn state".into()))?;
            bn.load_state(mean, var)?;
        }
        Ok(())
    }
}

pub fn rows_tensor(ds: &TimeSeriesDataset, indices: &[usize], device: &Device) -> Result<Tensor> {
    let l = ds.series_len();
    let mut flat = Vec::with_capacity(indices.len() * l);
    for &i in indices {
        flat.extend_from_slice(&ds.series[i]);
    }
    Ok(Tensor::from_vec(flat, (indices.len(), l), device)?)
}

/// Cache key for a trained extractor.
pub fn extractor_cache_key(dataset: &str, cfg: &EvalConfig, seed: u64) -> String {
    let desc = format!(
        "{dataset}|{:?}|{}|{}|{}|{seed}",
        cfg.fcn_channels, cfg.fcn_epochs, cfg.fcn_batch_size, cfg.fcn_lr
    );
    format!("{:016x}", fnv1a64(desc.as_bytes()))
}

pub struct TrainedExtractor {
    pub extractor: FeatureExtractor,
    pub from_cache: bool,
    pub cache_key: String,
}

/// Train the extractor, or load it when a checkpoint with the same cache key
/// exists. Divergence retries once at a tenth of the learning rate.
pub fn train_or_load_extractor(
    cache_dir: &Path,
    train_ds: &TimeSeriesDataset,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<TrainedExtractor> {
    let n_classes = train_ds.n_classes();
    let key = extractor_cache_key(&train_ds.name, cfg, seed);
    let path = cache_dir.join(format!("fcn-{key}.safetensors"));
    let mut extractor = FeatureExtractor::new(cfg.fcn_channels, n_classes, &Device::Cpu)?;
    if path.is_file() {
        extractor.load(&path)?;
        return Ok(TrainedExtractor {
            extractor,
            from_cache: true,
            cache_key: key,
        });
    }

    match train_extractor(&mut extractor, train_ds, cfg, seed, cfg.fcn_lr) {
        Ok(()) => {}
        Err(Error::NonFinite { .. }) => {
            extractor = FeatureExtractor::new(cfg.fcn_channels, n_classes, &Device::Cpu)?;
            train_extractor(&mut extractor, train_ds, cfg, seed, cfg.fcn_lr / 10.0)?;
        }
        Err(e) => return Err(e),
    }

    std::fs::create_dir_all(cache_dir)?;
    extractor.save(&path)?;
    Ok(TrainedExtractor {
        extractor,
        from_cache: false,
        cache_key: key,
    })
}

fn train_extractor(
    extractor: &mut FeatureExtractor,
    train_ds: &TimeSeriesDataset,
    cfg: &EvalConfig,
    seed: u64,
    lr: f64,
) -> Result<()> {
    deterministic_init(&extractor.varmap, seed ^ 0xfc9)?;
    let device = Device::Cpu;
    let mut opt = AdamW::from_varmap(
        &extractor.varmap,
        &[],
        AdamWParams {
            lr,
            weight_decay: 1e-5,
            ..Default::default()
        },
    )?;
    let labels: Vec<u32> = train_ds.labels.iter().map(|&l| l as u32).collect();
    for epoch in 0..cfg.fcn_epochs {
        opt.set_learning_rate(cosine_lr(lr, lr * 1e-2, epoch, cfg.fcn_epochs));
        let mut rng = sub_rng(seed, &format!("fcn_shuffle/{epoch}"));
        for batch in crate::data::epoch_batches(train_ds.len(), cfg.fcn_batch_size, &mut rng) {
            let x = rows_tensor(train_ds, &batch, &device)?;
            let y: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
            let y = Tensor::from_vec(y, (batch.len(),), &device)?;
            let logits = extractor.logits(&x, true)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            crate::nn::finite_scalar(&loss, "feature extractor loss", epoch)?;
            opt.backward_step(&loss)?;
        }
    }
    Ok(())
}
