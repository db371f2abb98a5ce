//! Measurement suite: probe classifiers on frozen tokens, Inception Score,
//! Fréchet distance on learned features, and 2-D projections.

mod embed;
mod features;
mod fid;
mod inception;
mod probes;

pub use embed::{embed_2d, pca_2d, tsne_2d, EmbedMethod};
pub use features::{
    extractor_cache_key, rows_tensor, train_or_load_extractor, FeatureExtractor, TrainedExtractor,
};
pub use fid::fid;
pub use inception::inception_score;
pub use probes::{probe_accuracy, LinearSvm, ProbeKind};

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::tokenizer::NcTokenizer;

/// Frozen z_q per sample: flattened over (T_lat x D), or mean-pooled to D
/// when `pooled` is set.
pub fn token_representations(
    tokenizer: &NcTokenizer,
    ds: &TimeSeriesDataset,
    pooled: bool,
) -> Result<Vec<Vec<f32>>> {
    let device = Device::Cpu;
    let mut out = Vec::with_capacity(ds.len());
    for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(256) {
        let x = rows_tensor(ds, chunk, &device)?;
        let q = tokenizer.tokenize(&x)?;
        let z_q = if pooled { q.z_q.mean(2)? } else { q.z_q.flatten_from(1)? };
        out.extend(z_q.to_vec2::<f32>()?);
    }
    Ok(out)
}

/// One run's metric record. Serialized as a flat key-value text block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub knn_accuracy: f64,
    pub svm_accuracy: f64,
    pub fid: f64,
    pub fid_runs: Vec<f64>,
    pub is_score: f64,
    pub is_runs: Vec<f64>,
    pub fcn_test_accuracy: f64,
    pub run_seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.fid < 0.0 {
            return Err(Error::Shape(format!("negative FID {}", self.fid)));
        }
        if self.is_score < 1.0 - 1e-9 || self.is_score > n_classes as f64 + 1e-9 {
            return Err(Error::Shape(format!(
                "IS {} outside [1, {n_classes}]",
                self.is_score
            )));
        }
        for acc in [self.knn_accuracy, self.svm_accuracy] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Shape(format!("accuracy {acc} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("dataset: {}\n", self.dataset));
        s.push_str(&format!("config_hash: {}\n", self.config_hash));
        s.push_str(&format!("run_seed: {}\n", self.run_seed));
        s.push_str(&format!("knn_accuracy: {:.6}\n", self.knn_accuracy));
        s.push_str(&format!("svm_accuracy: {:.6}\n", self.svm_accuracy));
        s.push_str(&format!("fid: {:.6}\n", self.fid));
        for (i, v) in self.fid_runs.iter().enumerate() {
            s.push_str(&format!("fid_run_{i}: {v:.6}\n"));
        }
        s.push_str(&format!("is_score: {:.6}\n", self.is_score));
        for (i, v) in self.is_runs.iter().enumerate() {
            s.push_str(&format!("is_run_{i}: {v:.6}\n"));
        }
        s.push_str(&format!("fcn_test_accuracy: {:.6}\n", self.fcn_test_accuracy));
        s
    }

    pub fn parse_kv_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once(':') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("metrics record missing {k}")))
        };
        let getf = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad number for {k}")))
        };
        let series = |prefix: &str| -> Vec<f64> {
            let mut out = Vec::new();
            let mut i = 0;
            while let Some(v) = map.get(&format!("{prefix}_{i}")) {
                if let Ok(f) = v.parse() {
                    out.push(f);
                }
                i += 1;
            }
            out
        };
        Ok(Self {
            dataset: get("dataset")?,
            knn_accuracy: getf("knn_accuracy")?,
            svm_accuracy: getf("svm_accuracy")?,
            fid: getf("fid")?,
            fid_runs: series("fid_run"),
            is_score: getf("is_score")?,
            is_runs: series("is_run"),
            fcn_test_accuracy: getf("fcn_test_accuracy").unwrap_or(f64::NAN),
            run_seed: get("run_seed")?
                .parse()
                .map_err(|_| Error::Config("bad run_seed".into()))?,
            config_hash: get("config_hash")?,
        })
    }
}
