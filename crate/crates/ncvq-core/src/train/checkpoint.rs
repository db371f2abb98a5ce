//! On-disk run artifacts. A checkpoint directory holds the parameter
//! safetensors, auxiliary state (codebook EMA, optimizer moments), and a
//! JSON meta record carrying the fully-inlined config and its hash.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::AdamW;
use crate::prior::MaskedPrior;
use crate::tokenizer::NcTokenizer;

pub const PARAMS_FILE: &str = "params.safetensors";
pub const STATE_FILE: &str = "state.safetensors";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_toml: String,
    pub config_hash: String,
    pub dataset: String,
    pub norm_stats: NormStats,
    pub series_len: usize,
    pub n_classes: usize,
    /// Epochs completed when this checkpoint was written.
    pub epoch: usize,
    /// For stage-2 checkpoints: hash of the stage-1 config they were trained
    /// against.
    pub stage1_hash: Option<String>,
}

impl RunMeta {
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&self.config_toml)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("meta serialize: {e}")))?;
        std::fs::write(dir.join(META_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("meta parse: {e}")))
    }
}

fn save_varmap_and_state(
    dir: &Path,
    varmap: &VarMap,
    state: HashMap<String, Tensor>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    varmap.save(dir.join(PARAMS_FILE))?;
    if state.is_empty() {
        let _ = std::fs::remove_file(dir.join(STATE_FILE));
    } else {
        candle_core::safetensors::save(&state, dir.join(STATE_FILE))?;
    }
    Ok(())
}

fn load_state_tensors(dir: &Path) -> Result<HashMap<String, Tensor>> {
    let path = dir.join(STATE_FILE);
    if !path.is_file() {
        return Ok(HashMap::new());
    }
    Ok(candle_core::safetensors::load(&path, &Device::Cpu)?)
}

pub fn save_stage1(
    dir: &Path,
    varmap: &VarMap,
    tokenizer: &NcTokenizer,
    optimizer: Option<&AdamW>,
    meta: &RunMeta,
) -> Result<()> {
    let mut state = tokenizer.codebook.state_tensors();
    if let Some(opt) = optimizer {
        state.extend(opt.state_tensors()?);
    }
    save_varmap_and_state(dir, varmap, state)?;
    meta.save(dir)
}

pub struct Stage1Artifacts {
    pub tokenizer: NcTokenizer,
    pub varmap: VarMap,
    pub meta: RunMeta,
    pub optimizer_state: HashMap<String, Tensor>,
}

pub fn load_stage1(dir: &Path) -> Result<Stage1Artifacts> {
    let meta = RunMeta::load(dir)?;
    let cfg = meta.config()?;
    let device = Device::Cpu;
    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let mut tokenizer = NcTokenizer::new(
        &cfg.tokenizer,
        cfg.stft,
        meta.series_len,
        DType::F32,
        &device,
        vb,
    )?;
    varmap.load(dir.join(PARAMS_FILE))?;
    let state = load_state_tensors(dir)?;
    tokenizer.codebook.load_state(&state)?;
    Ok(Stage1Artifacts {
        tokenizer,
        varmap,
        meta,
        optimizer_state: state,
    })
}

pub fn save_stage2(
    dir: &Path,
    varmap: &VarMap,
    prior: &MaskedPrior,
    optimizer: Option<&AdamW>,
    meta: &RunMeta,
) -> Result<()> {
    let mut state = crate::prior::state_tensors(prior);
    if let Some(opt) = optimizer {
        state.extend(opt.state_tensors()?);
    }
    save_varmap_and_state(dir, varmap, state)?;
    meta.save(dir)
}

pub struct Stage2Artifacts {
    pub prior: MaskedPrior,
    pub varmap: VarMap,
    pub meta: RunMeta,
    pub optimizer_state: HashMap<String, Tensor>,
}

pub fn load_stage2(dir: &Path, t_lat: usize) -> Result<Stage2Artifacts> {
    let meta = RunMeta::load(dir)?;
    let cfg = meta.config()?;
    let device = Device::Cpu;
    let mut varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let mut prior = MaskedPrior::new(
        &cfg.prior,
        cfg.tokenizer.codebook_size,
        t_lat,
        meta.n_classes,
        vb,
    )?;
    varmap.load(dir.join(PARAMS_FILE))?;
    let state = load_state_tensors(dir)?;
    crate::prior::load_state(&mut prior, &state);
    Ok(Stage2Artifacts {
        prior,
        varmap,
        meta,
        optimizer_state: state,
    })
}

/// Stage-2 artifacts must reference the stage-1 config hash they trained on.
pub fn check_stage_link(stage1: &RunMeta, stage2: &RunMeta) -> Result<()> {
    match &stage2.stage1_hash {
        Some(h) if *h == stage1.config_hash => Ok(()),
        Some(h) => Err(Error::HashMismatch {
            expected: stage1.config_hash.clone(),
            found: h.clone(),
        }),
        None => Err(Error::Checkpoint(
            "stage-2 checkpoint carries no stage-1 reference".into(),
        )),
    }
}

/// Run-directory layout.
pub fn stage1_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("stage1")
}

pub fn stage1_best_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("stage1").join("best")
}

pub fn stage2_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("stage2")
}

pub fn eval_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("eval")
}

pub fn samples_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("samples")
}
