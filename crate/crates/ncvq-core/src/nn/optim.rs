//! Adam with decoupled weight decay, keyed by parameter name so moment
//! state rides along in checkpoints and resumed runs continue exactly.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::VarMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Var,
    v: Var,
}

pub struct AdamW {
    slots: Vec<Slot>,
    step_t: usize,
    params: AdamWParams,
}

impl AdamW {
    pub fn new(named_vars: Vec<(String, Var)>, params: AdamWParams) -> Result<Self> {
        let mut slots = Vec::with_capacity(named_vars.len());
        let mut named_vars = named_vars;
        named_vars.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, var) in named_vars {
            let m = Var::zeros(var.shape(), var.dtype(), var.device())?;
            let v = Var::zeros(var.shape(), var.dtype(), var.device())?;
            slots.push(Slot { name, var, m, v });
        }
        Ok(Self {
            slots,
            step_t: 0,
            params,
        })
    }

    /// All trainable variables of a VarMap, minus any whose name starts with
    /// one of the excluded prefixes (EMA-updated or frozen parameters).
    pub fn from_varmap(
        varmap: &VarMap,
        exclude_prefixes: &[&str],
        params: AdamWParams,
    ) -> Result<Self> {
        let data = varmap.data().lock().expect("varmap lock");
        let named = data
            .iter()
            .filter(|(name, _)| !exclude_prefixes.iter().any(|p| name.starts_with(p)))
            .map(|(name, var)| (name.clone(), var.clone()))
            .collect();
        drop(data);
        Self::new(named, params)
    }

    pub fn learning_rate(&self) -> f64 {
        self.params.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.params.lr = lr;
    }

    pub fn step_count(&self) -> usize {
        self.step_t
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step_t += 1;
        let p = self.params;
        let bias1 = 1.0 - p.beta1.powi(self.step_t as i32);
        let bias2 = 1.0 - p.beta2.powi(self.step_t as i32);
        for slot in &self.slots {
            let Some(grad) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            let m = ((slot.m.as_tensor() * p.beta1)? + (grad * (1.0 - p.beta1))?)?;
            let v = ((slot.v.as_tensor() * p.beta2)? + (grad.sqr()? * (1.0 - p.beta2))?)?;
            slot.m.set(&m)?;
            slot.v.set(&v)?;
            let m_hat = (m / bias1)?;
            let v_hat = (v / bias2)?;
            let update = (m_hat.div(&(v_hat.sqrt()? + p.eps)?)? * p.lr)?;
            let decayed = (slot.var.as_tensor() * (1.0 - p.lr * p.weight_decay))?;
            slot.var.set(&decayed.sub(&update)?)?;
        }
        Ok(())
    }

    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let grads = loss.backward()?;
        self.step(&grads)
    }

    /// Moment tensors plus step counter for checkpointing.
    pub fn state_tensors(&self) -> Result<HashMap<String, Tensor>> {
        let mut out = HashMap::new();
        for slot in &self.slots {
            out.insert(format!("opt/{}/m", slot.name), slot.m.as_tensor().clone());
            out.insert(format!("opt/{}/v", slot.name), slot.v.as_tensor().clone());
        }
        let dev = candle_core::Device::Cpu;
        out.insert(
            "opt/step".to_string(),
            Tensor::new(self.step_t as f64, &dev)?,
        );
        Ok(out)
    }

    pub fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        for slot in &self.slots {
            let m = state
                .get(&format!("opt/{}/m", slot.name))
                .ok_or_else(|| Error::Checkpoint(format!("missing moment for {}", slot.name)))?;
            let v = state
                .get(&format!("opt/{}/v", slot.name))
                .ok_or_else(|| Error::Checkpoint(format!("missing moment for {}", slot.name)))?;
            slot.m.set(&m.to_dtype(slot.m.dtype())?)?;
            slot.v.set(&v.to_dtype(slot.v.dtype())?)?;
        }
        let step = state
            .get("opt/step")
            .ok_or_else(|| Error::Checkpoint("missing optimizer step".into()))?;
        self.step_t = step.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()? as usize;
        Ok(())
    }
}
