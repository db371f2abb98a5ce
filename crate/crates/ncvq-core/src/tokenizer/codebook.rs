//! EMA-updated codebook with straight-through quantization.
//!
//! Embeddings are not optimizer parameters: they move only through the
//! exponential-moving-average update, so the first codebook-loss term carries
//! no parameter gradient (its value is still reported).

use std::collections::HashMap;

use candle_core::{DType, Tensor, Var, D};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub struct Codebook {
    embeddings: Var,
    ema_cluster_size: Var,
    ema_embed_sum: Var,
    pub decay: f64,
    pub commitment_beta: f64,
    pub smoothing_eps: f64,
    initialized: bool,
    k: usize,
    dim: usize,
}

/// One forward pass worth of latents.
///
/// `z_q_st` carries the straight-through contract: its backward treats
/// quantization as identity so gradients reach `z`. `z_q` is the raw
/// gathered codebook rows (no gradient path).
pub struct Quantized {
    pub z_q_st: Tensor,
    pub z_q: Tensor,
    /// (batch, t_lat) code indices.
    pub k: Tensor,
}

impl Codebook {
    pub fn new(
        k: usize,
        dim: usize,
        decay: f64,
        commitment_beta: f64,
        smoothing_eps: f64,
        dtype: DType,
        device: &candle_core::Device,
    ) -> Result<Self> {
        Ok(Self {
            embeddings: Var::zeros((k, dim), dtype, device)?,
            ema_cluster_size: Var::ones(k, dtype, device)?,
            ema_embed_sum: Var::zeros((k, dim), dtype, device)?,
            decay,
            commitment_beta,
            smoothing_eps,
            initialized: false,
            k,
            dim,
        })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn embeddings(&self) -> Tensor {
        self.embeddings.as_tensor().clone()
    }

    /// Seed the codebook with random rows of the first batch's encoder
    /// output (`z`: (B, D, T)). Draws with replacement when the batch holds
    /// fewer vectors than codes.
    pub fn init_from_batch(&mut self, z: &Tensor, rng: &mut Rng) -> Result<()> {
        let flat = flatten_latents(z)?.detach();
        let n = flat.dim(0)?;
        let indices: Vec<u32> = if n >= self.k {
            let mut pool: Vec<u32> = (0..n as u32).collect();
            // partial Fisher-Yates: the first k entries form the sample
            for i in 0..self.k {
                let j = rng.random_range(i..n);
                pool.swap(i, j);
            }
            pool[..self.k].to_vec()
        } else {
            (0..self.k).map(|_| rng.random_range(0..n) as u32).collect()
        };
        let idx = Tensor::from_vec(indices, self.k, flat.device())?;
        let rows = flat.index_select(&idx, 0)?;
        self.embeddings.set(&rows)?;
        self.ema_embed_sum.set(&rows)?;
        self.ema_cluster_size
            .set(&Tensor::ones(self.k, rows.dtype(), rows.device())?)?;
        self.initialized = true;
        Ok(())
    }

    /// Nearest-neighbor lookup for `z`: (B, D, T). Ties pick the lowest
    /// index.
    pub fn quantize(&self, z: &Tensor) -> Result<Quantized> {
        let (b, d, t) = z.dims3()?;
        if d != self.dim {
            return Err(Error::Shape(format!(
                "latent dim {d} != codebook dim {}",
                self.dim
            )));
        }
        let flat = flatten_latents(z)?; // (B*T, D)
        let flat_ng = flat.detach();
        let emb = self.embeddings.as_tensor();

        // ||z||^2 - 2 z.E^T + ||E||^2, argmin over codes
        let z_sq = flat_ng.sqr()?.sum_keepdim(1)?;
        let e_sq = emb.sqr()?.sum_keepdim(1)?.t()?;
        let cross = flat_ng.matmul(&emb.t()?)?;
        let dist = z_sq
            .broadcast_add(&e_sq)?
            .sub(&(cross * 2.0)?)?;
        let k = dist.argmin(D::Minus1)?; // (B*T,) u32, first min on ties

        let z_q_flat = emb.index_select(&k, 0)?; // (B*T, D)
        let z_q = z_q_flat
            .reshape((b, t, d))?
            .transpose(1, 2)?
            .contiguous()?; // (B, D, T)
        let z_q_st = (z.clone() + (z_q.clone() - z)?.detach())?;
        let k = k.reshape((b, t))?;
        Ok(Quantized { z_q_st, z_q, k })
    }

    /// One EMA step from the assignments of `quantize`.
    ///
    /// With decay 1 the codebook is frozen; with decay 0 a single step sets
    /// each assigned code to the mean of its vectors (up to smoothing).
    /// Unassigned codes keep their smoothed previous value.
    pub fn ema_update(&mut self, z: &Tensor, k: &Tensor) -> Result<()> {
        let flat = flatten_latents(z)?.detach();
        let n = flat.dim(0)?;
        let dtype = flat.dtype();

        let one_hot = candle_nn::encoding::one_hot::<f64>(
            k.flatten_all()?.to_dtype(DType::I64)?,
            self.k,
            1.0,
            0.0,
        )?
        .to_dtype(dtype)?; // (N, K)
        debug_assert_eq!(one_hot.dims(), &[n, self.k]);
        let counts = one_hot.sum(0)?; // (K,)
        let sums = one_hot.t()?.contiguous()?.matmul(&flat)?; // (K, D)

        let d = self.decay;
        let new_size = ((self.ema_cluster_size.as_tensor() * d)? + (counts * (1.0 - d))?)?;
        let new_sum = ((self.ema_embed_sum.as_tensor() * d)? + (sums * (1.0 - d))?)?;
        self.ema_cluster_size.set(&new_size)?;
        self.ema_embed_sum.set(&new_sum)?;

        // Laplace smoothing keeps division well-posed for empty codes.
        let total = new_size.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let eps = self.smoothing_eps;
        let smoothed = ((new_size + eps)? * (total / (total + self.k as f64 * eps)))?;
        let emb = new_sum.broadcast_div(&smoothed.unsqueeze(1)?)?;
        self.embeddings.set(&emb)?;
        Ok(())
    }

    /// Gather codebook rows for a grid of indices (B, T) -> (B, D, T).
    pub fn lookup(&self, k: &Tensor) -> Result<Tensor> {
        let (b, t) = k.dims2()?;
        let rows = self
            .embeddings
            .as_tensor()
            .index_select(&k.flatten_all()?, 0)?;
        Ok(rows.reshape((b, t, self.dim))?.transpose(1, 2)?.contiguous()?)
    }

    pub fn state_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        out.insert(
            "codebook/embeddings".to_string(),
            self.embeddings.as_tensor().clone(),
        );
        out.insert(
            "codebook/ema_cluster_size".to_string(),
            self.ema_cluster_size.as_tensor().clone(),
        );
        out.insert(
            "codebook/ema_embed_sum".to_string(),
            self.ema_embed_sum.as_tensor().clone(),
        );
        out
    }

    pub fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in [
            ("codebook/embeddings", &self.embeddings),
            ("codebook/ema_cluster_size", &self.ema_cluster_size),
            ("codebook/ema_embed_sum", &self.ema_embed_sum),
        ] {
            let t = state
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        self.initialized = true;
        Ok(())
    }
}

/// (B, D, T) -> (B*T, D)
fn flatten_latents(z: &Tensor) -> Result<Tensor> {
    let (b, d, t) = z.dims3()?;
    Ok(z.transpose(1, 2)?.reshape((b * t, d))?.contiguous()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use candle_core::Device;

    fn codebook_with(rows: &[[f32; 2]]) -> Codebook {
        let dev = Device::Cpu;
        let mut cb = Codebook::new(rows.len(), 2, 0.9, 1.0, 1e-5, DType::F32, &dev).unwrap();
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        let t = Tensor::from_vec(flat, (rows.len(), 2), &dev).unwrap();
        cb.embeddings.set(&t).unwrap();
        cb.ema_embed_sum.set(&t).unwrap();
        cb.initialized = true;
        cb
    }

    fn latents(vals: &[[f32; 2]]) -> Tensor {
        // one batch row, T = vals.len()
        let t = vals.len();
        let flat: Vec<f32> = vals.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (1, t, 2), &Device::Cpu)
            .unwrap()
            .transpose(1, 2)
            .unwrap()
            .contiguous()
            .unwrap()
    }

    #[test]
    fn nearest_neighbor_example() {
        let cb = codebook_with(&[[0.0, 0.0], [1.0, 1.0]]);
        let z = latents(&[[0.2, 0.1]]);
        let q = cb.quantize(&z).unwrap();
        assert_eq!(q.k.to_vec2::<u32>().unwrap(), vec![vec![0]]);
    }

    #[test]
    fn exact_codebook_row_maps_to_itself() {
        let cb = codebook_with(&[[0.5, -0.25], [2.0, 3.0]]);
        let z = latents(&[[2.0, 3.0]]);
        let q = cb.quantize(&z).unwrap();
        assert_eq!(q.k.to_vec2::<u32>().unwrap(), vec![vec![1]]);
        let zq = q.z_q.to_vec3::<f32>().unwrap();
        assert_eq!(zq[0][0][0], 2.0);
        assert_eq!(zq[0][1][0], 3.0);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let cb = codebook_with(&[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]);
        let z = latents(&[[1.0, 0.0], [0.0, 0.0]]);
        let q = cb.quantize(&z).unwrap();
        assert_eq!(q.k.to_vec2::<u32>().unwrap(), vec![vec![0, 0]]);
    }

    #[test]
    fn matches_brute_force_scan() {
        let dev = Device::Cpu;
        let mut rng = sub_rng(77, "bf");
        let k = 32;
        let d = 64;
        let mut cb = Codebook::new(k, d, 0.9, 1.0, 1e-5, DType::F32, &dev).unwrap();
        let emb: Vec<f32> = (0..k * d).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        let emb_t = Tensor::from_vec(emb.clone(), (k, d), &dev).unwrap();
        cb.embeddings.set(&emb_t).unwrap();
        cb.initialized = true;

        let n = 200;
        let zv: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        let z = Tensor::from_vec(zv.clone(), (1, n, d), &dev)
            .unwrap()
            .transpose(1, 2)
            .unwrap()
            .contiguous()
            .unwrap();
        let got = cb.quantize(&z).unwrap().k.to_vec2::<u32>().unwrap();

        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let mut dist = 0f64;
                for c in 0..d {
                    let diff = zv[i * d + c] as f64 - emb[j * d + c] as f64;
                    dist += diff * diff;
                }
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            assert_eq!(got[0][i], best as u32, "vector {i}");
        }
    }

    #[test]
    fn straight_through_passes_gradient_to_z() {
        let dev = Device::Cpu;
        let cb = codebook_with(&[[0.0, 0.0], [1.0, 1.0]]);
        let z = Var::from_tensor(&latents(&[[0.3, 0.4], [0.9, 0.8]])).unwrap();
        let q = cb.quantize(z.as_tensor()).unwrap();
        let loss = q.z_q_st.sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(z.as_tensor()).expect("grad through ST");
        // identical to the gradient of the same loss on an identity path:
        // d/dz sum(z_q_st^2) with z_q_st treated as z -> 2 * z_q
        let expected = (q.z_q.clone() * 2.0).unwrap();
        let diff = g
            .sub(&expected)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff < 1e-6, "straight-through gradient mismatch {diff}");
    }

    #[test]
    fn ema_decay_one_freezes_codebook() {
        let mut cb = codebook_with(&[[0.5, 0.5], [-0.5, -0.5]]);
        cb.decay = 1.0;
        let before = cb.embeddings().to_vec2::<f32>().unwrap();
        let z = latents(&[[3.0, 3.0], [4.0, 4.0]]);
        let q = cb.quantize(&z).unwrap();
        cb.ema_update(&z, &q.k).unwrap();
        let after = cb.embeddings().to_vec2::<f32>().unwrap();
        for (r1, r2) in before.iter().zip(&after) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ema_decay_zero_sets_assignment_mean() {
        let mut cb = codebook_with(&[[0.0, 0.0], [100.0, 100.0]]);
        cb.decay = 0.0;
        let z = latents(&[[1.0, 2.0], [3.0, 4.0]]);
        let q = cb.quantize(&z).unwrap();
        assert_eq!(q.k.to_vec2::<u32>().unwrap(), vec![vec![0, 0]]);
        cb.ema_update(&z, &q.k).unwrap();
        let emb = cb.embeddings().to_vec2::<f32>().unwrap();
        // mean of assigned vectors, up to Laplace smoothing
        assert!((emb[0][0] - 2.0).abs() < 1e-3, "{:?}", emb[0]);
        assert!((emb[0][1] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn repeated_updates_converge_to_assignment_means() {
        let mut cb = codebook_with(&[[0.0, 0.0], [10.0, 10.0]]);
        let z = latents(&[[1.0, 1.0], [9.0, 9.0]]);
        for _ in 0..200 {
            let q = cb.quantize(&z).unwrap();
            cb.ema_update(&z, &q.k).unwrap();
        }
        let emb = cb.embeddings().to_vec2::<f32>().unwrap();
        assert!((emb[0][0] - 1.0).abs() < 1e-2, "{:?}", emb);
        assert!((emb[1][0] - 9.0).abs() < 1e-2, "{:?}", emb);
    }

    #[test]
    fn init_from_batch_uses_encoder_rows() {
        let dev = Device::Cpu;
        let mut cb = Codebook::new(4, 2, 0.9, 1.0, 1e-5, DType::F32, &dev).unwrap();
        let z = latents(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]]);
        let mut rng = sub_rng(0, "init");
        cb.init_from_batch(&z, &mut rng).unwrap();
        assert!(cb.is_initialized());
        let emb = cb.embeddings().to_vec2::<f32>().unwrap();
        for row in &emb {
            assert!(row[0] >= 1.0 && row[0] <= 5.0);
            assert_eq!(row[0], row[1]);
        }
        // distinct rows when the pool is large enough
        let mut firsts: Vec<f32> = emb.iter().map(|r| r[0]).collect();
        firsts.sort_by(f32::total_cmp);
        firsts.dedup();
        assert_eq!(firsts.len(), 4);
    }

    #[test]
    fn state_round_trip() {
        let dev = Device::Cpu;
        let mut cb = codebook_with(&[[1.0, 2.0], [3.0, 4.0]]);
        let state = cb.state_tensors();
        let mut cb2 = Codebook::new(2, 2, 0.9, 1.0, 1e-5, DType::F32, &dev).unwrap();
        cb2.load_state(&state).unwrap();
        assert_eq!(
            cb.embeddings().to_vec2::<f32>().unwrap(),
            cb2.embeddings().to_vec2::<f32>().unwrap()
        );
        let _ = &mut cb;
    }
}
