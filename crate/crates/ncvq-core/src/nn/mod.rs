//! Shared neural-network plumbing on top of candle.

mod batch_norm;
pub mod conv;
pub mod init;
mod optim;

pub use batch_norm::BatchNorm1d;
pub use conv::{conv1d_composite, Conv1d};
pub use init::deterministic_init;
pub use optim::{AdamW, AdamWParams};

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Cosine-annealed learning rate at `step` of `total` (both 0-based steps,
/// total >= 1), from `lr0` down to `lr_min`.
pub fn cosine_lr(lr0: f64, lr_min: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let progress = step.min(total - 1) as f64 / (total - 1) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Nearest-neighbor x2 upsample along the last axis of a (B, C, T) tensor.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    Ok(x.unsqueeze(3)?
        .broadcast_as((b, c, t, 2))?
        .reshape((b, c, 2 * t))?
        .contiguous()?)
}

/// Extract a scalar loss value, rejecting non-finite results with a
/// diagnostic naming the part.
pub fn finite_scalar(t: &Tensor, part: &str, step: usize) -> Result<f64> {
    let v = t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            part: part.to_string(),
            step,
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cosine_lr_endpoints() {
        assert!((cosine_lr(1e-3, 0.0, 0, 100) - 1e-3).abs() < 1e-15);
        assert!(cosine_lr(1e-3, 0.0, 99, 100).abs() < 1e-12);
        let mid = cosine_lr(1.0, 0.0, 50, 101);
        assert!((mid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn upsample2_repeats_values() {
        let x = Tensor::new(&[[[1f32, 2., 3.]]], &Device::Cpu).unwrap();
        let y = upsample2(&x).unwrap();
        assert_eq!(
            y.to_vec3::<f32>().unwrap(),
            vec![vec![vec![1., 1., 2., 2., 3., 3.]]]
        );
    }

    #[test]
    fn finite_scalar_rejects_nan() {
        let t = Tensor::new(f32::NAN, &Device::Cpu).unwrap();
        assert!(finite_scalar(&t, "loss", 3).is_err());
        let t = Tensor::new(1.5f32, &Device::Cpu).unwrap();
        assert_eq!(finite_scalar(&t, "loss", 3).unwrap(), 1.5);
    }
}
