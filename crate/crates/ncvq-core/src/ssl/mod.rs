//! Non-contrastive objectives over the two branches' pooled latents.

mod barlow;
mod iternorm;
mod projector;
mod vibcreg;

pub use barlow::{barlow_twins_loss, barlow_twins_reference};
pub use iternorm::iterative_whitening;
pub use projector::Projector;
pub use vibcreg::{vibcreg_loss, vibcreg_reference, VibcregWeights};

use candle_core::Tensor;

use crate::error::Result;

/// Mean-pool latents (B, D, T) over time and run the shared projector.
pub fn pool_and_project(latents: &Tensor, projector: &Projector, train: bool) -> Result<Tensor> {
    let pooled = latents.mean(2)?;
    projector.forward(&pooled, train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::deterministic_init;
    use candle_core::{DType, Device};
    use candle_nn::{VarBuilder, VarMap};

    #[test]
    fn pooling_of_constant_latents_is_that_constant() {
        let dev = Device::Cpu;
        let z = Tensor::full(0.75f32, (2, 3, 5), &dev).unwrap();
        let pooled = z.mean(2).unwrap().to_vec2::<f32>().unwrap();
        for row in pooled {
            for v in row {
                assert!((v - 0.75).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn projected_shape_and_eval_determinism() {
        let dev = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &dev);
        let proj = Projector::new(8, 4096, vb).unwrap();
        deterministic_init(&varmap, 3).unwrap();
        let z = Tensor::randn(0f32, 1f32, (5, 8, 7), &dev).unwrap();
        let e1 = pool_and_project(&z, &proj, false).unwrap();
        assert_eq!(e1.dims(), &[5, 4096]);
        let e2 = pool_and_project(&z, &proj, false).unwrap();
        let d = e1.sub(&e2).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(d.to_scalar::<f32>().unwrap(), 0.0);
    }
}
