//! Deterministic re-initialization of a VarMap.
//!
//! candle's builder-time initializers draw from a global RNG; for
//! reproducible experiments every parameter is re-drawn here from a named
//! ChaCha stream, visiting variables in sorted-name order.

use candle_core::Tensor;
use candle_nn::VarMap;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng::sub_rng;

/// Kaiming-style normal init for weights (std = sqrt(2 / fan_in)), zeros for
/// biases, identity-like values for norm scales. The scheme is keyed off
/// candle-nn's conventional parameter names.
pub fn deterministic_init(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<String> = data.keys().cloned().collect();
    names.sort();
    for name in names {
        let var = data.get(&name).expect("name from keys");
        let dims = var.dims().to_vec();
        let dtype = var.dtype();
        let device = var.device().clone();
        let n: usize = dims.iter().product();
        let mut rng = sub_rng(seed, &format!("init/{name}"));

        let values: Vec<f64> = if name.ends_with(".bias") || name.ends_with("bias") {
            vec![0.0; n]
        } else if name.contains("norm") && dims.len() == 1 {
            vec![1.0; n]
        } else if name.contains("pos_embed") || name.contains("embed") {
            // embedding tables and positional codes: small normal
            let normal = Normal::new(0.0, 0.02).expect("sigma");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        } else {
            let fan_in: usize = match dims.len() {
                // conv (out, in, k) or linear (out, in)
                3 => dims[1] * dims[2],
                2 => dims[1],
                _ => n.max(1),
            };
            let std = (2.0 / fan_in.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("sigma");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };

        let t = Tensor::from_vec(values, dims, &device)?.to_dtype(dtype)?;
        var.set(&t)?;
    }
    Ok(())
}

/// A dense matrix with nearly orthonormal rows, via Gram-Schmidt over
/// Gaussian draws. With more rows than columns, orthonormality holds within
/// consecutive blocks of `cols` rows (full mutual orthogonality is
/// impossible there).
pub fn near_orthogonal(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = sub_rng(seed, "near_orthogonal");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let mut block: Vec<Vec<f64>> = Vec::with_capacity(cols.min(rows));
    while out.len() < rows {
        if block.len() == cols {
            block.clear();
        }
        let mut v: Vec<f64> = (0..cols)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        for b in &block {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for vi in &mut v {
                *vi /= norm;
            }
            block.push(v.clone());
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarBuilder;

    #[test]
    fn reinit_is_reproducible() {
        let dev = Device::Cpu;
        let build = || -> (VarMap, Vec<f32>) {
            let varmap = VarMap::new();
            let vb = VarBuilder::from_varmap(&varmap, DType::F32, &dev);
            let _ = candle_nn::linear(4, 3, vb.pp("a")).unwrap();
            let _ = candle_nn::linear(3, 2, vb.pp("b")).unwrap();
            deterministic_init(&varmap, 123).unwrap();
            let data = varmap.data().lock().unwrap();
            let mut names: Vec<_> = data.keys().cloned().collect();
            names.sort();
            let flat: Vec<f32> = names
                .iter()
                .flat_map(|n| {
                    data[n]
                        .as_tensor()
                        .flatten_all()
                        .unwrap()
                        .to_vec1::<f32>()
                        .unwrap()
                })
                .collect();
            drop(data);
            (varmap, flat)
        };
        let (_m1, f1) = build();
        let (_m2, f2) = build();
        assert_eq!(f1, f2);
        assert!(f1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn near_orthogonal_rows_are_orthonormal() {
        let m = near_orthogonal(4, 16, 5);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn near_orthogonal_handles_more_rows_than_cols() {
        let m = near_orthogonal(7, 3, 2);
        assert_eq!(m.len(), 7);
        for row in &m {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        // rows within one block stay mutually orthogonal
        let dot: f64 = m[0].iter().zip(&m[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
    }
}
