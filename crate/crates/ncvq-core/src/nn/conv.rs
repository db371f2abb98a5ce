//! 1-D convolution as an im2col + matmul composite.
//!
//! candle 0.11's fused conv1d kernel miscomputes when handed the
//! non-contiguous transposed tensors its own backward pass produces, which
//! silently corrupts every convolution weight gradient. This layer expresses
//! the convolution through pad / narrow / stack / matmul only, whose
//! backward passes are exact, so training paths avoid the fused op entirely.

use candle_core::{Tensor, D};
use candle_nn::VarBuilder;

use crate::error::{Error, Result};

/// Functional form; `weight`: (C_out, C_in, k).
pub fn conv1d_composite(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, c_in, t) = x.dims3()?;
    let (c_out, c_in_w, k) = weight.dims3()?;
    if c_in != c_in_w {
        return Err(Error::Shape(format!(
            "conv input has {c_in} channels, weight expects {c_in_w}"
        )));
    }
    let xp = if padding > 0 {
        x.pad_with_zeros(D::Minus1, padding, padding)?
    } else {
        x.clone()
    };
    let tp = t + 2 * padding;
    if tp < k {
        return Err(Error::Shape(format!(
            "conv input length {tp} shorter than kernel {k}"
        )));
    }
    let span = tp - k + 1;
    let t_out = (tp - k) / stride + 1;

    // (B, C_in, k, span): sliding windows, one slice per kernel offset
    let slices: Vec<Tensor> = (0..k)
        .map(|j| xp.narrow(D::Minus1, j, span))
        .collect::<candle_core::Result<_>>()?;
    let mut cols = Tensor::stack(&slices, 2)?;
    if stride > 1 {
        let idx: Vec<u32> = (0..t_out).map(|i| (i * stride) as u32).collect();
        let idx = Tensor::from_vec(idx, t_out, x.device())?;
        cols = cols.contiguous()?.index_select(&idx, 3)?;
    }

    // (C_in * k, B * T_out) against (C_out, C_in * k)
    let cols = cols
        .reshape((b, c_in * k, t_out))?
        .transpose(0, 1)?
        .reshape((c_in * k, b * t_out))?;
    let w2 = weight.reshape((c_out, c_in * k))?;
    let out = w2.matmul(&cols)?; // (C_out, B * T_out)
    let out = out
        .reshape((c_out, b, t_out))?
        .transpose(0, 1)?
        .contiguous()?;
    match bias {
        Some(bias) => Ok(out.broadcast_add(&bias.reshape((1, c_out, 1))?)?),
        None => Ok(out),
    }
}

pub struct Conv1d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        let weight = vb.get_with_hints(
            (out_channels, in_channels, kernel),
            "weight",
            candle_nn::Init::Uniform {
                lo: -bound,
                up: bound,
            },
        )?;
        let bias = vb.get_with_hints(out_channels, "bias", candle_nn::Init::Const(0.0))?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv1d_composite(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn naive(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        (n, cin, t): (usize, usize, usize),
        (cout, k, padding, stride): (usize, usize, usize, usize),
    ) -> Vec<f64> {
        let t_out = (t + 2 * padding - k) / stride + 1;
        let mut out = vec![0.0; n * cout * t_out];
        for b in 0..n {
            for o in 0..cout {
                for ot in 0..t_out {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for j in 0..k {
                            let src = (ot * stride + j) as isize - padding as isize;
                            if src >= 0 && (src as usize) < t {
                                acc += x[b * cin * t + i * t + src as usize]
                                    * w[o * cin * k + i * k + j];
                            }
                        }
                    }
                    out[b * cout * t_out + o * t_out + ot] = acc;
                }
            }
        }
        out
    }

    fn pseudo(seed: u64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| (((i as u64 * 31 + seed * 977) % 101) as f64) / 101.0 - 0.5)
            .collect()
    }

    #[test]
    fn forward_matches_naive_loop() {
        let dev = Device::Cpu;
        for &(cin, t, cout, k, padding, stride) in &[
            (2usize, 8usize, 3usize, 3usize, 1usize, 1usize),
            (2, 8, 3, 3, 0, 1),
            (1, 10, 2, 5, 2, 1),
            (2, 8, 3, 4, 1, 2),
            (3, 16, 4, 1, 0, 1),
            (1, 12, 2, 8, 4, 1),
        ] {
            let n = 2;
            let x0 = pseudo(1, n * cin * t);
            let w0 = pseudo(2, cout * cin * k);
            let b0 = pseudo(3, cout);
            let x = Tensor::from_vec(x0.clone(), (n, cin, t), &dev).unwrap();
            let w = Tensor::from_vec(w0.clone(), (cout, cin, k), &dev).unwrap();
            let bias = Tensor::from_vec(b0.clone(), (cout,), &dev).unwrap();
            let y = conv1d_composite(&x, &w, Some(&bias), stride, padding).unwrap();
            let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let want = naive(&x0, &w0, &b0, (n, cin, t), (cout, k, padding, stride));
            assert_eq!(y.dims()[2], want.len() / (n * cout));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "cfg {cin},{t},{cout},{k},{padding},{stride}");
            }
        }
    }

    #[test]
    fn weight_and_input_gradients_match_finite_differences() {
        let dev = Device::Cpu;
        for &(padding, stride, k) in &[(1usize, 1usize, 3usize), (0, 1, 3), (1, 2, 4), (2, 1, 5)] {
            let (n, cin, t, cout) = (2usize, 2usize, 8usize, 3usize);
            let x0 = pseudo(1, n * cin * t);
            let w0 = pseudo(2, cout * cin * k);
            let x = Var::from_tensor(&Tensor::from_vec(x0.clone(), (n, cin, t), &dev).unwrap())
                .unwrap();
            let w = Var::from_tensor(&Tensor::from_vec(w0.clone(), (cout, cin, k), &dev).unwrap())
                .unwrap();
            let y = conv1d_composite(x.as_tensor(), w.as_tensor(), None, stride, padding).unwrap();
            let loss = y.sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            let gw = grads
                .get(w.as_tensor())
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap();
            let gx = grads
                .get(x.as_tensor())
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap();

            let eval = |xv: &[f64], wv: &[f64]| -> f64 {
                let xt = Tensor::from_vec(xv.to_vec(), (n, cin, t), &dev).unwrap();
                let wt = Tensor::from_vec(wv.to_vec(), (cout, cin, k), &dev).unwrap();
                conv1d_composite(&xt, &wt, None, stride, padding)
                    .unwrap()
                    .sqr()
                    .unwrap()
                    .sum_all()
                    .unwrap()
                    .to_scalar::<f64>()
                    .unwrap()
            };
            let h = 1e-6;
            for i in 0..w0.len() {
                let mut p = w0.clone();
                p[i] += h;
                let mut m = w0.clone();
                m[i] -= h;
                let fd = (eval(&x0, &p) - eval(&x0, &m)) / (2.0 * h);
                assert!(
                    (gw[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                    "weight[{i}] pad{padding} s{stride} k{k}: {} vs {fd}",
                    gw[i]
                );
            }
            for i in 0..x0.len() {
                let mut p = x0.clone();
                p[i] += h;
                let mut m = x0.clone();
                m[i] -= h;
                let fd = (eval(&p, &w0) - eval(&m, &w0)) / (2.0 * h);
                assert!(
                    (gx[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                    "input[{i}] pad{padding} s{stride} k{k}: {} vs {fd}",
                    gx[i]
                );
            }
        }
        let _ = DType::F64;
    }
}
