//! Short-time Fourier transform as fixed convolution kernels.
//!
//! The forward transform produces a real/imaginary-stacked view `u` with
//! `floor(window/2)+1` bins over `ceil(L/hop)` frames. The inverse is
//! weighted overlap-add with the same Hann window, expressed with
//! differentiable ops (zero-stuffing + conv1d) so reconstruction losses can
//! backpropagate into the decoder's time-frequency output.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window: 8, hop: 4 }
    }
}

impl StftConfig {
    pub fn validate(self) -> Result<()> {
        if self.window < 2 || self.window % 2 != 0 {
            return Err(Error::Config(format!(
                "stft window must be even and >= 2, got {}",
                self.window
            )));
        }
        if self.hop == 0 || self.hop > self.window / 2 {
            return Err(Error::Config(format!(
                "stft hop must be in [1, window/2], got {}",
                self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(self) -> usize {
        self.window / 2 + 1
    }

    /// Channels of the stacked real/imaginary view.
    pub fn n_channels(self) -> usize {
        2 * self.n_bins()
    }

    pub fn n_frames(self, series_len: usize) -> usize {
        series_len.div_ceil(self.hop)
    }

    fn pad_left(self) -> usize {
        (self.window - self.hop) / 2
    }

    fn padded_len(self, series_len: usize) -> usize {
        (self.n_frames(series_len) - 1) * self.hop + self.window
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| 0.5 * (1.0 - (std::f64::consts::TAU * j as f64 / n as f64).cos()))
        .collect()
}

pub struct Stft {
    cfg: StftConfig,
    /// (2F, 1, window): windowed DFT basis, applied with stride = hop.
    k_fwd: Tensor,
    /// (1, 2F, window): flipped synthesis kernel for the overlap-add conv.
    k_inv: Tensor,
    window_fn: Vec<f64>,
    dtype: DType,
    device: Device,
}

impl Stft {
    pub fn new(cfg: StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window;
        let bins = cfg.n_bins();
        let w = hann(n);

        let mut fwd = vec![0f64; 2 * bins * n];
        let mut inv = vec![0f64; 2 * bins * n];
        for f in 0..bins {
            // bins 0 and Nyquist appear once in the real-signal expansion
            let c_f = if f == 0 || f == bins - 1 { 1.0 } else { 2.0 };
            for j in 0..n {
                let angle = std::f64::consts::TAU * (f * j) as f64 / n as f64;
                fwd[f * n + j] = w[j] * angle.cos();
                fwd[(bins + f) * n + j] = -w[j] * angle.sin();
                // synthesis: inverse DFT of the windowed frame, times the
                // synthesis window, with the kernel time-flipped for conv1d
                let jj = n - 1 - j;
                inv[f * n + jj] = w[j] * c_f * angle.cos() / n as f64;
                inv[(bins + f) * n + jj] = -w[j] * c_f * angle.sin() / n as f64;
            }
        }

        let k_fwd = Tensor::from_vec(fwd, (2 * bins, 1, n), device)?.to_dtype(dtype)?;
        let k_inv = Tensor::from_vec(inv, (2 * bins, n), device)?
            .to_dtype(dtype)?
            .unsqueeze(0)?
            .contiguous()?;
        Ok(Self {
            cfg,
            k_fwd,
            k_inv,
            window_fn: w,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    /// `x`: (B, L) -> `u`: (B, 2F, frames).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, l) = x.dims2()?;
        let pad_l = self.cfg.pad_left();
        let pad_r = self.cfg.padded_len(l) - l - pad_l;
        let x = x
            .unsqueeze(1)?
            .pad_with_zeros(D::Minus1, pad_l, pad_r)?
            .contiguous()?;
        Ok(x.conv1d(&self.k_fwd, 0, self.cfg.hop, 1, 1)?)
    }

    /// `u`: (B, 2F, frames) -> (B, L). Exact weighted overlap-add inverse.
    pub fn inverse(&self, u: &Tensor, series_len: usize) -> Result<Tensor> {
        let (b, ch, frames) = u.dims3()?;
        if ch != self.cfg.n_channels() || frames != self.cfg.n_frames(series_len) {
            return Err(Error::Shape(format!(
                "inverse stft: got ({b}, {ch}, {frames}), expected ({b}, {}, {}) for L={series_len}",
                self.cfg.n_channels(),
                self.cfg.n_frames(series_len),
            )));
        }
        let hop = self.cfg.hop;
        let n = self.cfg.window;

        // zero-stuff the frame axis so a stride-1 conv realizes the
        // transposed (overlap-add) convolution
        let stuffed = if hop == 1 {
            u.clone()
        } else {
            let zeros = Tensor::zeros((b, ch, frames, hop - 1), self.dtype, &self.device)?;
            let parts = Tensor::cat(&[&u.unsqueeze(3)?, &zeros], 3)?;
            parts
                .reshape((b, ch, frames * hop))?
                .narrow(2, 0, (frames - 1) * hop + 1)?
        };
        let ola = crate::nn::conv1d_composite(&stuffed.contiguous()?, &self.k_inv, None, 1, n - 1)?; // (B, 1, padded_len)

        let padded_len = self.cfg.padded_len(series_len);
        let mut env = vec![0f64; padded_len];
        for t in 0..frames {
            for j in 0..n {
                env[t * hop + j] += self.window_fn[j] * self.window_fn[j];
            }
        }
        let env: Vec<f64> = env.into_iter().map(|e| e.max(1e-12)).collect();
        let env = Tensor::from_vec(env, (1, 1, padded_len), &self.device)?.to_dtype(self.dtype)?;

        ola.broadcast_div(&env)?
            .narrow(D::Minus1, self.cfg.pad_left(), series_len)?
            .squeeze(1)
            .map_err(Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use candle_core::Var;
    use rand::Rng as _;

    fn random_batch(b: usize, l: usize, seed: u64) -> Tensor {
        let mut rng = sub_rng(seed, "stft");
        let data: Vec<f32> = (0..b * l).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        Tensor::from_vec(data, (b, l), &Device::Cpu).unwrap()
    }

    #[test]
    fn frame_counts() {
        let cfg = StftConfig { window: 8, hop: 4 };
        assert_eq!(cfg.n_frames(128), 32);
        assert_eq!(cfg.n_frames(65), 17);
        assert_eq!(StftConfig { window: 8, hop: 1 }.n_frames(128), 128);
        assert_eq!(cfg.n_channels(), 10);
    }

    #[test]
    fn round_trip_recovers_signal() {
        for &(l, hop) in &[(128usize, 4usize), (65, 4), (100, 2), (33, 1)] {
            let cfg = StftConfig { window: 8, hop };
            let stft = Stft::new(cfg, DType::F32, &Device::Cpu).unwrap();
            let x = random_batch(3, l, l as u64);
            let u = stft.forward(&x).unwrap();
            assert_eq!(u.dims(), &[3, cfg.n_channels(), cfg.n_frames(l)]);
            let y = stft.inverse(&u, l).unwrap();
            let err = x
                .sub(&y)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap();
            assert!(err < 1e-4, "round trip error {err} for L={l}, hop={hop}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let stft = Stft::new(StftConfig::default(), DType::F32, &Device::Cpu).unwrap();
        let x = random_batch(2, 70, 7);
        let a = stft.forward(&x).unwrap().to_vec3::<f32>().unwrap();
        let b = stft.forward(&x).unwrap().to_vec3::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_gradient_matches_finite_differences() {
        let stft = Stft::new(StftConfig::default(), DType::F64, &Device::Cpu).unwrap();
        let l = 12usize;
        let frames = stft.config().n_frames(l);
        let ch = stft.config().n_channels();
        let mut rng = sub_rng(4, "fd");
        let u0: Vec<f64> = (0..ch * frames).map(|_| rng.random::<f64>() - 0.5).collect();
        let target: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
        let t = Tensor::from_vec(target.clone(), (1, l), &Device::Cpu).unwrap();

        let f = |uv: &[f64]| -> f64 {
            let u = Tensor::from_vec(uv.to_vec(), (1, ch, frames), &Device::Cpu).unwrap();
            let x = stft.inverse(&u, l).unwrap();
            x.sub(&t).unwrap().sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let u = Var::from_tensor(&Tensor::from_vec(u0.clone(), (1, ch, frames), &Device::Cpu).unwrap()).unwrap();
        let x = stft.inverse(u.as_tensor(), l).unwrap();
        let loss = x.sub(&t).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(u.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();

        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for i in 0..u0.len() {
            let mut p = u0.clone(); p[i] += h;
            let mut m = u0.clone(); m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(1e-6);
            if rel > max_rel { max_rel = rel; }
            if rel > 1e-4 {
                eprintln!("coord {i}: autodiff {} vs fd {fd}", g[i]);
            }
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn inverse_is_differentiable() {
        let stft = Stft::new(StftConfig::default(), DType::F32, &Device::Cpu).unwrap();
        let x = random_batch(1, 64, 3);
        let u = stft.forward(&x).unwrap();
        let v = Var::from_tensor(&u).unwrap();
        let y = stft.inverse(v.as_tensor(), 64).unwrap();
        let loss = y.sqr().unwrap().mean_all().unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(v.as_tensor()).is_some());
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig { window: 7, hop: 2 }.validate().is_err());
        assert!(StftConfig { window: 8, hop: 5 }.validate().is_err());
        assert!(StftConfig { window: 8, hop: 0 }.validate().is_err());
        assert!(StftConfig { window: 8, hop: 4 }.validate().is_ok());
    }
}
