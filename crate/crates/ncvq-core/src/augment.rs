//! View augmentations for the self-supervised branch.
//!
//! Three families: window warp + amplitude resize, slice-and-shuffle, and
//! per-point Gaussian noise. All are pure given an explicit RNG and preserve
//! series length.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    WarpResize,
    SliceShuffle,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    /// Warp factor drawn uniformly from this closed interval.
    pub warp_factor_min: f64,
    pub warp_factor_max: f64,
    /// Amplitude resize multiplies by 1 + eps, eps ~ N(0, sigma^2).
    pub amplitude_sigma: f64,
    pub n_slices: usize,
    /// Per-point noise standard deviation.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            kind: AugmentationKind::WarpResize,
            warp_factor_min: 0.9,
            warp_factor_max: 2.0,
            amplitude_sigma: 0.2,
            n_slices: 4,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self, series_len: usize) -> Result<()> {
        if self.warp_factor_min <= 0.0 || self.warp_factor_max < self.warp_factor_min {
            return Err(Error::Config(format!(
                "warp factor range [{}, {}] is invalid",
                self.warp_factor_min, self.warp_factor_max
            )));
        }
        if self.n_slices < 2 || self.n_slices > series_len {
            return Err(Error::Config(format!(
                "n_slices {} outside [2, {series_len}]",
                self.n_slices
            )));
        }
        if self.amplitude_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("negative sigma".into()));
        }
        Ok(())
    }

    /// Produce the augmented view of `x` for this spec's kind.
    pub fn apply(&self, x: &[f32], rng: &mut Rng) -> Vec<f32> {
        match self.kind {
            AugmentationKind::WarpResize => window_warp_amplitude(x, self, rng),
            AugmentationKind::SliceShuffle => slice_and_shuffle(x, self, rng),
            AugmentationKind::Gaussian => gaussian_noise(x, self, rng),
        }
    }
}

/// Linear resize of `src` to `dst_len` points, endpoints fixed.
pub fn resample_linear(src: &[f32], dst_len: usize) -> Vec<f32> {
    if dst_len == src.len() {
        return src.to_vec();
    }
    if src.len() == 1 {
        return vec![src[0]; dst_len];
    }
    if dst_len == 1 {
        return vec![src[0]];
    }
    let scale = (src.len() - 1) as f64 / (dst_len - 1) as f64;
    (0..dst_len)
        .map(|i| {
            let t = i as f64 * scale;
            let lo = t.floor() as usize;
            let hi = (lo + 1).min(src.len() - 1);
            let frac = t - lo as f64;
            ((src[lo] as f64) * (1.0 - frac) + (src[hi] as f64) * frac) as f32
        })
        .collect()
}

/// Time-scale the window `[start, start+len)` by `factor` and resize the
/// whole series back to its original length.
pub fn window_warp(x: &[f32], start: usize, len: usize, factor: f64) -> Vec<f32> {
    let l = x.len();
    debug_assert!(start + len <= l && len >= 1);
    let warped_len = ((len as f64) * factor).round().max(1.0) as usize;
    let warped = resample_linear(&x[start..start + len], warped_len);
    let mut spliced = Vec::with_capacity(l - len + warped_len);
    spliced.extend_from_slice(&x[..start]);
    spliced.extend_from_slice(&warped);
    spliced.extend_from_slice(&x[start + len..]);
    resample_linear(&spliced, l)
}

/// Multiply every point by `1 + epsilon`.
pub fn amplitude_resize(x: &[f32], epsilon: f64) -> Vec<f32> {
    x.iter().map(|&v| ((1.0 + epsilon) * v as f64) as f32).collect()
}

/// Warp a random window (start uniform, length uniform in 10%..90% of L) by a
/// factor from the spec's range, then apply a random amplitude resize.
pub fn window_warp_amplitude(x: &[f32], spec: &AugmentationSpec, rng: &mut Rng) -> Vec<f32> {
    let l = x.len();
    debug_assert!(l >= 4, "window warp needs L >= 4");
    let min_len = ((l as f64) * 0.1).round().max(1.0) as usize;
    let max_len = (((l as f64) * 0.9).round() as usize).clamp(min_len, l);
    let len = rng.random_range(min_len..=max_len);
    let start = rng.random_range(0..=l - len);
    let factor = if spec.warp_factor_max > spec.warp_factor_min {
        rng.random_range(spec.warp_factor_min..spec.warp_factor_max)
    } else {
        spec.warp_factor_min
    };
    let warped = window_warp(x, start, len, factor);
    let epsilon = if spec.amplitude_sigma > 0.0 {
        Normal::new(0.0, spec.amplitude_sigma)
            .expect("valid sigma")
            .sample(rng)
    } else {
        0.0
    };
    amplitude_resize(&warped, epsilon)
}

/// Cut at the given interior points and concatenate sections in `perm` order.
pub fn slice_shuffle_with(x: &[f32], cuts: &[usize], perm: &[usize]) -> Vec<f32> {
    let l = x.len();
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(cuts);
    bounds.push(l);
    debug_assert!(bounds.windows(2).all(|w| w[0] < w[1]));
    debug_assert_eq!(perm.len(), bounds.len() - 1);
    let mut out = Vec::with_capacity(l);
    for &p in perm {
        out.extend_from_slice(&x[bounds[p]..bounds[p + 1]]);
    }
    out
}

/// Cut the series at `n_slices - 1` distinct interior points and permute the
/// sections. The value multiset is preserved exactly.
pub fn slice_and_shuffle(x: &[f32], spec: &AugmentationSpec, rng: &mut Rng) -> Vec<f32> {
    let l = x.len();
    let n = spec.n_slices;
    debug_assert!(n >= 2 && n <= l, "need 2 <= n_slices <= L");
    let mut interior: Vec<usize> = (1..l).collect();
    interior.shuffle(rng);
    let mut cuts: Vec<usize> = interior[..n - 1].to_vec();
    cuts.sort_unstable();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    slice_shuffle_with(x, &cuts, &perm)
}

/// Add i.i.d. N(0, noise_sigma^2) to every point.
pub fn gaussian_noise(x: &[f32], spec: &AugmentationSpec, rng: &mut Rng) -> Vec<f32> {
    if spec.noise_sigma == 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
    x.iter()
        .map(|&v| (v as f64 + normal.sample(rng)) as f32)
        .collect()
}
