//! 2-D projections of representations for visual inspection.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::sub_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMethod {
    Pca,
    Tsne,
}

pub fn embed_2d(representations: &[Vec<f32>], method: EmbedMethod, seed: u64) -> Result<Vec<[f64; 2]>> {
    if representations.len() < 3 {
        return Err(Error::Shape("need at least 3 points to embed".into()));
    }
    match method {
        EmbedMethod::Pca => pca_2d(representations),
        EmbedMethod::Tsne => tsne_2d(representations, seed, 30.0, 300),
    }
}

/// Project onto the top-2 principal components. Deterministic: component
/// signs are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(representations: &[Vec<f32>]) -> Result<Vec<[f64; 2]>> {
    let n = representations.len();
    let d = representations[0].len();
    let mut mean = vec![0.0f64; d];
    for row in representations {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in representations {
        let c: Vec<f64> = row.iter().enumerate().map(|(j, &v)| v as f64 - mean[j]).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov /= (n - 1).max(1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut components = Vec::with_capacity(2);
    for &idx in order.iter().take(2) {
        let mut comp: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let (mut max_abs, mut max_sign) = (0.0f64, 1.0f64);
        for &v in &comp {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_sign = v.signum();
            }
        }
        if max_sign < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        components.push(comp);
    }
    while components.len() < 2 {
        components.push(vec![0.0; d]);
    }

    Ok(representations
        .iter()
        .map(|row| {
            let mut out = [0.0f64; 2];
            for (k, comp) in components.iter().enumerate() {
                out[k] = row
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (v as f64 - mean[j]) * comp[j])
                    .sum();
            }
            out
        })
        .collect())
}

/// Exact (O(N^2)) t-SNE with PCA initialization and early exaggeration.
pub fn tsne_2d(
    representations: &[Vec<f32>],
    seed: u64,
    perplexity: f64,
    iterations: usize,
) -> Result<Vec<[f64; 2]>> {
    let n = representations.len();
    if n < 3 {
        return Err(Error::Shape("need at least 3 points".into()));
    }
    let perplexity = perplexity.min(((n - 1) as f64 / 3.0).max(2.0));

    // pairwise squared distances
    let mut d2 = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = representations[i]
                .iter()
                .zip(&representations[j])
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum();
            d2[i][j] = dist;
            d2[j][i] = dist;
        }
    }

    // per-point bandwidths by binary search on perplexity
    let target_entropy = perplexity.ln();
    let mut p = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        let (mut lo, mut hi) = (1e-20f64, 1e20f64);
        let mut beta = 1.0f64;
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut sum_dp = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let e = (-d2[i][j] * beta).exp();
                sum += e;
                sum_dp += d2[i][j] * e;
            }
            let sum = sum.max(1e-300);
            let entropy = beta * sum_dp / sum + sum.ln();
            if (entropy - target_entropy).abs() < 1e-5 {
                break;
            }
            if entropy > target_entropy {
                lo = beta;
                beta = if hi >= 1e20 { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if i != j {
                p[i][j] = (-d2[i][j] * beta).exp();
                sum += p[i][j];
            }
        }
        for j in 0..n {
            p[i][j] /= sum.max(1e-300);
        }
    }
    // symmetrize
    let mut pj = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            pj[i][j] = ((p[i][j] + p[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    // PCA init, scaled small, with a whisper of noise to break exact overlaps
    let mut rng = sub_rng(seed, "tsne");
    let normal = Normal::new(0.0, 1e-4).expect("sigma");
    let init = pca_2d(representations)?;
    let scale = init
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut y: Vec<[f64; 2]> = init
        .iter()
        .map(|p| {
            [
                p[0] / scale * 1e-2 + normal.sample(&mut rng),
                p[1] / scale * 1e-2 + normal.sample(&mut rng),
            ]
        })
        .collect();

    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let lr = 200.0;
    let exaggeration_until = iterations / 4;
    for iter in 0..iterations {
        let exag = if iter < exaggeration_until { 12.0 } else { 1.0 };
        // low-dimensional affinities
        let mut q_num = vec![vec![0.0f64; n]; n];
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dy0 = y[i][0] - y[j][0];
                let dy1 = y[i][1] - y[j][1];
                let num = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q_num[i][j] = num;
                q_num[j][i] = num;
                q_sum += 2.0 * num;
            }
        }
        let q_sum = q_sum.max(1e-300);
        let momentum = if iter < exaggeration_until { 0.5 } else { 0.8 };
        // all gradients against the frozen positions, then one joint update
        let mut grads = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (q_num[i][j] / q_sum).max(1e-12);
                let mult = (exag * pj[i][j] - q) * q_num[i][j];
                grads[i][0] += 4.0 * mult * (y[i][0] - y[j][0]);
                grads[i][1] += 4.0 * mult * (y[i][1] - y[j][1]);
            }
        }
        for i in 0..n {
            for k in 0..2 {
                // adaptive per-coordinate gains keep the descent stable
                gains[i][k] = if (grads[i][k] > 0.0) != (velocity[i][k] > 0.0) {
                    (gains[i][k] + 0.2).min(10.0)
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - lr * gains[i][k] * grads[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        // keep the embedding centered
        let cx: f64 = y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy: f64 = y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for p in &mut y {
            p[0] -= cx;
            p[1] -= cy;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use rand::Rng as _;

    #[test]
    fn pca_recovers_planar_distances() {
        // points on a 2-D plane embedded in 5-D
        let mut rng = sub_rng(1, "plane");
        let basis = [
            [1.0f32, 0.0, 1.0, 0.0, 1.0],
            [0.0, 1.0, 0.0, 1.0, 0.0],
        ];
        let coords: Vec<[f32; 2]> = (0..25)
            .map(|_| [rng.random::<f32>() * 4.0, rng.random::<f32>() * 4.0])
            .collect();
        let points: Vec<Vec<f32>> = coords
            .iter()
            .map(|c| (0..5).map(|j| c[0] * basis[0][j] + c[1] * basis[1][j]).collect())
            .collect();
        let embedded = pca_2d(&points).unwrap();
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let orig: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum();
                let proj = (embedded[i][0] - embedded[j][0]).powi(2)
                    + (embedded[i][1] - embedded[j][1]).powi(2);
                assert!(
                    (orig - proj).abs() < 1e-6 * orig.max(1.0),
                    "pair ({i},{j}): {orig} vs {proj}"
                );
            }
        }
    }

    #[test]
    fn output_shapes_and_determinism() {
        let mut rng = sub_rng(2, "shape");
        let points: Vec<Vec<f32>> = (0..20)
            .map(|_| (0..6).map(|_| rng.random::<f32>()).collect())
            .collect();
        for method in [EmbedMethod::Pca, EmbedMethod::Tsne] {
            let a = embed_2d(&points, method, 3).unwrap();
            assert_eq!(a.len(), 20);
            let b = embed_2d(&points, method, 3).unwrap();
            assert_eq!(a, b, "{method:?} not deterministic");
        }
    }

    #[test]
    fn pca_component_variances_ordered() {
        let mut rng = sub_rng(4, "ord");
        let points: Vec<Vec<f32>> = (0..60)
            .map(|_| {
                let a = rng.random::<f32>() * 10.0;
                let b = rng.random::<f32>();
                vec![a, b, a * 0.5 + b]
            })
            .collect();
        let e = pca_2d(&points).unwrap();
        let var = |k: usize| -> f64 {
            let mean: f64 = e.iter().map(|p| p[k]).sum::<f64>() / e.len() as f64;
            e.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / e.len() as f64
        };
        assert!(var(0) >= var(1));
    }

    #[test]
    fn tsne_separates_two_far_blobs() {
        let mut rng = sub_rng(5, "blob");
        let mut points: Vec<Vec<f32>> = Vec::new();
        for i in 0..30 {
            let offset = if i % 2 == 0 { 0.0 } else { 50.0 };
            points.push(vec![
                offset + rng.random::<f32>(),
                offset + rng.random::<f32>(),
            ]);
        }
        let y = tsne_2d(&points, 0, 10.0, 250).unwrap();
        // mean separation between the blobs should dominate intra-blob spread
        let blob = |parity: usize| -> [f64; 2] {
            let sel: Vec<&[f64; 2]> = y.iter().skip(parity).step_by(2).collect();
            let n = sel.len() as f64;
            [
                sel.iter().map(|p| p[0]).sum::<f64>() / n,
                sel.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        };
        let a = blob(0);
        let b = blob(1);
        let between = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let spread: f64 = y
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = if i % 2 == 0 { a } else { b };
                ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / y.len() as f64;
        assert!(between > 2.0 * spread, "between {between}, spread {spread}");
    }
}
