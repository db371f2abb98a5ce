//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2})`.
///
/// The matrix square root comes from the eigendecomposition of the
/// symmetrized product `S_r^{1/2} S_g S_r^{1/2}`, with negative eigenvalues
/// clipped to zero. Covariances use unbiased (N-1) estimates and get a small
/// ridge when a feature set is smaller than its dimension.
pub fn fid(features_real: &[Vec<f32>], features_gen: &[Vec<f32>]) -> Result<f64> {
    let (mu_r, sigma_r) = gaussian_fit(features_real)?;
    let (mu_g, sigma_g) = gaussian_fit(features_gen)?;
    if mu_r.len() != mu_g.len() {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            mu_r.len(),
            mu_g.len()
        )));
    }
    let d = mu_r.len();
    let ridge = if features_real.len() <= d || features_gen.len() <= d {
        1e-6
    } else {
        0.0
    };
    let eye = DMatrix::<f64>::identity(d, d);
    let sigma_r = sigma_r + &eye * ridge;
    let sigma_g = sigma_g + &eye * ridge;

    let mean_term = (&mu_r - &mu_g).norm_squared();

    let sqrt_r = sym_sqrt(&sigma_r);
    let inner = &sqrt_r * &sigma_g * &sqrt_r;
    let sqrt_inner = sym_sqrt(&symmetrize(&inner));

    let trace_term = sigma_r.trace() + sigma_g.trace() - 2.0 * sqrt_inner.trace();
    Ok((mean_term + trace_term).max(0.0))
}

pub fn gaussian_fit(features: &[Vec<f32>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Shape("need at least 2 feature rows".into()));
    }
    let d = features[0].len();
    for row in features {
        if row.len() != d {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite feature value".into()));
        }
    }
    let mut mu = DVector::<f64>::zeros(d);
    for row in features {
        for (j, &v) in row.iter().enumerate() {
            mu[j] += v as f64;
        }
    }
    mu /= n as f64;

    let mut sigma = DMatrix::<f64>::zeros(d, d);
    for row in features {
        let c: Vec<f64> = row.iter().enumerate().map(|(j, &v)| v as f64 - mu[j]).collect();
        for i in 0..d {
            for j in i..d {
                sigma[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    sigma /= n as f64 - 1.0;
    Ok((mu, sigma))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let values = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_features(n: usize, d: usize, mean: f64, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = sub_rng(seed, "fid");
        let normal = Normal::new(mean, 1.0).unwrap();
        (0..n)
            .map(|_| (0..d).map(|_| normal.sample(&mut rng) as f32).collect())
            .collect()
    }

    #[test]
    fn identical_sets_give_zero() {
        let a = gaussian_features(200, 5, 0.0, 1);
        let v = fid(&a, &a).unwrap();
        assert!(v.abs() < 1e-6, "fid {v}");
    }

    #[test]
    fn symmetric() {
        let a = gaussian_features(300, 4, 0.0, 2);
        let b = gaussian_features(250, 4, 0.5, 3);
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!(ab > 0.0);
    }

    #[test]
    fn one_dimensional_closed_form() {
        // standardize so the sample fit is exactly N(0,1), then shift by 1:
        // FID = (0-1)^2 + 1 + 1 - 2*sqrt(1*1) = 1
        let raw = gaussian_features(500, 1, 0.3, 4);
        let mean: f64 = raw.iter().map(|r| r[0] as f64).sum::<f64>() / raw.len() as f64;
        let var: f64 = raw
            .iter()
            .map(|r| (r[0] as f64 - mean).powi(2))
            .sum::<f64>()
            / (raw.len() as f64 - 1.0);
        let std = var.sqrt();
        let real: Vec<Vec<f32>> = raw
            .iter()
            .map(|r| vec![((r[0] as f64 - mean) / std) as f32])
            .collect();
        let gen: Vec<Vec<f32>> = real.iter().map(|r| vec![r[0] + 1.0]).collect();
        let v = fid(&real, &gen).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "fid {v}");
    }

    #[test]
    fn non_finite_rejected() {
        let mut a = gaussian_features(10, 2, 0.0, 5);
        a[3][1] = f32::NAN;
        let b = gaussian_features(10, 2, 0.0, 6);
        assert!(fid(&a, &b).is_err());
    }

    #[test]
    fn small_sample_regularized_not_crashing() {
        // fewer rows than dimensions: ridge keeps the sqrt well-posed
        let a = gaussian_features(4, 8, 0.0, 7);
        let b = gaussian_features(4, 8, 1.0, 8);
        let v = fid(&a, &b).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
}
