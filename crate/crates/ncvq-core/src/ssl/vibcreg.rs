//! Variance-invariance-covariance loss with per-branch regularization and
//! iterative whitening of the projector outputs.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::ssl::iternorm::iterative_whitening;

const VAR_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct VibcregWeights {
    pub sim_lambda: f64,
    pub var_mu: f64,
    pub cov_nu: f64,
}

impl Default for VibcregWeights {
    fn default() -> Self {
        Self {
            sim_lambda: 25.0,
            var_mu: 25.0,
            cov_nu: 100.0,
        }
    }
}

/// `lambda * MSE(e_a, e_b) + mu * sum_branch mean_dim hinge(1 - std_dim)
///  + nu * sum_branch offdiag(Cov)^2 / D`, with both branches whitened first
/// when `iternorm_iterations > 0`.
///
/// Variance and covariance use unbiased (N-1) statistics; the hinge keeps
/// every dimension's std pushed above 1.
pub fn vibcreg_loss(
    e_a: &Tensor,
    e_b: &Tensor,
    weights: VibcregWeights,
    iternorm_iterations: usize,
) -> Result<Tensor> {
    let (n, d) = e_a.dims2()?;
    if n < 2 {
        return Err(Error::Shape("vibcreg needs batch >= 2".into()));
    }
    if e_b.dims2()? != (n, d) {
        return Err(Error::Shape("branch embedding shapes differ".into()));
    }
    let (a, b) = if iternorm_iterations > 0 {
        (
            iterative_whitening(e_a, iternorm_iterations)?,
            iterative_whitening(e_b, iternorm_iterations)?,
        )
    } else {
        (e_a.clone(), e_b.clone())
    };

    let sim = a.sub(&b)?.sqr()?.mean_all()?;
    let var = (variance_term(&a)? + variance_term(&b)?)?;
    let cov = (covariance_term(&a)? + covariance_term(&b)?)?;

    let total = ((sim * weights.sim_lambda)? + (var * weights.var_mu)?)?;
    Ok((total + (cov * weights.cov_nu)?)?)
}

/// mean_j max(0, 1 - sqrt(Var_j + eps)) with unbiased variance.
fn variance_term(e: &Tensor) -> Result<Tensor> {
    let (n, _) = e.dims2()?;
    let mean = e.mean_keepdim(0)?;
    let centered = e.broadcast_sub(&mean)?;
    let var = (centered.sqr()?.sum(0)? / (n as f64 - 1.0))?;
    let std = (var + VAR_EPS)?.sqrt()?;
    let hinge = (std.neg()? + 1.0)?.relu()?;
    Ok(hinge.mean_all()?)
}

/// sum of squared off-diagonal entries of the unbiased covariance, over D.
fn covariance_term(e: &Tensor) -> Result<Tensor> {
    let (n, d) = e.dims2()?;
    let mean = e.mean_keepdim(0)?;
    let centered = e.broadcast_sub(&mean)?;
    let cov = (centered.t()?.matmul(&centered)? / (n as f64 - 1.0))?;
    let eye = Tensor::eye(d, cov.dtype(), cov.device())?;
    let off = (cov.clone() - (cov * &eye)?)?;
    Ok((off.sqr()?.sum_all()? / d as f64)?)
}

/// Plain-loop reference mirroring the documented conventions (without
/// whitening; oracle tests whiten explicitly when comparing).
pub fn vibcreg_reference(e_a: &[Vec<f64>], e_b: &[Vec<f64>], weights: VibcregWeights) -> f64 {
    let n = e_a.len();
    let d = e_a[0].len();
    let mut sim = 0.0;
    for i in 0..n {
        for j in 0..d {
            sim += (e_a[i][j] - e_b[i][j]).powi(2);
        }
    }
    sim /= (n * d) as f64;

    let branch = |e: &[Vec<f64>]| -> (f64, f64) {
        let means: Vec<f64> = (0..d)
            .map(|j| e.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let mut var_term = 0.0;
        for j in 0..d {
            let var: f64 =
                e.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            var_term += (1.0 - (var + VAR_EPS).sqrt()).max(0.0);
        }
        var_term /= d as f64;
        let mut cov_term = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let c: f64 = e
                    .iter()
                    .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
                    .sum::<f64>()
                    / (n as f64 - 1.0);
                cov_term += c * c;
            }
        }
        cov_term /= d as f64;
        (var_term, cov_term)
    };
    let (va, ca) = branch(e_a);
    let (vb, cb) = branch(e_b);
    weights.sim_lambda * sim + weights.var_mu * (va + vb) + weights.cov_nu * (ca + cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use candle_core::Device;
    use rand::Rng as _;

    fn tensor_of(rows: &[Vec<f64>]) -> Tensor {
        let n = rows.len();
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (n, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn aligned_spread_decorrelated_branches_give_zero() {
        // equal branches, per-dim unbiased std clearly above 1, zero
        // off-diagonal covariance
        let e = vec![
            vec![2.0, 2.0],
            vec![2.0, -2.0],
            vec![-2.0, 2.0],
            vec![-2.0, -2.0],
        ];
        let t = tensor_of(&e);
        let loss = vibcreg_loss(&t, &t, VibcregWeights::default(), 0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn covariance_term_matches_hand_computation() {
        // 2-D toy: x2 = 2 x1 exactly
        let e = vec![vec![1.0, 2.0], vec![-1.0, -2.0], vec![0.5, 1.0], vec![-0.5, -1.0]];
        let t = tensor_of(&e);
        let got = covariance_term(&t).unwrap().to_scalar::<f64>().unwrap();
        // means 0; cov12 = sum(x1*x2)/(n-1) = (2 + 2 + 0.5 + 0.5)/3 = 5/3
        let c12 = 5.0 / 3.0;
        let expected = 2.0 * c12 * c12 / 2.0;
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn variance_hinge_inactive_iff_all_stds_reach_one() {
        let spread = vec![vec![3.0, 3.0], vec![-3.0, -3.0]];
        let t = tensor_of(&spread);
        let v = variance_term(&t).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(v, 0.0);

        let tight = vec![vec![0.1, 3.0], vec![-0.1, -3.0]];
        let t = tensor_of(&tight);
        let v = variance_term(&t).unwrap().to_scalar::<f64>().unwrap();
        assert!(v > 0.0);
    }

    #[test]
    fn matches_double_loop_oracle_without_whitening() {
        let mut rng = sub_rng(6, "vibcreg");
        for _ in 0..10 {
            let e_a: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..4).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect())
                .collect();
            let e_b: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..4).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect())
                .collect();
            let fast = vibcreg_loss(
                &tensor_of(&e_a),
                &tensor_of(&e_b),
                VibcregWeights::default(),
                0,
            )
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
            let slow = vibcreg_reference(&e_a, &e_b, VibcregWeights::default());
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn loss_is_nonnegative_with_whitening() {
        let mut rng = sub_rng(8, "vbnn");
        for _ in 0..5 {
            let e_a: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect();
            let e_b: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect();
            let loss = vibcreg_loss(
                &tensor_of(&e_a),
                &tensor_of(&e_b),
                VibcregWeights::default(),
                5,
            )
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn symmetric_in_branches() {
        let mut rng = sub_rng(2, "sym");
        let e_a: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let e_b: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ab = vibcreg_loss(&tensor_of(&e_a), &tensor_of(&e_b), VibcregWeights::default(), 3)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        let ba = vibcreg_loss(&tensor_of(&e_b), &tensor_of(&e_a), VibcregWeights::default(), 3)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }
}
