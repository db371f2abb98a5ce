//! Probe classifiers on frozen representations: 5-NN and a linear SVM.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Knn5,
    SvmLinear,
}

pub fn probe_accuracy(
    train_x: &[Vec<f32>],
    train_y: &[usize],
    test_x: &[Vec<f32>],
    test_y: &[usize],
    kind: ProbeKind,
) -> Result<f64> {
    check_inputs(train_x, train_y, test_x, test_y)?;
    let preds = match kind {
        ProbeKind::Knn5 => knn_predict(train_x, train_y, test_x, 5),
        ProbeKind::SvmLinear => {
            let svm = LinearSvm::fit(train_x, train_y)?;
            test_x.iter().map(|x| svm.predict(x)).collect()
        }
    };
    let correct = preds.iter().zip(test_y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test_y.len() as f64)
}

fn check_inputs(
    train_x: &[Vec<f32>],
    train_y: &[usize],
    test_x: &[Vec<f32>],
    test_y: &[usize],
) -> Result<()> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::Shape("empty probe split".into()));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::Shape("representation/label count mismatch".into()));
    }
    let classes: std::collections::BTreeSet<usize> = train_y.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Shape(
            "probe training split holds a single class".into(),
        ));
    }
    Ok(())
}

/// Euclidean k-NN with majority vote; distance ties keep the earlier
/// neighbor, vote ties pick the smallest label.
fn knn_predict(train_x: &[Vec<f32>], train_y: &[usize], test_x: &[Vec<f32>], k: usize) -> Vec<usize> {
    let k = k.min(train_x.len());
    let n_classes = train_y.iter().copied().max().unwrap_or(0) + 1;
    test_x
        .iter()
        .map(|q| {
            let mut dists: Vec<(f64, usize)> = train_x
                .iter()
                .zip(train_y)
                .map(|(x, &y)| (sq_dist(q, x), y))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let mut votes = vec![0usize; n_classes];
            for &(_, y) in dists.iter().take(k) {
                votes[y] += 1;
            }
            votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(label, _)| label)
                .unwrap_or(0)
        })
        .collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// One-vs-rest L2-regularized hinge-loss SVM trained by dual coordinate
/// descent. Deterministic: fixed pass order, fixed iteration budget.
pub struct LinearSvm {
    /// One weight vector per class, bias folded in as a trailing feature.
    weights: Vec<Vec<f64>>,
}

impl LinearSvm {
    pub fn fit(train_x: &[Vec<f32>], train_y: &[usize]) -> Result<Self> {
        let n = train_x.len();
        let d = train_x[0].len();
        let n_classes = train_y.iter().copied().max().unwrap_or(0) + 1;
        let c = 1.0f64;

        // augmented feature squared norms (the +1.0 is the bias feature)
        let sq_norms: Vec<f64> = train_x
            .iter()
            .map(|x| x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() + 1.0)
            .collect();

        let mut weights = Vec::with_capacity(n_classes);
        for class in 0..n_classes {
            let y: Vec<f64> = train_y
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect();
            let mut w = vec![0.0f64; d + 1];
            let mut alpha = vec![0.0f64; n];
            for _pass in 0..40 {
                let mut max_delta = 0.0f64;
                for i in 0..n {
                    let xi = &train_x[i];
                    let mut margin = w[d]; // bias feature
                    for (j, &v) in xi.iter().enumerate() {
                        margin += w[j] * v as f64;
                    }
                    let g = y[i] * margin - 1.0;
                    let old = alpha[i];
                    let new = (old - g / sq_norms[i]).clamp(0.0, c);
                    if (new - old).abs() > 1e-12 {
                        let delta = (new - old) * y[i];
                        for (j, &v) in xi.iter().enumerate() {
                            w[j] += delta * v as f64;
                        }
                        w[d] += delta;
                        alpha[i] = new;
                        max_delta = max_delta.max((new - old).abs());
                    }
                }
                if max_delta < 1e-8 {
                    break;
                }
            }
            weights.push(w);
        }
        Ok(Self { weights })
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        let d = x.len();
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (class, w) in self.weights.iter().enumerate() {
            let mut score = w[d];
            for (j, &v) in x.iter().enumerate() {
                score += w[j] * v as f64;
            }
            if score > best_score {
                best_score = score;
                best = class;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use rand::Rng as _;

    fn blobs(n_per: usize, centers: &[[f32; 2]], seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
        let mut rng = sub_rng(seed, "blobs");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..n_per {
                xs.push(vec![
                    c[0] + (rng.random::<f32>() - 0.5) * 0.5,
                    c[1] + (rng.random::<f32>() - 0.5) * 0.5,
                ]);
                ys.push(label);
            }
        }
        (xs, ys)
    }

    #[test]
    fn separable_blobs_reach_perfect_accuracy() {
        let (train_x, train_y) = blobs(30, &[[0.0, 0.0], [5.0, 5.0]], 1);
        let (test_x, test_y) = blobs(20, &[[0.0, 0.0], [5.0, 5.0]], 2);
        for kind in [ProbeKind::Knn5, ProbeKind::SvmLinear] {
            let acc = probe_accuracy(&train_x, &train_y, &test_x, &test_y, kind).unwrap();
            assert_eq!(acc, 1.0, "{kind:?}");
        }
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        let mut rng = sub_rng(3, "chance");
        let n = 600;
        let c = 3;
        let train_x: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random::<f32>()).collect())
            .collect();
        let train_y: Vec<usize> = (0..n).map(|i| i % c).collect();
        let test_x: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random::<f32>()).collect())
            .collect();
        let test_y: Vec<usize> = (0..n).map(|i| (i * 7) % c).collect();
        for kind in [ProbeKind::Knn5, ProbeKind::SvmLinear] {
            let acc = probe_accuracy(&train_x, &train_y, &test_x, &test_y, kind).unwrap();
            assert!(
                (acc - 1.0 / c as f64).abs() < 0.12,
                "{kind:?} accuracy {acc} too far from chance"
            );
        }
    }

    #[test]
    fn permutation_invariance() {
        let (train_x, train_y) = blobs(15, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 5);
        let (test_x, test_y) = blobs(10, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 6);
        let base = probe_accuracy(&train_x, &train_y, &test_x, &test_y, ProbeKind::Knn5).unwrap();

        // apply one permutation to (representations, labels) jointly
        let perm: Vec<usize> = (0..train_x.len()).rev().collect();
        let px: Vec<Vec<f32>> = perm.iter().map(|&i| train_x[i].clone()).collect();
        let py: Vec<usize> = perm.iter().map(|&i| train_y[i]).collect();
        let permuted = probe_accuracy(&px, &py, &test_x, &test_y, ProbeKind::Knn5).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn single_class_split_rejected() {
        let xs = vec![vec![0.0f32], vec![1.0]];
        let ys = vec![0usize, 0];
        assert!(probe_accuracy(&xs, &ys, &xs, &ys, ProbeKind::Knn5).is_err());
    }
}
