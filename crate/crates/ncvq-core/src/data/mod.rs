//! Labeled fixed-length univariate series: loading, normalization, splits.

mod synthetic;
mod ucr;

pub use synthetic::{write_sony_surface_like, write_two_patterns_like};
pub use ucr::{load_ucr, parse_ucr_reader, ARCHIVE_SUBSET};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sub_rng, Rng};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Train-split statistics a dataset was standardized with; kept around so
/// generated samples can be mapped back to the original scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    pub name: String,
    /// N rows, each of identical length L.
    pub series: Vec<Vec<f32>>,
    /// Contiguous 0..C-1 after remapping.
    pub labels: Vec<usize>,
    pub split: Split,
    pub norm_stats: Option<NormStats>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Global mean over every value in the dataset.
    pub fn global_mean(&self) -> f64 {
        let n = (self.len() * self.series_len()) as f64;
        let sum: f64 = self
            .series
            .iter()
            .flat_map(|row| row.iter())
            .map(|&v| v as f64)
            .sum();
        sum / n
    }

    /// Global population standard deviation.
    pub fn global_std(&self) -> f64 {
        let mean = self.global_mean();
        let n = (self.len() * self.series_len()) as f64;
        let ss: f64 = self
            .series
            .iter()
            .flat_map(|row| row.iter())
            .map(|&v| (v as f64 - mean).powi(2))
            .sum();
        (ss / n).sqrt()
    }

    pub fn subset(&self, indices: &[usize]) -> TimeSeriesDataset {
        TimeSeriesDataset {
            name: self.name.clone(),
            series: indices.iter().map(|&i| self.series[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            norm_stats: self.norm_stats,
        }
    }
}

/// Standardize both splits with the train split's global mean and std.
///
/// The inverse mapping for generated samples is recorded in `norm_stats`.
pub fn normalize(
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if train.norm_stats.is_some() {
        return Err(Error::data(&train.name, "already normalized"));
    }
    let mean = train.global_mean();
    let std = train.global_std();
    if std == 0.0 || !std.is_finite() {
        return Err(Error::data(
            &train.name,
            format!("train split has zero or non-finite std ({std})"),
        ));
    }
    let stats = NormStats { mean, std };
    Ok((apply_norm(train, stats), apply_norm(test, stats)))
}

fn apply_norm(ds: &TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset {
    let series = ds
        .series
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| ((v as f64 - stats.mean) / stats.std) as f32)
                .collect()
        })
        .collect();
    TimeSeriesDataset {
        name: ds.name.clone(),
        series,
        labels: ds.labels.clone(),
        split: ds.split,
        norm_stats: Some(stats),
    }
}

/// Map a standardized value back to the original scale.
pub fn denormalize_value(v: f64, stats: NormStats) -> f64 {
    v * stats.std + stats.mean
}

pub fn denormalize_series(row: &[f32], stats: NormStats) -> Vec<f32> {
    row.iter()
        .map(|&v| denormalize_value(v as f64, stats) as f32)
        .collect()
}

/// Carve a validation set out of `train`, stratified by label where class
/// counts permit. Deterministic for a given seed; classes with a single
/// sample fall back to the unstratified pool.
pub fn split_validation(
    train: &TimeSeriesDataset,
    fraction: f64,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = train.len();
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = n_val.clamp(1, n.saturating_sub(1));

    let mut rng = sub_rng(seed, "split_validation");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); train.n_classes()];
    for (i, &label) in train.labels.iter().enumerate() {
        by_class[label].push(i);
    }

    let mut val_indices: Vec<usize> = Vec::with_capacity(n_val);
    let mut leftover: Vec<usize> = Vec::new();
    for class_indices in &by_class {
        if class_indices.len() < 2 {
            leftover.extend_from_slice(class_indices);
            continue;
        }
        let take = ((class_indices.len() as f64) * fraction).round() as usize;
        let take = take.min(class_indices.len() - 1);
        let mut shuffled = class_indices.clone();
        shuffled.shuffle(&mut rng);
        val_indices.extend_from_slice(&shuffled[..take]);
        leftover.extend_from_slice(&shuffled[take..]);
    }
    // Per-class rounding can leave the validation set off target; top up or
    // trim from the leftover pool.
    leftover.shuffle(&mut rng);
    while val_indices.len() < n_val {
        match leftover.pop() {
            Some(i) => val_indices.push(i),
            None => break,
        }
    }
    while val_indices.len() > n_val {
        leftover.push(val_indices.pop().expect("non-empty"));
    }

    let val_set: std::collections::BTreeSet<usize> = val_indices.iter().copied().collect();
    let train_indices: Vec<usize> = (0..n).filter(|i| !val_set.contains(i)).collect();
    let val_indices: Vec<usize> = val_set.into_iter().collect();

    let mut val = train.subset(&val_indices);
    val.split = Split::Train;
    Ok((train.subset(&train_indices), val))
}

/// Deterministic minibatch index order for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}
