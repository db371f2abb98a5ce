//! Procedural stand-in datasets in archive format.
//!
//! Used by tests and smoke runs when the real archive is not on disk. The
//! generators keep the named datasets' exact sizes (N_train, N_test, C, L)
//! and a comparable degree of class separability.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng::sub_rng;

/// Four classes: the ordered combinations of an upward and a downward step
/// pattern on unit-variance noise, with widely varying pattern positions and
/// widths. The steps dominate the noise (as in the real dataset); what makes
/// flattened reconstruction-driven latents fail is the positional
/// misalignment between same-class samples.
pub fn write_two_patterns_like(root: &Path, seed: u64) -> Result<()> {
    let mut rng = sub_rng(seed, "two_patterns");
    let noise = Normal::new(0.0f64, 1.0).expect("valid sigma");
    let l = 128usize;

    let mut make_row = |class: usize| -> (i64, Vec<f64>) {
        let mut row: Vec<f64> = (0..l).map(|_| noise.sample(&mut rng)).collect();
        let up_first = class < 2;
        let up_second = class % 2 == 0;
        // widths span a x6 range and positions are unconstrained (beyond
        // ordering), so same-class samples rarely co-locate
        let w1 = rng.random_range(8..48);
        let w2 = rng.random_range(8..48);
        let p1 = rng.random_range(0..l - w1 - w2 - 4);
        let p2 = rng.random_range(p1 + w1 + 4..l - w2 + 1);
        for (pos, w, up) in [(p1, w1, up_first), (p2, w2, up_second)] {
            for j in 0..w {
                let v = if (j < w / 2) != up { 1.0 } else { -1.0 };
                row[pos + j] += 6.0 * v;
            }
        }
        (class as i64 + 1, row)
    };

    let mut train = String::new();
    for i in 0..1000 {
        let (label, row) = make_row(i % 4);
        push_row(&mut train, label, &row);
    }
    let mut test = String::new();
    for i in 0..4000 {
        let (label, row) = make_row(i % 4);
        push_row(&mut test, label, &row);
    }
    write_pair(root, "TwoPatterns", &train, &test)
}

/// Two classes with distinct dominant frequencies plus noise, mimicking the
/// small robot-surface sensor sets. Train 27 / test 953, length 65.
pub fn write_sony_surface_like(root: &Path, seed: u64) -> Result<()> {
    let mut rng = sub_rng(seed, "sony_surface");
    let noise = Normal::new(0.0f64, 0.25).expect("valid sigma");
    let l = 65usize;

    let mut make_row = |class: usize| -> (i64, Vec<f64>) {
        let freq = if class == 0 { 2.0 } else { 5.0 };
        let amp = 1.0 + 0.2 * rng.random::<f64>();
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let trend = 0.4 * (rng.random::<f64>() - 0.5);
        let row = (0..l)
            .map(|t| {
                let x = t as f64 / l as f64;
                amp * (std::f64::consts::TAU * freq * x + phase).sin()
                    + trend * x
                    + noise.sample(&mut rng)
            })
            .collect();
        (class as i64 + 1, row)
    };

    let mut train = String::new();
    for i in 0..27 {
        let (label, row) = make_row(i % 2);
        push_row(&mut train, label, &row);
    }
    let mut test = String::new();
    for i in 0..953 {
        let (label, row) = make_row(i % 2);
        push_row(&mut test, label, &row);
    }
    write_pair(root, "SonyAIBORobotSurface2", &train, &test)
}

fn push_row(buf: &mut String, label: i64, row: &[f64]) {
    write!(buf, "{label}").expect("string write");
    for v in row {
        write!(buf, "\t{v:.6}").expect("string write");
    }
    buf.push('\n');
}

fn write_pair(root: &Path, name: &str, train: &str, test: &str) -> Result<()> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(format!("{name}_TRAIN.tsv")), train)?;
    std::fs::write(dir.join(format!("{name}_TEST.tsv")), test)?;
    Ok(())
}
