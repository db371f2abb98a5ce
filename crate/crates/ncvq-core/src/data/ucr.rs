//! Tab-separated archive files: `<label>\t<v1>\t...\t<vL>` per line, laid out
//! as `<Name>/<Name>_TRAIN.tsv` and `<Name>/<Name>_TEST.tsv` under a root.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use crate::data::{Split, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Load a dataset's train/test pair, remapping labels to contiguous 0..C-1.
///
/// The label map is built from the train split; a test label missing from it
/// is an error, as is any ragged or non-numeric row.
pub fn load_ucr(root: &Path, dataset_name: &str) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let dir = root.join(dataset_name);
    let train_path = dir.join(format!("{dataset_name}_TRAIN.tsv"));
    let test_path = dir.join(format!("{dataset_name}_TEST.tsv"));
    for p in [&train_path, &test_path] {
        if !p.is_file() {
            return Err(Error::FileNotFound(p.clone()));
        }
    }

    let train_raw = parse_ucr_reader(
        std::io::BufReader::new(std::fs::File::open(&train_path)?),
        dataset_name,
    )?;
    let test_raw = parse_ucr_reader(
        std::io::BufReader::new(std::fs::File::open(&test_path)?),
        dataset_name,
    )?;

    if !test_raw.series.is_empty()
        && !train_raw.series.is_empty()
        && test_raw.series[0].len() != train_raw.series[0].len()
    {
        return Err(Error::data(
            dataset_name,
            format!(
                "train length {} != test length {}",
                train_raw.series[0].len(),
                test_raw.series[0].len()
            ),
        ));
    }

    let mut label_map: BTreeMap<i64, usize> = BTreeMap::new();
    for &raw in &train_raw.labels {
        let next = label_map.len();
        label_map.entry(raw).or_insert(next);
    }
    let remap = |raw_labels: &[i64], split: &str| -> Result<Vec<usize>> {
        raw_labels
            .iter()
            .map(|raw| {
                label_map.get(raw).copied().ok_or_else(|| {
                    Error::data(
                        dataset_name,
                        format!("{split} label {raw} absent from train split"),
                    )
                })
            })
            .collect()
    };

    let train = TimeSeriesDataset {
        name: dataset_name.to_string(),
        labels: remap(&train_raw.labels, "train")?,
        series: train_raw.series,
        split: Split::Train,
        norm_stats: None,
    };
    let test = TimeSeriesDataset {
        name: dataset_name.to_string(),
        labels: remap(&test_raw.labels, "test")?,
        series: test_raw.series,
        split: Split::Test,
        norm_stats: None,
    };
    Ok((train, test))
}

pub struct RawRows {
    pub series: Vec<Vec<f32>>,
    pub labels: Vec<i64>,
}

/// Parse one tab-separated file. Labels may be arbitrary integers (the
/// archive uses -1/1, 1..C, ...); remapping happens in [`load_ucr`].
pub fn parse_ucr_reader<R: BufRead>(reader: R, name: &str) -> Result<RawRows> {
    let mut series: Vec<Vec<f32>> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut expected_len: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let label_field = fields.next().unwrap_or("");
        let label = parse_label(label_field).ok_or_else(|| {
            Error::data(
                name,
                format!("line {}: non-numeric label {label_field:?}", lineno + 1),
            )
        })?;

        let mut row: Vec<f32> = Vec::with_capacity(expected_len.unwrap_or(0));
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::data(
                    name,
                    format!("line {}: non-numeric cell {field:?}", lineno + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::data(
                    name,
                    format!("line {}: missing or non-finite value", lineno + 1),
                ));
            }
            row.push(v as f32);
        }
        if row.is_empty() {
            return Err(Error::data(name, format!("line {}: no values", lineno + 1)));
        }
        match expected_len {
            None => expected_len = Some(row.len()),
            Some(l) if l != row.len() => {
                return Err(Error::data(
                    name,
                    format!(
                        "line {}: ragged row, {} values where {} expected",
                        lineno + 1,
                        row.len(),
                        l
                    ),
                ));
            }
            _ => {}
        }
        series.push(row);
        labels.push(label);
    }

    if series.is_empty() {
        return Err(Error::data(name, "file holds no rows"));
    }
    Ok(RawRows { series, labels })
}

fn parse_label(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    // Some archive files carry float-formatted labels ("1.0000").
    let f: f64 = s.parse().ok()?;
    if f.is_finite() && f.fract() == 0.0 {
        Some(f as i64)
    } else {
        None
    }
}

/// (train N, test N, classes, length) for the archive subset in use; used to
/// validate any of these datasets found on disk.
pub const ARCHIVE_SUBSET: &[(&str, usize, usize, usize, usize)] = &[
    ("ElectricDevices", 8926, 7711, 7, 96),
    ("FordB", 3636, 810, 2, 500),
    ("FordA", 3601, 1320, 2, 500),
    ("Wafer", 1000, 6164, 2, 152),
    ("TwoPatterns", 1000, 4000, 4, 128),
    ("StarLightCurves", 1000, 8236, 3, 1024),
    ("UWaveGestureLibraryAll", 896, 3582, 8, 945),
    ("ECG5000", 500, 4500, 5, 140),
    ("ShapesAll", 600, 600, 60, 512),
    ("Mallat", 55, 2345, 8, 1024),
    ("Symbols", 25, 995, 6, 398),
    ("SonyAIBORobotSurface2", 27, 953, 2, 65),
    ("SonyAIBORobotSurface1", 20, 601, 2, 70),
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn minimal_single_row_file() {
        let raw = parse_ucr_reader(Cursor::new("1\t0.0\t0.0\n"), "mini").unwrap();
        assert_eq!(raw.series.len(), 1);
        assert_eq!(raw.series[0].len(), 2);
        assert_eq!(raw.labels, vec![1]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let res = parse_ucr_reader(Cursor::new("1\t0.0\t0.0\n2\t1.0\n"), "ragged");
        assert!(matches!(res, Err(Error::Data { .. })));
    }

    #[test]
    fn non_numeric_cell_rejected() {
        let res = parse_ucr_reader(Cursor::new("1\t0.0\tNaN?\n"), "bad");
        assert!(res.is_err());
        let res = parse_ucr_reader(Cursor::new("1\t0.0\tnan\n"), "bad");
        assert!(res.is_err(), "missing values must be rejected");
    }

    #[test]
    fn float_formatted_labels_accepted() {
        let raw = parse_ucr_reader(Cursor::new("-1.0\t0.5\n1.0\t0.25\n"), "fl").unwrap();
        assert_eq!(raw.labels, vec![-1, 1]);
    }

    #[test]
    fn load_remaps_labels_and_errors_on_unseen_test_label() {
        let dir = std::env::temp_dir().join(format!("ncvq-ucr-{}", std::process::id()));
        let ds_dir = dir.join("Mini");
        std::fs::create_dir_all(&ds_dir).unwrap();
        std::fs::write(ds_dir.join("Mini_TRAIN.tsv"), "5\t0.0\t1.0\n2\t1.0\t0.0\n").unwrap();
        std::fs::write(ds_dir.join("Mini_TEST.tsv"), "2\t0.5\t0.5\n").unwrap();
        let (train, test) = load_ucr(&dir, "Mini").unwrap();
        // label order of first appearance in the train file
        assert_eq!(train.labels, vec![0, 1]);
        assert_eq!(test.labels, vec![1]);
        assert_eq!(train.split, Split::Train);
        assert_eq!(test.split, Split::Test);

        std::fs::write(ds_dir.join("Mini_TEST.tsv"), "9\t0.5\t0.5\n").unwrap();
        assert!(load_ucr(&dir, "Mini").is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_ucr(Path::new("/nonexistent"), "Nope").unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));
    }

    #[test]
    fn loading_is_deterministic() {
        let text = "1\t0.125\t-3.5\n2\t7.25\t0.0\n";
        let a = parse_ucr_reader(Cursor::new(text), "d").unwrap();
        let b = parse_ucr_reader(Cursor::new(text), "d").unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.labels, b.labels);
    }
}
