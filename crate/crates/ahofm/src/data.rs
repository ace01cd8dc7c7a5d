//! Tabular data loading and alignment.

use ndarray::Array2;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column '{name}' not found; header has {header:?}")]
    MissingTarget { name: String, header: Vec<String> },
    #[error("row {row}, column '{column}': cannot parse '{cell}' as a number")]
    UnparseableCell {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("row {row}, column '{column}': non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("row {row}, column '{column}': log10 requires positive values, got {value}")]
    NonPositiveLog { row: usize, column: String, value: f64 },
    #[error("row {row}: expected {expect} fields, found {got}")]
    RaggedRow { row: usize, expect: usize, got: usize },
    #[error("no data rows in {path}")]
    Empty { path: String },
    #[error("log10 column '{name}' not found in header")]
    UnknownLogColumn { name: String },
    #[error("feature '{name}' not present in dataset")]
    UnknownFeature { name: String },
}

/// A parsed table: features as columns of `x` (in file order), plus the
/// extracted target when one was named. `split` optionally carries
/// train/test row indices for harnesses that hold data and split together.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: Option<String>,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub split: Option<SplitIndices>,
    /// Columns that were log10-transformed during ingestion, so the same
    /// preprocessing can be replayed on prediction data.
    pub log10_columns: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `0..n` into train and test rows. The test
/// part gets `floor(n * test_fraction)` rows; both halves stay in
/// ascending order.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> SplitIndices {
    use rand::prelude::*;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = (n as f64 * test_fraction).floor() as usize;
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    SplitIndices { train, test }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).to_vec()
    }

    /// Feature matrix with columns rearranged into `names` order, for
    /// aligning prediction data with the feature order a model was trained
    /// on.
    pub fn select(&self, names: &[String]) -> Result<Array2<f64>, DataError> {
        let mut out = Array2::zeros((self.n(), names.len()));
        for (k, name) in names.iter().enumerate() {
            let j = self
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| DataError::UnknownFeature { name: name.clone() })?;
            out.column_mut(k).assign(&self.x.column(j));
        }
        Ok(out)
    }
}

/// Reads a headed CSV into a [`Dataset`]. When `target` is given, that
/// column becomes `y` and the rest become features; otherwise every column
/// is a feature (prediction-time data). Columns named in `log10_columns`
/// are log10-transformed after parsing. Row numbers in errors are 1-based
/// data rows (the header is row 0).
pub fn ingest_csv(
    path: &Path,
    target: Option<&str>,
    log10_columns: &[String],
) -> Result<Dataset, DataError> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true) // ragged rows are caught below with row numbers
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let target_idx = match target {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingTarget {
                    name: name.to_string(),
                    header: header.clone(),
                })?,
        ),
        None => None,
    };
    for name in log10_columns {
        if !header.contains(name) {
            return Err(DataError::UnknownLogColumn { name: name.clone() });
        }
    }
    let log_mask: Vec<bool> = header.iter().map(|h| log10_columns.contains(h)).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row_no = k + 1;
        let record = record?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow {
                row: row_no,
                expect: header.len(),
                got: record.len(),
            });
        }
        let mut feat_row = Vec::with_capacity(header.len().saturating_sub(1));
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let mut value: f64 = cell.parse().map_err(|_| DataError::UnparseableCell {
                row: row_no,
                column: header[j].clone(),
                cell: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    row: row_no,
                    column: header[j].clone(),
                });
            }
            if log_mask[j] {
                if value <= 0.0 {
                    return Err(DataError::NonPositiveLog {
                        row: row_no,
                        column: header[j].clone(),
                        value,
                    });
                }
                value = value.log10();
            }
            if Some(j) == target_idx {
                y.push(value);
            } else {
                feat_row.push(value);
            }
        }
        rows.push(feat_row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty { path: path_str });
    }

    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let p = feature_names.len();
    let mut x = Array2::zeros((rows.len(), p));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Ok(Dataset {
        feature_names,
        target_name: target.map(|s| s.to_string()),
        x,
        y,
        split: None,
        log10_columns: log10_columns.to_vec(),
    })
}
