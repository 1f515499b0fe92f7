//! Time-series datasets: `.ts`/CSV ingestion, preprocessing, and the
//! train/validation and client-silo splits used by the experiments.

mod preprocess;
mod split;
mod ts;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use preprocess::{znormalize, Normalizer, STD_FLOOR};
pub use split::{partition_silos, split_train_val, SiloPartition};
pub use ts::{parse_csv, parse_ts, serialize_ts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: ragged record: {reason}")]
    RaggedRecord { line: usize, reason: String },
    #[error("line {line}: unknown class label '{label}'")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: missing value '?' (imputation is not supported)")]
    MissingValue { line: usize },
    #[error("line {line}: cannot parse value '{token}'")]
    BadValue { line: usize, token: String },
    #[error("no records after @data")]
    NoRecords,
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("datasets disagree on shape: {0}")]
    ShapeMismatch(String),
    #[error("class {class} has {count} sample(s); at least 2 are needed for a stratified split")]
    ClassTooSmall { class: usize, count: usize },
    #[error("cannot split {count} samples into {clients} silos")]
    TooManyClients { clients: usize, count: usize },
    #[error("invalid split fraction {0}; expected 0 < fraction < 0.5")]
    InvalidFraction(f64),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

/// Equal-length labelled series stored as `(count, channels, length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub split: SplitTag,
    pub channels: usize,
    pub length: usize,
    /// Row-major `(count, channels, length)` values.
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    fn row(&self) -> usize {
        self.channels * self.length
    }

    pub fn series(&self, i: usize) -> &[f64] {
        let row = self.row();
        &self.values[i * row..(i + 1) * row]
    }

    /// All samples as a `(count, channels, length)` tensor. Panics on an
    /// empty dataset.
    pub fn samples(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.channels, self.length], self.values.clone())
            .expect("dataset values match its shape")
    }

    /// Selected samples as a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let row = self.row();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(self.series(i));
        }
        Tensor::new(vec![indices.len(), self.channels, self.length], data).expect("batch shape")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, indices: &[usize], split: SplitTag) -> TimeSeriesDataset {
        let row = self.row();
        let mut values = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            values.extend_from_slice(self.series(i));
        }
        TimeSeriesDataset {
            name: self.name.clone(),
            split,
            channels: self.channels,
            length: self.length,
            values,
            labels: self.labels_of(indices),
            label_names: self.label_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Concatenation of datasets sharing shape and label set.
    pub fn concat(parts: &[&TimeSeriesDataset], split: SplitTag) -> Result<TimeSeriesDataset, DataError> {
        let first = parts.first().ok_or_else(|| DataError::ShapeMismatch("nothing to concatenate".into()))?;
        let mut out = TimeSeriesDataset {
            name: first.name.clone(),
            split,
            channels: first.channels,
            length: first.length,
            values: Vec::new(),
            labels: Vec::new(),
            label_names: first.label_names.clone(),
        };
        for p in parts {
            if p.channels != out.channels || p.length != out.length || p.label_names != out.label_names {
                return Err(DataError::ShapeMismatch(format!("cannot concatenate '{}' parts", p.name)));
            }
            out.values.extend_from_slice(&p.values);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    /// Reads a `.ts` file, or a `label,v1,v2,...` CSV/TSV file when the
    /// extension is `.csv`/`.tsv`.
    pub fn load(path: &Path, split: SplitTag) -> Result<TimeSeriesDataset, DataError> {
        let io_err = |e: std::io::Error| DataError::Io { path: path.display().to_string(), message: e.to_string() };
        let bytes = std::fs::read(path).map_err(io_err)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let mut ds = if ext == "csv" || ext == "tsv" {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
            parse_csv(&bytes, name)?
        } else {
            parse_ts(&bytes)?
        };
        ds.split = split;
        Ok(ds)
    }
}

/// Train/test pair loaded from `<dir>/<name>_TRAIN.ts` and `<dir>/<name>_TEST.ts`.
pub fn load_ucr_pair(dir: &Path, name: &str) -> Result<(TimeSeriesDataset, TimeSeriesDataset), DataError> {
    let train = TimeSeriesDataset::load(&dir.join(format!("{name}_TRAIN.ts")), SplitTag::Train)?;
    let test = TimeSeriesDataset::load(&dir.join(format!("{name}_TEST.ts")), SplitTag::Test)?;
    if train.label_names != test.label_names || train.channels != test.channels || train.length != test.length {
        return Err(DataError::ShapeMismatch(format!("{name}: train and test headers differ")));
    }
    Ok((train, test))
}
