//! Tabular dataset ingestion and train/test splitting.
//!
//! CSV files need a header row and fully numeric cells; the delimiter is an
//! explicit flag, never sniffed. Standardization (zero mean, unit variance
//! per feature column) is fit on the training rows only and applied to both
//! halves of a split; constant columns are dropped.

use crate::oracle::SampleOracle;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header row")]
    MissingHeader,
    #[error("target column {0:?} not found in header")]
    MissingTarget(String),
    #[error("cell at row {row}, column {column} is not a number: {value:?}")]
    ParseError { row: usize, column: String, value: String },
    #[error("test fraction must lie strictly in (0, 1), got {0}")]
    DegenerateFraction(f64),
    #[error("split leaves an empty {0} set")]
    EmptySplit(&'static str),
    #[error("dataset has no rows")]
    EmptyDataset,
}

/// A numeric table with a designated target column, kept raw; transforms
/// happen at oracle-construction time.
#[derive(Debug, Clone)]
pub struct TabularDataset {
    feature_names: Vec<String>,
    /// Feature-major columns.
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
    standardize: bool,
}

/// Per-column affine transform fit on training data; constant columns are
/// dropped entirely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn identity(d: usize) -> Self {
        Self { kept: (0..d).collect(), mean: vec![0.0; d], std: vec![1.0; d] }
    }

    fn fit(columns: &[Vec<f64>], rows: &[usize]) -> Self {
        let mut kept = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let n = rows.len() as f64;
        for (idx, col) in columns.iter().enumerate() {
            let mu = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (col[r] - mu).powi(2)).sum::<f64>() / n;
            let sigma = var.sqrt();
            if sigma < 1e-12 {
                continue; // constant column
            }
            kept.push(idx);
            mean.push(mu);
            std.push(sigma);
        }
        Self { kept, mean, std }
    }

    fn transform(&self, columns: &[Vec<f64>], rows: &[usize]) -> Vec<Vec<f64>> {
        self.kept
            .iter()
            .enumerate()
            .map(|(out_idx, &col_idx)| {
                let mu = self.mean[out_idx];
                let sigma = self.std[out_idx];
                rows.iter().map(|&r| (columns[col_idx][r] - mu) / sigma).collect()
            })
            .collect()
    }
}

impl TabularDataset {
    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    pub fn row_count(&self) -> usize {
        self.target.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardize(&self) -> bool {
        self.standardize
    }

    pub fn from_columns(
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        target: Vec<f64>,
        standardize: bool,
    ) -> Result<Self, DataError> {
        if target.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        debug_assert!(columns.iter().all(|c| c.len() == target.len()));
        debug_assert_eq!(feature_names.len(), columns.len());
        Ok(Self { feature_names, columns, target, standardize })
    }

    /// Seeded shuffle split into disjoint train/test oracles. The test set
    /// takes `floor(n * test_fraction)` rows; standardization parameters
    /// come from the training rows only.
    pub fn split(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(SampleOracle, SampleOracle, Standardizer), DataError> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(DataError::DegenerateFraction(test_fraction));
        }
        let n = self.row_count();
        let test_size = (n as f64 * test_fraction).floor() as usize;
        if test_size == 0 {
            return Err(DataError::EmptySplit("test"));
        }
        if test_size >= n {
            return Err(DataError::EmptySplit("train"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let (test_rows, train_rows) = order.split_at(test_size);
        Ok(self.oracles_for(train_rows, test_rows))
    }

    fn oracles_for(
        &self,
        train_rows: &[usize],
        test_rows: &[usize],
    ) -> (SampleOracle, SampleOracle, Standardizer) {
        let standardizer = if self.standardize {
            Standardizer::fit(&self.columns, train_rows)
        } else {
            Standardizer::identity(self.columns.len())
        };
        let train_cols = standardizer.transform(&self.columns, train_rows);
        let test_cols = standardizer.transform(&self.columns, test_rows);
        let train_y = train_rows.iter().map(|&r| self.target[r]).collect();
        let test_y = test_rows.iter().map(|&r| self.target[r]).collect();
        let train = SampleOracle::new(train_cols, train_y).expect("non-empty train");
        let test = SampleOracle::new(test_cols, test_y).expect("non-empty test");
        (train, test, standardizer)
    }

    /// Oracle over the whole table, standardized on all rows when the flag
    /// is set.
    pub fn full_oracle(&self) -> (SampleOracle, Standardizer) {
        let rows: Vec<usize> = (0..self.row_count()).collect();
        let standardizer = if self.standardize {
            Standardizer::fit(&self.columns, &rows)
        } else {
            Standardizer::identity(self.columns.len())
        };
        let cols = standardizer.transform(&self.columns, &rows);
        let oracle = SampleOracle::new(cols, self.target.clone()).expect("non-empty");
        (oracle, standardizer)
    }

    /// FNV-1a fingerprint of the raw contents, recorded in experiment
    /// manifests.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: f64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for col in &self.columns {
            for &v in col {
                eat(v);
            }
        }
        for &v in &self.target {
            eat(v);
        }
        h
    }
}

/// Loads a CSV with a header row. Every non-target column becomes a
/// feature; all cells must parse as reals.
pub fn load_csv(
    path: impl AsRef<Path>,
    delimiter: u8,
    target_column: &str,
    standardize: bool,
) -> Result<TabularDataset, DataError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv(e),
        })?;
    let headers: Vec<String> =
        reader.headers().map_err(DataError::Csv)?.iter().map(|s| s.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(DataError::MissingHeader);
    }
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != target_idx).map(|(_, h)| h.clone()).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_names.len()];
    let mut target = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(DataError::Csv)?;
        let mut feature_slot = 0usize;
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| DataError::ParseError {
                row: row_idx + 2, // 1-based, counting the header
                column: headers.get(col_idx).cloned().unwrap_or_else(|| format!("#{col_idx}")),
                value: cell.to_string(),
            })?;
            if col_idx == target_idx {
                target.push(value);
            } else {
                columns[feature_slot].push(value);
                feature_slot += 1;
            }
        }
    }
    TabularDataset::from_columns(feature_names, columns, target, standardize)
}

/// Deterministic synthetic regression table: correlated features from a
/// few latent factors, a sparse linear signal, a noise floor, and a
/// shifted target mean so the intercept matters. Stands in for a real
/// tabular file when none is supplied.
pub fn synthetic_tabular(rows: usize, features: usize, seed: u64) -> TabularDataset {
    assert!(rows >= 2 && features >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = 3.min(features);
    let mut columns = vec![vec![0.0f64; rows]; features];
    let mut target = vec![0.0f64; rows];
    // fixed mixing pattern so the feature covariance is well-conditioned
    let loading = |j: usize| 0.5 + 0.4 * ((j % 5) as f64) / 4.0;
    let weight = |j: usize| match j % 4 {
        0 => 1.0,
        1 => -0.6,
        2 => 0.0,
        _ => 0.3,
    };
    let mut f = vec![0.0f64; factors];
    for r in 0..rows {
        for fi in f.iter_mut() {
            *fi = StandardNormal.sample(&mut rng);
        }
        let mut y = 5.0; // nonzero mean
        for (j, col) in columns.iter_mut().enumerate() {
            let own: f64 = StandardNormal.sample(&mut rng);
            let v = loading(j) * f[j % factors] + (1.0 - loading(j)) * own + 0.1 * j as f64;
            col[r] = v;
            y += weight(j) * v;
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        target[r] = y + 1.5 * noise;
    }
    TabularDataset::from_columns(
        (0..features).map(|j| format!("f{j}")).collect(),
        columns,
        target,
        true,
    )
    .expect("rows >= 2")
}

/// How the CLI names a dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetManifest {
    Csv { path: String, delimiter: char, target: String, standardize: bool },
    SyntheticTabular { rows: usize, features: usize, seed: u64 },
}

impl DatasetManifest {
    pub fn load(&self) -> Result<TabularDataset, DataError> {
        match self {
            DatasetManifest::Csv { path, delimiter, target, standardize } => {
                load_csv(path, *delimiter as u8, target, *standardize)
            }
            DatasetManifest::SyntheticTabular { rows, features, seed } => {
                Ok(synthetic_tabular(*rows, *features, *seed))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DatasetManifest::Csv { path, .. } => format!("csv:{path}"),
            DatasetManifest::SyntheticTabular { rows, features, seed } => {
                format!("synthetic_tabular:{rows}x{features}@{seed}")
            }
        }
    }
}
