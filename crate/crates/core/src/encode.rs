//! Fitted feature encoders that turn mixed-type datasets into real matrices.
//!
//! Three strategies are available:
//!
//! * `ordinal_standardize`: categories become their rank in the fitted
//!   vocabulary, then every column is standardized. Used by the density-based
//!   attacks, since Gaussian kernels handle one-hot blocks poorly.
//! * `one_hot_scale`: numeric columns standardized, categoricals expanded to
//!   raw 0/1 indicators. Used by the distance and classifier baselines.
//! * `ordinal_standardize_pca`: the ordinal encoding projected onto the
//!   leading principal components explaining at least 95% of the variance.
//!
//! Statistics (means, standard deviations, principal axes) and category
//! vocabularies may be fitted on different data; see [`fit_encoder_split`].
//! Output dimensions whose fitted standard deviation is zero are dropped.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{ColumnKind, Schema, TabularDataset, Value};
use crate::matrix::Matrix;

pub const PCA_VARIANCE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("datasets do not share the encoder's schema")]
    SchemaMismatch,
    #[error("need at least 2 rows to fit statistics, got {0}")]
    TooFewRows(usize),
    #[error("every output dimension is constant on the fit data")]
    AllConstant,
    #[error("column '{column}': category '{label}' was not seen when fitting")]
    UnseenCategory { column: String, label: String },
    #[error("inputs were encoded by different encoders")]
    EncoderMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OrdinalStandardize,
    OneHotScale,
    OrdinalStandardizePca,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::OrdinalStandardize => "ordinal_standardize",
            Strategy::OneHotScale => "one_hot_scale",
            Strategy::OrdinalStandardizePca => "ordinal_standardize_pca",
        }
    }
}

/// Mean and population standard deviation of one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum ColumnEncoding {
    /// `None` when the column was constant on the fit data and dropped.
    Numeric { scale: Option<Scale> },
    Ordinal {
        vocabulary: Vec<String>,
        scale: Option<Scale>,
    },
    OneHot { vocabulary: Vec<String> },
}

impl ColumnEncoding {
    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { scale } | ColumnEncoding::Ordinal { scale, .. } => {
                usize::from(scale.is_some())
            }
            ColumnEncoding::OneHot { vocabulary } => vocabulary.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One orthonormal principal axis per row, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Variance along each retained axis.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl Pca {
    pub fn retained(&self) -> usize {
        self.components.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub id: String,
    pub strategy: Strategy,
    pub schema: Schema,
    pub columns: Vec<ColumnEncoding>,
    /// Names of input columns dropped for being constant.
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<Pca>,
    pub stats_rows: usize,
    pub vocabulary_rows: usize,
}

/// Encoded records together with the id of the encoder that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: Matrix,
    pub encoder_id: String,
}

impl EncodedMatrix {
    /// Wraps an arbitrary matrix under a caller-chosen encoder id.
    pub fn raw(values: Matrix, encoder_id: impl Into<String>) -> Self {
        Self {
            values,
            encoder_id: encoder_id.into(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Fits statistics and vocabularies on the concatenation of `fit_data`.
pub fn fit_encoder(
    strategy: Strategy,
    fit_data: &[&TabularDataset],
) -> Result<Encoder, EncodingError> {
    fit_encoder_split(strategy, fit_data, &[])
}

/// Fits numeric statistics on `stats_data` only, and category vocabularies on
/// `stats_data` together with `vocabulary_data`.
pub fn fit_encoder_split(
    strategy: Strategy,
    stats_data: &[&TabularDataset],
    vocabulary_data: &[&TabularDataset],
) -> Result<Encoder, EncodingError> {
    let schema = stats_data
        .first()
        .ok_or(EncodingError::TooFewRows(0))?
        .schema()
        .clone();
    if stats_data
        .iter()
        .chain(vocabulary_data)
        .any(|d| d.schema() != &schema)
    {
        return Err(EncodingError::SchemaMismatch);
    }
    let stats_rows: usize = stats_data.iter().map(|d| d.len()).sum();
    if stats_rows < 2 {
        return Err(EncodingError::TooFewRows(stats_rows));
    }
    let vocabulary_rows: usize = vocabulary_data.iter().map(|d| d.len()).sum();
    let stat_rows = || stats_data.iter().flat_map(|d| d.rows().iter());

    let mut columns = Vec::with_capacity(schema.len());
    let mut dropped = Vec::new();
    for (j, col) in schema.columns().iter().enumerate() {
        let enc = match col.kind {
            ColumnKind::Numeric => {
                let values: Vec<f64> = stat_rows().map(|r| r[j].as_numeric().unwrap()).collect();
                ColumnEncoding::Numeric {
                    scale: scale_of(&values),
                }
            }
            ColumnKind::Categorical => {
                let mut seen = vec![false; col.categories.len()];
                for r in stat_rows().chain(vocabulary_data.iter().flat_map(|d| d.rows().iter())) {
                    seen[r[j].as_category().unwrap() as usize] = true;
                }
                let vocabulary: Vec<String> = col
                    .categories
                    .iter()
                    .zip(&seen)
                    .filter(|(_, &s)| s)
                    .map(|(c, _)| c.clone())
                    .collect();
                match strategy {
                    Strategy::OneHotScale => ColumnEncoding::OneHot { vocabulary },
                    Strategy::OrdinalStandardize | Strategy::OrdinalStandardizePca => {
                        let codes: Vec<f64> = stat_rows()
                            .map(|r| {
                                let label = &col.categories[r[j].as_category().unwrap() as usize];
                                ordinal_code(&vocabulary, label).unwrap() as f64
                            })
                            .collect();
                        ColumnEncoding::Ordinal {
                            vocabulary,
                            scale: scale_of(&codes),
                        }
                    }
                }
            }
        };
        if enc.width() == 0 {
            dropped.push(col.name.clone());
        }
        columns.push(enc);
    }
    if columns.iter().all(|c| c.width() == 0) {
        return Err(EncodingError::AllConstant);
    }

    let mut encoder = Encoder {
        id: String::new(),
        strategy,
        schema,
        columns,
        dropped,
        pca: None,
        stats_rows,
        vocabulary_rows,
    };
    if strategy == Strategy::OrdinalStandardizePca {
        let combined = concat_all(stats_data);
        let base = encoder.encode_base(&combined)?;
        encoder.pca = Some(fit_pca(&base, PCA_VARIANCE_THRESHOLD));
    }
    encoder.id = fingerprint(&encoder);
    Ok(encoder)
}

fn concat_all(parts: &[&TabularDataset]) -> TabularDataset {
    let mut acc = TabularDataset::empty(parts[0].schema().clone());
    for p in parts {
        acc = acc.concat(p).expect("schemas checked");
    }
    acc
}

fn scale_of(values: &[f64]) -> Option<Scale> {
    let (mean, std) = Matrix::column(values).column_moments(0);
    (std > 0.0).then_some(Scale { mean, std })
}

fn ordinal_code(vocabulary: &[String], label: &str) -> Option<usize> {
    vocabulary.binary_search_by(|v| v.as_str().cmp(label)).ok()
}

fn fingerprint(encoder: &Encoder) -> String {
    let body = serde_json::to_vec(encoder).expect("encoder serializes");
    let digest = Sha256::digest(&body);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Principal axes of the centered data, keeping the fewest leading axes whose
/// cumulative variance share reaches `threshold`.
fn fit_pca(data: &Matrix, threshold: f64) -> Pca {
    let n = data.nrows() as f64;
    let d = data.ncols();
    let mean: Vec<f64> = (0..d).map(|j| data.column_moments(j).0).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in data.rows_iter() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();

    let mut retained = 0;
    let mut cumulative = 0.0;
    for &ev in &eigenvalues {
        if ev <= 0.0 {
            break;
        }
        retained += 1;
        cumulative += ev;
        if cumulative >= threshold * total - 1e-12 * total {
            break;
        }
    }
    let components = order[..retained]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // sign convention: largest-magnitude loading is positive
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Pca {
        mean,
        components,
        explained_variance: eigenvalues[..retained].to_vec(),
        total_variance: total,
    }
}

impl Encoder {
    /// Output dimension of [`Encoder::encode`].
    pub fn output_dim(&self) -> usize {
        match &self.pca {
            Some(p) => p.retained(),
            None => self.columns.iter().map(ColumnEncoding::width).sum(),
        }
    }

    /// Output dimension before any PCA projection.
    fn base_dim(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    pub fn encode(&self, dataset: &TabularDataset) -> Result<EncodedMatrix, EncodingError> {
        let base = self.encode_base(dataset)?;
        let values = match &self.pca {
            None => base,
            Some(p) => project(&base, p),
        };
        Ok(EncodedMatrix {
            values,
            encoder_id: self.id.clone(),
        })
    }

    fn encode_base(&self, dataset: &TabularDataset) -> Result<Matrix, EncodingError> {
        if dataset.schema() != &self.schema {
            return Err(EncodingError::SchemaMismatch);
        }
        let width = self.base_dim();
        let mut out = Matrix::zeros(dataset.len(), width);
        for (i, row) in dataset.rows().iter().enumerate() {
            let dst = out.row_mut(i);
            let mut at = 0;
            for ((value, enc), col) in row.iter().zip(&self.columns).zip(self.schema.columns()) {
                match (enc, *value) {
                    (ColumnEncoding::Numeric { scale }, Value::Numeric(x)) => {
                        if let Some(s) = scale {
                            dst[at] = (x - s.mean) / s.std;
                            at += 1;
                        }
                    }
                    (ColumnEncoding::Ordinal { vocabulary, scale }, Value::Category(c)) => {
                        let label = &col.categories[c as usize];
                        let code = ordinal_code(vocabulary, label).ok_or_else(|| {
                            EncodingError::UnseenCategory {
                                column: col.name.clone(),
                                label: label.clone(),
                            }
                        })?;
                        if let Some(s) = scale {
                            dst[at] = (code as f64 - s.mean) / s.std;
                            at += 1;
                        }
                    }
                    (ColumnEncoding::OneHot { vocabulary }, Value::Category(c)) => {
                        let label = &col.categories[c as usize];
                        let code = ordinal_code(vocabulary, label).ok_or_else(|| {
                            EncodingError::UnseenCategory {
                                column: col.name.clone(),
                                label: label.clone(),
                            }
                        })?;
                        dst[at + code] = 1.0;
                        at += vocabulary.len();
                    }
                    _ => return Err(EncodingError::SchemaMismatch),
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoder serializes")
    }
}

fn project(base: &Matrix, pca: &Pca) -> Matrix {
    let mut out = Matrix::zeros(base.nrows(), pca.retained());
    for i in 0..base.nrows() {
        let row = base.row(i);
        let dst = out.row_mut(i);
        for (k, axis) in pca.components.iter().enumerate() {
            dst[k] = row
                .iter()
                .zip(&pca.mean)
                .zip(axis)
                .map(|((x, m), a)| (x - m) * a)
                .sum();
        }
    }
    out
}

/// Checks that every matrix carries the same encoder id.
pub fn ensure_same_encoder(parts: &[&EncodedMatrix]) -> Result<(), EncodingError> {
    match parts.split_first() {
        Some((first, rest)) if rest.iter().any(|m| m.encoder_id != first.encoder_id) => {
            Err(EncodingError::EncoderMismatch)
        }
        _ => Ok(()),
    }
}
