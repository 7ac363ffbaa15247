//! Membership scoring functions. Every attack maps encoded synthetic data `S`,
//! (optionally) a reference sample `R` and test points `X` to one real score
//! per test point, where larger means "more likely a training member".
//!
//! Scoring is parallel across test points. Each score depends only on its own
//! test row and read-only shared state, so the output is bitwise identical to
//! a sequential run.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::density::{silverman_bandwidth, AugmentedBandwidth, DensityError, KdeModel};
use crate::encode::{ensure_same_encoder, EncodedMatrix, EncodingError, Strategy};
use crate::matrix::Matrix;
use crate::neighbors::{knn, nearest_distance, NeighborError};

pub const DEFAULT_GEN_LRA_K: usize = 10;
pub const DEFAULT_DPI_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Neighbors(#[from] NeighborError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("{0} requires a reference dataset")]
    MissingReference(AttackId),
    #[error("classifier needs both synthetic and reference rows")]
    SingleClass,
    #[error("test points differ in dimension from the synthetic data")]
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackId {
    GenLra,
    Domias,
    Dcr,
    DcrDiff,
    Mc,
    Dpi,
    Logan,
}

impl AttackId {
    pub const ALL: [AttackId; 7] = [
        AttackId::GenLra,
        AttackId::Domias,
        AttackId::Dcr,
        AttackId::DcrDiff,
        AttackId::Mc,
        AttackId::Dpi,
        AttackId::Logan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackId::GenLra => "gen_lra",
            AttackId::Domias => "domias",
            AttackId::Dcr => "dcr",
            AttackId::DcrDiff => "dcr_diff",
            AttackId::Mc => "mc",
            AttackId::Dpi => "dpi",
            AttackId::Logan => "logan",
        }
    }

    pub fn needs_reference(self) -> bool {
        !matches!(self, AttackId::Dcr | AttackId::Mc)
    }

    /// Density attacks use ordinal codes; everything else one-hot.
    pub fn default_encoding(self) -> Strategy {
        match self {
            AttackId::GenLra | AttackId::Domias => Strategy::OrdinalStandardize,
            _ => Strategy::OneHotScale,
        }
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        AttackId::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| format!("unknown attack '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScores {
    pub attack: AttackId,
    pub params: BTreeMap<String, Json>,
    pub scores: Vec<f64>,
}

impl AttackScores {
    fn new(attack: AttackId, params: BTreeMap<String, Json>, scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        Self {
            attack,
            params,
            scores,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scores serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipPrediction {
    pub bits: Vec<u8>,
    pub threshold: f64,
}

/// `bits[i] = 1` iff `scores[i] > threshold`.
pub fn decide(scores: &[f64], threshold: f64) -> MembershipPrediction {
    MembershipPrediction {
        bits: scores.iter().map(|&s| u8::from(s > threshold)).collect(),
        threshold,
    }
}

/// How many synthetic neighbors of each test point Gen-LRA sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Locality {
    Neighbors(usize),
    /// Every synthetic row; the un-localized statistic.
    All,
}

impl Default for Locality {
    fn default() -> Self {
        Locality::Neighbors(DEFAULT_GEN_LRA_K)
    }
}

impl Locality {
    fn resolve(self, n_synthetic: usize) -> Result<usize, AttackError> {
        match self {
            Locality::All => Ok(n_synthetic),
            Locality::Neighbors(k) if (1..=n_synthetic).contains(&k) => Ok(k),
            Locality::Neighbors(k) => Err(AttackError::InvalidParam(format!(
                "k = {k} outside 1..={n_synthetic}"
            ))),
        }
    }
}

impl Serialize for Locality {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Locality::Neighbors(k) => s.serialize_u64(*k as u64),
            Locality::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for Locality {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) => Ok(Locality::Neighbors(k)),
            Raw::Word(w) if w == "all" || w == "N" => Ok(Locality::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a positive integer or \"all\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenLraConfig {
    #[serde(default)]
    pub k: Locality,
    #[serde(default)]
    pub bandwidth: AugmentedBandwidth,
}

fn check_dims(parts: &[&EncodedMatrix]) -> Result<(), AttackError> {
    ensure_same_encoder(parts)?;
    let d = parts[0].ncols();
    if parts.iter().any(|m| m.ncols() != d) {
        return Err(AttackError::DimensionMismatch);
    }
    Ok(())
}

/// Likelihood-ratio influence of each test point on its `k` nearest
/// synthetic rows:
/// `Σ_{s ∈ kNN_S(x)} log p̂(s | R ∪ {x}) − log p̂(s | R)`,
/// with Gaussian KDE surrogates.
pub fn gen_lra(
    synthetic: &EncodedMatrix,
    reference: &EncodedMatrix,
    test: &EncodedMatrix,
    config: &GenLraConfig,
) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, reference, test])?;
    if reference.nrows() < 2 {
        return Err(DensityError::TooFewPoints {
            needed: 2,
            got: reference.nrows(),
        }
        .into());
    }
    let k = config.k.resolve(synthetic.nrows())?;
    let s = &synthetic.values;
    let r = &reference.values;
    let model = KdeModel::fit(r, None)?;
    // log p̂(s | R) for every synthetic row, shared by all test points
    let base = model.logpdf(s)?;

    let scores: Vec<f64> = test
        .values
        .rows_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x| -> Result<f64, AttackError> {
            let close = knn(x, s, k)?;
            match config.bandwidth {
                AugmentedBandwidth::Shared => Ok(close
                    .indices
                    .iter()
                    .map(|&i| model.augment_from_base(x, s.row(i), base[i]) - base[i])
                    .sum()),
                AugmentedBandwidth::Refit => {
                    let point = Matrix::from_rows(&[x]).expect("single row");
                    let augmented = r
                        .vstack(&point)
                        .map_err(|_| AttackError::DimensionMismatch)?;
                    let refit = KdeModel::fit(&augmented, Some(silverman_bandwidth(&augmented)?))?;
                    let mut total = 0.0;
                    for &i in &close.indices {
                        total += refit.logpdf_one(s.row(i))? - base[i];
                    }
                    Ok(total)
                }
            }
        })
        .collect::<Result<_, _>>()?;

    let mut params = BTreeMap::new();
    params.insert("k".into(), json!(k));
    params.insert("bandwidth".into(), serde_json::to_value(config.bandwidth).unwrap());
    Ok(AttackScores::new(AttackId::GenLra, params, scores))
}

/// Log density ratio `log p̂_S(x) − log p̂_R(x)`.
pub fn domias(
    synthetic: &EncodedMatrix,
    reference: &EncodedMatrix,
    test: &EncodedMatrix,
) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, reference, test])?;
    let ps = KdeModel::fit(&synthetic.values, None)?;
    let pr = KdeModel::fit(&reference.values, None)?;
    let rows: Vec<&[f64]> = test.values.rows_iter().collect();
    let scores = rows
        .into_par_iter()
        .map(|x| Ok(ps.logpdf_one(x)? - pr.logpdf_one(x)?))
        .collect::<Result<Vec<f64>, DensityError>>()?;
    Ok(AttackScores::new(AttackId::Domias, BTreeMap::new(), scores))
}

fn nearest_all(test: &Matrix, data: &Matrix) -> Result<Vec<f64>, NeighborError> {
    let rows: Vec<&[f64]> = test.rows_iter().collect();
    rows.into_par_iter()
        .map(|x| nearest_distance(x, data))
        .collect()
}

/// Negated distance to the closest synthetic record.
pub fn dcr(synthetic: &EncodedMatrix, test: &EncodedMatrix) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, test])?;
    let scores = nearest_all(&test.values, &synthetic.values)?
        .into_iter()
        .map(|d| -d)
        .collect();
    Ok(AttackScores::new(AttackId::Dcr, BTreeMap::new(), scores))
}

/// Distance to the closest reference record minus distance to the closest
/// synthetic record.
pub fn dcr_diff(
    synthetic: &EncodedMatrix,
    reference: &EncodedMatrix,
    test: &EncodedMatrix,
) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, reference, test])?;
    let ds = nearest_all(&test.values, &synthetic.values)?;
    let dr = nearest_all(&test.values, &reference.values)?;
    let scores = dr.iter().zip(&ds).map(|(r, s)| r - s).collect();
    Ok(AttackScores::new(AttackId::DcrDiff, BTreeMap::new(), scores))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Fraction of synthetic rows within `radius` of each test point. The
/// default radius is the median nearest-synthetic distance over the test set.
pub fn mc(
    synthetic: &EncodedMatrix,
    test: &EncodedMatrix,
    radius: Option<f64>,
) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, test])?;
    if synthetic.nrows() == 0 {
        return Err(NeighborError::EmptyData.into());
    }
    let radius = match radius {
        Some(r) if r.is_finite() && r > 0.0 => r,
        Some(r) => return Err(AttackError::InvalidParam(format!("radius {r} must be positive"))),
        None => {
            if test.nrows() == 0 {
                return Err(AttackError::InvalidParam("empty test set".into()));
            }
            median(&nearest_all(&test.values, &synthetic.values)?)
        }
    };
    let s = &synthetic.values;
    let n = s.nrows() as f64;
    let r2 = radius * radius;
    let rows: Vec<&[f64]> = test.values.rows_iter().collect();
    let scores = rows
        .into_par_iter()
        .map(|x| {
            let count = s
                .rows_iter()
                .filter(|row| row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
                .count();
            count as f64 / n
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert("radius".into(), json!(radius));
    Ok(AttackScores::new(AttackId::Mc, params, scores))
}

/// Share of synthetic rows among the `k` nearest rows of `S ⊎ R`. Synthetic
/// rows are stacked first, so distance ties favor them.
pub fn dpi(
    synthetic: &EncodedMatrix,
    reference: &EncodedMatrix,
    test: &EncodedMatrix,
    k: usize,
) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, reference, test])?;
    let total = synthetic.nrows() + reference.nrows();
    if k == 0 || k > total {
        return Err(AttackError::InvalidParam(format!("k = {k} outside 1..={total}")));
    }
    let stacked = synthetic
        .values
        .vstack(&reference.values)
        .map_err(|_| AttackError::DimensionMismatch)?;
    let n_s = synthetic.nrows();
    let rows: Vec<&[f64]> = test.values.rows_iter().collect();
    let scores = rows
        .into_par_iter()
        .map(|x| {
            let hit = knn(x, &stacked, k)?;
            Ok(hit.indices.iter().filter(|&&i| i < n_s).count() as f64 / k as f64)
        })
        .collect::<Result<Vec<f64>, NeighborError>>()?;
    let mut params = BTreeMap::new();
    params.insert("k".into(), json!(k));
    Ok(AttackScores::new(AttackId::Dpi, params, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoganConfig {
    #[serde(default = "LoganConfig::default_iterations")]
    pub iterations: usize,
    #[serde(default = "LoganConfig::default_step")]
    pub step: f64,
    #[serde(default = "LoganConfig::default_l2")]
    pub l2: f64,
}

impl LoganConfig {
    fn default_iterations() -> usize {
        500
    }
    fn default_step() -> f64 {
        0.1
    }
    fn default_l2() -> f64 {
        1e-3
    }
}

impl Default for LoganConfig {
    fn default() -> Self {
        Self {
            iterations: Self::default_iterations(),
            step: Self::default_step(),
            l2: Self::default_l2(),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression fitted by full-batch gradient descent
/// from zero weights. The bias is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn train(
        features: &Matrix,
        labels: &[f64],
        config: &LoganConfig,
    ) -> Result<Self, AttackError> {
        let n = features.nrows();
        let d = features.ncols();
        if labels.iter().all(|&y| y == 1.0) || labels.iter().all(|&y| y == 0.0) {
            return Err(AttackError::SingleClass);
        }
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut grad = vec![0.0; d];
        let inv_n = 1.0 / n as f64;
        for _ in 0..config.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (row, &y) in features.rows_iter().zip(labels) {
                let z: f64 = b + row.iter().zip(&w).map(|(x, wj)| x * wj).sum::<f64>();
                let err = sigmoid(z) - y;
                grad_b += err;
                for (g, x) in grad.iter_mut().zip(row) {
                    *g += err * x;
                }
            }
            for (wj, g) in w.iter_mut().zip(&grad) {
                *wj -= config.step * (g * inv_n + config.l2 * *wj);
            }
            b -= config.step * grad_b * inv_n;
        }
        Ok(Self { weights: w, bias: b })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
    }
}

/// Probability of "synthetic" under a classifier trained to separate
/// synthetic (label 1) from reference (label 0) rows.
pub fn logan(
    synthetic: &EncodedMatrix,
    reference: &EncodedMatrix,
    test: &EncodedMatrix,
    config: &LoganConfig,
) -> Result<AttackScores, AttackError> {
    check_dims(&[synthetic, reference, test])?;
    if synthetic.nrows() == 0 || reference.nrows() == 0 {
        return Err(AttackError::SingleClass);
    }
    let features = synthetic
        .values
        .vstack(&reference.values)
        .map_err(|_| AttackError::DimensionMismatch)?;
    let labels: Vec<f64> = (0..features.nrows())
        .map(|i| if i < synthetic.nrows() { 1.0 } else { 0.0 })
        .collect();
    let model = LogisticModel::train(&features, &labels, config)?;
    let scores = test.values.rows_iter().map(|x| model.predict(x)).collect();
    let mut params = BTreeMap::new();
    params.insert("iterations".into(), json!(config.iterations));
    params.insert("step".into(), json!(config.step));
    params.insert("l2".into(), json!(config.l2));
    Ok(AttackScores::new(AttackId::Logan, params, scores))
}

/// An attack together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum AttackSpec {
    GenLra {
        #[serde(default)]
        k: Locality,
        #[serde(default)]
        bandwidth: AugmentedBandwidth,
    },
    Domias,
    Dcr,
    DcrDiff,
    Mc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    Dpi {
        #[serde(default = "default_dpi_k")]
        k: usize,
    },
    Logan {
        #[serde(flatten)]
        config: LoganConfig,
    },
}

fn default_dpi_k() -> usize {
    DEFAULT_DPI_K
}

impl AttackSpec {
    /// The attack with its default parameters.
    pub fn default_for(id: AttackId) -> Self {
        match id {
            AttackId::GenLra => AttackSpec::GenLra {
                k: Locality::default(),
                bandwidth: AugmentedBandwidth::default(),
            },
            AttackId::Domias => AttackSpec::Domias,
            AttackId::Dcr => AttackSpec::Dcr,
            AttackId::DcrDiff => AttackSpec::DcrDiff,
            AttackId::Mc => AttackSpec::Mc { radius: None },
            AttackId::Dpi => AttackSpec::Dpi { k: DEFAULT_DPI_K },
            AttackId::Logan => AttackSpec::Logan {
                config: LoganConfig::default(),
            },
        }
    }

    pub fn id(&self) -> AttackId {
        match self {
            AttackSpec::GenLra { .. } => AttackId::GenLra,
            AttackSpec::Domias => AttackId::Domias,
            AttackSpec::Dcr => AttackId::Dcr,
            AttackSpec::DcrDiff => AttackId::DcrDiff,
            AttackSpec::Mc { .. } => AttackId::Mc,
            AttackSpec::Dpi { .. } => AttackId::Dpi,
            AttackSpec::Logan { .. } => AttackId::Logan,
        }
    }

    /// Scores `test`. `reference` may be `None` only for attacks that do not
    /// use it.
    pub fn run(
        &self,
        synthetic: &EncodedMatrix,
        reference: Option<&EncodedMatrix>,
        test: &EncodedMatrix,
    ) -> Result<AttackScores, AttackError> {
        let need_ref = || reference.ok_or(AttackError::MissingReference(self.id()));
        match *self {
            AttackSpec::GenLra { k, bandwidth } => {
                gen_lra(synthetic, need_ref()?, test, &GenLraConfig { k, bandwidth })
            }
            AttackSpec::Domias => domias(synthetic, need_ref()?, test),
            AttackSpec::Dcr => dcr(synthetic, test),
            AttackSpec::DcrDiff => dcr_diff(synthetic, need_ref()?, test),
            AttackSpec::Mc { radius } => mc(synthetic, test, radius),
            AttackSpec::Dpi { k } => dpi(synthetic, need_ref()?, test, k),
            AttackSpec::Logan { config } => logan(synthetic, need_ref()?, test, &config),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id().as_str())
    }
}
