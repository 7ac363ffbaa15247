//! Small synthetic-data generators with a controllable amount of overfitting.
//!
//! * `memorizer` emits noised copies of training rows (maximal leakage),
//! * `parametric_fit` samples from independent marginals fitted to the
//!   training rows (smooth, little leakage),
//! * `population_oracle` ignores the training rows and samples the true
//!   population (no leakage).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnKind, ColumnSchema, IngestError, Schema, TabularDataset, Value};
use crate::rng::{self, Rng, Stream};

pub const DEFAULT_RESAMPLE_PROBABILITY: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("generator needs a non-empty training set")]
    EmptyTraining,
    #[error("population oracle has no population to sample")]
    MissingPopulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal covariance.
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericPart {
    pub columns: Vec<String>,
    pub components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub categories: Vec<String>,
    pub probabilities: Vec<f64>,
}

/// Gaussian mixture over the numeric columns, independent tables for the
/// categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<NumericPart>,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
}

fn sums_to_one(p: &[f64]) -> bool {
    (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::InvalidPopulation(m));
        if let Some(num) = &self.numeric {
            let d = num.columns.len();
            if d == 0 || num.components.is_empty() {
                return bad("numeric part needs columns and at least one component".into());
            }
            let weights: Vec<f64> = num.components.iter().map(|c| c.weight).collect();
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !sums_to_one(&weights) {
                return bad("mixture weights must be non-negative and sum to 1".into());
            }
            for (i, c) in num.components.iter().enumerate() {
                if c.mean.len() != d || c.variance.len() != d {
                    return bad(format!("component {i} does not have {d} dimensions"));
                }
                if c.mean.iter().any(|m| !m.is_finite())
                    || c.variance.iter().any(|v| !(v.is_finite() && *v > 0.0))
                {
                    return bad(format!("component {i} needs finite means and positive variances"));
                }
            }
        }
        for c in &self.categorical {
            if c.categories.is_empty() || c.categories.len() != c.probabilities.len() {
                return bad(format!("column '{}' needs one probability per category", c.name));
            }
            if c.probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) || !sums_to_one(&c.probabilities) {
                return bad(format!("probabilities of '{}' must sum to 1", c.name));
            }
            let mut sorted = c.categories.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != c.categories.len() {
                return bad(format!("column '{}' repeats a category", c.name));
            }
        }
        if self.numeric.is_none() && self.categorical.is_empty() {
            return bad("population has no columns".into());
        }
        self.schema().map(|_| ())
    }

    /// Numeric columns first, then categorical columns.
    pub fn schema(&self) -> Result<Schema, GeneratorError> {
        let mut cols: Vec<ColumnSchema> = self
            .numeric
            .iter()
            .flat_map(|n| n.columns.iter().map(ColumnSchema::numeric))
            .collect();
        cols.extend(
            self.categorical
                .iter()
                .map(|c| ColumnSchema::categorical(c.name.clone(), c.categories.iter().cloned())),
        );
        Schema::new(cols).map_err(|e: IngestError| GeneratorError::InvalidPopulation(e.to_string()))
    }
}

/// Index drawn with probability proportional to `weights` (which sum to 1).
fn draw_index(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` i.i.d. rows from the population.
pub fn sample_population(
    spec: &PopulationSpec,
    n: usize,
    seed: u64,
) -> Result<TabularDataset, GeneratorError> {
    sample_with(spec, n, &mut rng::seeded_stream(seed, Stream::Population))
}

fn sample_with(
    spec: &PopulationSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<TabularDataset, GeneratorError> {
    spec.validate()?;
    let schema = spec.schema()?;
    let weights: Vec<f64> = spec
        .numeric
        .iter()
        .flat_map(|n| n.components.iter().map(|c| c.weight))
        .collect();
    // spec category order -> schema (sorted) code
    let code_maps: Vec<Vec<u32>> = spec
        .categorical
        .iter()
        .map(|c| {
            let col = ColumnSchema::categorical(c.name.clone(), c.categories.iter().cloned());
            c.categories
                .iter()
                .map(|l| col.category_code(l).unwrap())
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(schema.len());
        if let Some(num) = &spec.numeric {
            let comp = &num.components[draw_index(&weights, rng)];
            for (m, v) in comp.mean.iter().zip(&comp.variance) {
                row.push(Value::Numeric(m + v.sqrt() * normal(rng)));
            }
        }
        for (c, codes) in spec.categorical.iter().zip(&code_maps) {
            row.push(Value::Category(codes[draw_index(&c.probabilities, rng)]));
        }
        rows.push(row);
    }
    Ok(TabularDataset::new(schema, rows).expect("sampled rows fit the schema"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Memorizer {
        noise_fraction: f64,
        #[serde(default = "default_resample")]
        resample_probability: f64,
    },
    ParametricFit,
    PopulationOracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        population: Option<PopulationSpec>,
    },
}

fn default_resample() -> f64 {
    DEFAULT_RESAMPLE_PROBABILITY
}

impl GeneratorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            GeneratorSpec::Memorizer { .. } => "memorizer",
            GeneratorSpec::ParametricFit => "parametric_fit",
            GeneratorSpec::PopulationOracle { .. } => "population_oracle",
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        match self {
            GeneratorSpec::Memorizer {
                noise_fraction,
                resample_probability,
            } => {
                if !(noise_fraction.is_finite() && *noise_fraction >= 0.0) {
                    return Err(GeneratorError::InvalidGenerator(
                        "noise_fraction must be finite and >= 0".into(),
                    ));
                }
                if !(0.0..=1.0).contains(resample_probability) {
                    return Err(GeneratorError::InvalidGenerator(
                        "resample_probability must lie in [0, 1]".into(),
                    ));
                }
                Ok(())
            }
            GeneratorSpec::ParametricFit => Ok(()),
            GeneratorSpec::PopulationOracle { population } => match population {
                Some(p) => p.validate(),
                None => Ok(()),
            },
        }
    }
}

fn numeric_std(train: &TabularDataset, j: usize) -> (f64, f64) {
    let v = train.numeric_column(j);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `m` synthetic rows from `gen` trained on `train`.
pub fn generate(
    gen: &GeneratorSpec,
    train: &TabularDataset,
    m: usize,
    seed: u64,
) -> Result<TabularDataset, GeneratorError> {
    gen.validate()?;
    let mut rng = rng::seeded_stream(seed, Stream::Generator);
    let schema = train.schema();
    match gen {
        GeneratorSpec::PopulationOracle { population } => {
            let pop = population.as_ref().ok_or(GeneratorError::MissingPopulation)?;
            sample_with(pop, m, &mut rng)
        }
        _ if train.is_empty() => Err(GeneratorError::EmptyTraining),
        GeneratorSpec::Memorizer {
            noise_fraction,
            resample_probability,
        } => {
            let moments: Vec<(f64, f64)> = schema
                .columns()
                .iter()
                .enumerate()
                .map(|(j, c)| match c.kind {
                    ColumnKind::Numeric => numeric_std(train, j),
                    ColumnKind::Categorical => (0.0, 0.0),
                })
                .collect();
            let n = train.len();
            let mut rows = Vec::with_capacity(m);
            for _ in 0..m {
                let src = &train.rows()[rng.random_range(0..n)];
                let row = src
                    .iter()
                    .enumerate()
                    .map(|(j, v)| match *v {
                        Value::Numeric(x) => {
                            Value::Numeric(x + noise_fraction * moments[j].1 * normal(&mut rng))
                        }
                        Value::Category(c) => {
                            if rng.random::<f64>() < *resample_probability {
                                train.rows()[rng.random_range(0..n)][j]
                            } else {
                                Value::Category(c)
                            }
                        }
                    })
                    .collect();
                rows.push(row);
            }
            Ok(TabularDataset::new(schema.clone(), rows).expect("rows fit the schema"))
        }
        GeneratorSpec::ParametricFit => {
            let n = train.len();
            let moments: Vec<(f64, f64)> = schema
                .columns()
                .iter()
                .enumerate()
                .map(|(j, c)| match c.kind {
                    ColumnKind::Numeric => numeric_std(train, j),
                    ColumnKind::Categorical => (0.0, 0.0),
                })
                .collect();
            let mut rows = Vec::with_capacity(m);
            for _ in 0..m {
                let row = schema
                    .columns()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| match c.kind {
                        ColumnKind::Numeric => {
                            let (mean, sd) = moments[j];
                            Value::Numeric(mean + sd * normal(&mut rng))
                        }
                        ColumnKind::Categorical => train.rows()[rng.random_range(0..n)][j],
                    })
                    .collect();
                rows.push(row);
            }
            Ok(TabularDataset::new(schema.clone(), rows).expect("rows fit the schema"))
        }
    }
}

/// Fraction of synthetic rows that occur verbatim in `train`.
pub fn identical_match_fraction(synthetic: &TabularDataset, train: &TabularDataset) -> f64 {
    if synthetic.is_empty() {
        return 0.0;
    }
    let hits = synthetic
        .rows()
        .iter()
        .filter(|s| train.rows().iter().any(|t| t == *s))
        .count();
    hits as f64 / synthetic.len() as f64
}
