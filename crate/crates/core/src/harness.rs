//! Benchmark orchestration.
//!
//! One *cell* is a (generator, attack, n, seed) tuple. For each cell the
//! harness draws 3n population rows, splits them into disjoint T/R/H sets,
//! trains the generator on T to produce |S| = n synthetic rows, scores the
//! balanced test set X = T ⊎ H (labels 1 for T, 0 for H) and evaluates.
//! Cells are independent and deterministic in (config, seed): T/R/H depend
//! only on the seed, so every generator and attack sees the same split.
//!
//! Output layout:
//!
//! ```text
//! out_dir/config.json
//! out_dir/cells/<config-hash>/<generator>_<attack>_<n>_<seed>.json
//! out_dir/summary.json
//! out_dir/summary.txt
//! out_dir/timings.json
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::{AttackScores, AttackSpec};
use crate::data::{load_csv, split_disjoint, TabularDataset};
use crate::encode::{fit_encoder_split, Encoder, Strategy};
use crate::eval::{aggregate, evaluate, render_table, EvalReport, ReportEntry, Summary};
use crate::toygen::{generate, sample_population, GeneratorSpec, PopulationSpec};

/// Environment variable consulted for the default output directory.
pub const OUT_DIR_ENV: &str = "GENLRA_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    Split,
    Generate,
    Encode,
    Score,
    Evaluate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Sample => "sample",
            Stage::Split => "split",
            Stage::Generate => "generate",
            Stage::Encode => "encode",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

fn stage_err(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    Spec(PopulationSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: GeneratorSpec,
}

impl GeneratorEntry {
    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.spec.kind_name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Overrides the attack's default encoding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<Strategy>,
    #[serde(flatten)]
    pub spec: AttackSpec,
}

impl AttackEntry {
    pub fn new(spec: AttackSpec) -> Self {
        Self {
            label: None,
            encoding: None,
            spec,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.spec.id().as_str().to_string())
    }

    pub fn encoding(&self) -> Strategy {
        self.encoding.unwrap_or_else(|| self.spec.id().default_encoding())
    }
}

/// Which rows the encoders are fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFit {
    /// Statistics from S only; category vocabularies from S ∪ R ∪ X.
    #[default]
    SyntheticStats,
    /// Statistics and vocabularies from S ∪ R ∪ X.
    Pooled,
}

/// The datasets an encoder may be fitted on. Training and holdout sets are
/// only reachable through the unlabeled test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRole {
    Synthetic,
    Reference,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitPlan {
    pub stats: Vec<DataRole>,
    pub vocabulary: Vec<DataRole>,
}

impl EncoderFit {
    pub fn plan(self) -> FitPlan {
        let all = vec![DataRole::Synthetic, DataRole::Reference, DataRole::Test];
        match self {
            EncoderFit::SyntheticStats => FitPlan {
                stats: vec![DataRole::Synthetic],
                vocabulary: all,
            },
            EncoderFit::Pooled => FitPlan {
                stats: all.clone(),
                vocabulary: all,
            },
        }
    }
}

fn default_fpr_levels() -> Vec<f64> {
    crate::eval::DEFAULT_FPR_LEVELS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub population: PopulationSource,
    pub generators: Vec<GeneratorEntry>,
    pub attacks: Vec<AttackEntry>,
    pub n_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_fpr_levels")]
    pub fpr_levels: Vec<f64>,
    #[serde(default)]
    pub encoder_fit: EncoderFit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Run cells on the rayon pool instead of one after another.
    #[serde(default)]
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            HarnessError::Config(format!("at {}: {}", e.path(), e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.generators.is_empty() {
            return bad("generators: list is empty".into());
        }
        if self.attacks.is_empty() {
            return bad("attacks: list is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds: list is empty".into());
        }
        if self.n_sizes.is_empty() || self.n_sizes.contains(&0) {
            return bad("n_sizes: must be a non-empty list of positive integers".into());
        }
        if let Some(&a) = self.fpr_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("fpr_levels: {a} is outside (0, 1)"));
        }
        let mut names = HashSet::new();
        for (i, g) in self.generators.iter().enumerate() {
            if !names.insert(g.name()) {
                return bad(format!("generators[{i}]: duplicate name '{}'", g.name()));
            }
            if let Err(e) = g.spec.validate() {
                return bad(format!("generators[{i}]: {e}"));
            }
            if let GeneratorSpec::PopulationOracle { population: None } = g.spec {
                if !matches!(self.population, PopulationSource::Spec(_)) {
                    return bad(format!(
                        "generators[{i}]: population_oracle needs a population spec when the source is a CSV"
                    ));
                }
            }
        }
        let mut labels = HashSet::new();
        for (i, a) in self.attacks.iter().enumerate() {
            if !labels.insert(a.label()) {
                return bad(format!("attacks[{i}]: duplicate label '{}'", a.label()));
            }
        }
        for label in names.iter().chain(&labels) {
            if label.is_empty() || label.contains(['/', '\\']) {
                return bad(format!("'{label}' is not usable in a file name"));
            }
        }
        if let PopulationSource::Spec(p) = &self.population {
            if let Err(e) = p.validate() {
                return bad(format!("population: {e}"));
            }
        }
        Ok(())
    }

    /// Digest of everything that affects cell outputs.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        canonical.parallel = false;
        let body = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&body)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn source_name(&self) -> String {
        match &self.population {
            PopulationSource::Spec(_) => "population".into(),
            PopulationSource::Csv(p) => p
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

/// Population source with any CSV already loaded.
#[derive(Debug, Clone)]
pub enum LoadedSource {
    Spec(PopulationSpec),
    Table(TabularDataset),
}

impl LoadedSource {
    pub fn load(source: &PopulationSource) -> Result<Self, HarnessError> {
        match source {
            PopulationSource::Spec(s) => Ok(LoadedSource::Spec(s.clone())),
            PopulationSource::Csv(path) => Ok(LoadedSource::Table(
                load_csv(path, None).map_err(|e| stage_err(Stage::Sample)(&e))?,
            )),
        }
    }

    fn population(&self) -> Option<&PopulationSpec> {
        match self {
            LoadedSource::Spec(s) => Some(s),
            LoadedSource::Table(_) => None,
        }
    }
}

/// Everything one cell works with.
#[derive(Debug, Clone)]
pub struct CellData {
    pub train: TabularDataset,
    pub reference: TabularDataset,
    pub holdout: TabularDataset,
    pub synthetic: TabularDataset,
    /// Train rows followed by holdout rows.
    pub test: TabularDataset,
    pub labels: Vec<u8>,
}

impl CellData {
    pub fn role(&self, role: DataRole) -> &TabularDataset {
        match role {
            DataRole::Synthetic => &self.synthetic,
            DataRole::Reference => &self.reference,
            DataRole::Test => &self.test,
        }
    }
}

/// Samples, splits and generates for one (generator, n, seed).
pub fn prepare_cell(
    source: &LoadedSource,
    generator: &GeneratorSpec,
    n: usize,
    seed: u64,
) -> Result<CellData, HarnessError> {
    let pool = match source {
        LoadedSource::Spec(spec) => {
            sample_population(spec, 3 * n, seed).map_err(|e| stage_err(Stage::Sample)(&e))?
        }
        LoadedSource::Table(t) => t.clone(),
    };
    let split = split_disjoint(&pool, n, seed).map_err(|e| stage_err(Stage::Split)(&e))?;
    let generator = match generator {
        GeneratorSpec::PopulationOracle { population: None } => GeneratorSpec::PopulationOracle {
            population: source.population().cloned(),
        },
        g => g.clone(),
    };
    let synthetic =
        generate(&generator, &split.train, n, seed).map_err(|e| stage_err(Stage::Generate)(&e))?;
    let test = split
        .train
        .concat(&split.holdout)
        .map_err(|e| stage_err(Stage::Split)(&e))?;
    let labels = std::iter::repeat_n(1u8, split.train.len())
        .chain(std::iter::repeat_n(0u8, split.holdout.len()))
        .collect();
    Ok(CellData {
        train: split.train,
        reference: split.reference,
        holdout: split.holdout,
        synthetic,
        test,
        labels,
    })
}

/// Fits an encoder on the roles named by `plan`.
pub fn fit_cell_encoder(
    strategy: Strategy,
    plan: &FitPlan,
    cell: &CellData,
) -> Result<Encoder, HarnessError> {
    let stats: Vec<&TabularDataset> = plan.stats.iter().map(|&r| cell.role(r)).collect();
    let vocab: Vec<&TabularDataset> = plan.vocabulary.iter().map(|&r| cell.role(r)).collect();
    fit_encoder_split(strategy, &stats, &vocab).map_err(|e| stage_err(Stage::Encode)(&e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub generator: String,
    pub attack: String,
    pub n: usize,
    pub seed: u64,
}

impl CellKey {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}_{}.json", self.generator, self.attack, self.n, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellOutcome {
    Done {
        scores: AttackScores,
        labels: Vec<u8>,
        report: EvalReport,
    },
    Failed {
        stage: Option<Stage>,
        error: String,
    },
}

/// Persisted result of one cell. Contains nothing run-dependent, so reruns
/// serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    #[serde(flatten)]
    pub key: CellKey,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl CellRecord {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            CellOutcome::Done { report, .. } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cell serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    #[serde(flatten)]
    pub key: CellKey,
    /// Seconds per stage.
    pub stages: BTreeMap<String, f64>,
    pub resumed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CellOptions<'a> {
    pub fpr_levels: &'a [f64],
    pub encoder_fit: EncoderFit,
}

pub struct CellOutput {
    pub scores: AttackScores,
    pub labels: Vec<u8>,
    pub report: EvalReport,
    pub encoder: Encoder,
    pub stages: BTreeMap<String, f64>,
}

/// Runs one cell end to end.
pub fn run_cell(
    source: &LoadedSource,
    generator: &GeneratorSpec,
    attack: &AttackEntry,
    n: usize,
    seed: u64,
    opts: CellOptions<'_>,
) -> Result<CellOutput, HarnessError> {
    let mut stages = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, stages: &mut BTreeMap<String, f64>| {
        stages.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let cell = prepare_cell(source, generator, n, seed)?;
    lap("prepare", &mut stages);

    let encoder = fit_cell_encoder(attack.encoding(), &opts.encoder_fit.plan(), &cell)?;
    let enc = |d: &TabularDataset| encoder.encode(d).map_err(|e| stage_err(Stage::Encode)(&e));
    let s = enc(&cell.synthetic)?;
    let r = enc(&cell.reference)?;
    let x = enc(&cell.test)?;
    lap("encode", &mut stages);

    let scores = attack
        .spec
        .run(&s, Some(&r), &x)
        .map_err(|e| stage_err(Stage::Score)(&e))?;
    lap("score", &mut stages);

    let report = evaluate(&scores, &cell.labels, opts.fpr_levels, Some(seed))
        .map_err(|e| stage_err(Stage::Evaluate)(&e))?;
    lap("evaluate", &mut stages);

    Ok(CellOutput {
        scores,
        labels: cell.labels,
        report,
        encoder,
        stages,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub cells: Vec<CellRecord>,
    pub timings: Vec<CellTiming>,
    pub summary: Summary,
}

impl RunRecord {
    pub fn completed(&self) -> usize {
        self.cells.iter().filter(|c| c.report().is_some()).count()
    }

    pub fn failed(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.report().is_none())
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), HarnessError> {
    fs::write(path, body).map_err(|source| HarnessError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_done(path: &Path) -> Option<CellRecord> {
    let text = fs::read_to_string(path).ok()?;
    let rec: CellRecord = serde_json::from_str(&text).ok()?;
    rec.report().is_some().then_some(rec)
}

/// Runs every (generator × attack × n × seed) cell, persists each cell and
/// the aggregate summary under `out_dir`. With `resume`, cells whose
/// completed record already exists for this config hash are loaded instead
/// of recomputed.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<RunRecord, HarnessError> {
    config.validate()?;
    let hash = config.hash();
    let cell_dir = out_dir.join("cells").join(&hash);
    fs::create_dir_all(&cell_dir).map_err(|source| HarnessError::Io {
        path: cell_dir.clone(),
        source,
    })?;
    write_file(
        &out_dir.join("config.json"),
        &serde_json::to_string_pretty(config).expect("config serializes"),
    )?;
    let source = LoadedSource::load(&config.population)?;

    let mut jobs = Vec::new();
    for g in &config.generators {
        for a in &config.attacks {
            for &n in &config.n_sizes {
                for &seed in &config.seeds {
                    jobs.push((g, a, n, seed));
                }
            }
        }
    }
    let opts = CellOptions {
        fpr_levels: &config.fpr_levels,
        encoder_fit: config.encoder_fit,
    };

    let job = |&(g, a, n, seed): &(&GeneratorEntry, &AttackEntry, usize, u64)| {
        let key = CellKey {
            generator: g.name(),
            attack: a.label(),
            n,
            seed,
        };
        let path = cell_dir.join(key.file_name());
        if resume {
            if let Some(rec) = read_done(&path) {
                let timing = CellTiming {
                    key: key.clone(),
                    stages: BTreeMap::new(),
                    resumed: true,
                };
                return Ok((rec, timing));
            }
        }
        let (outcome, stages) = match run_cell(&source, &g.spec, a, n, seed, opts) {
            Ok(out) => (
                CellOutcome::Done {
                    scores: out.scores,
                    labels: out.labels,
                    report: out.report,
                },
                out.stages,
            ),
            Err(HarnessError::Stage { stage, message }) => (
                CellOutcome::Failed {
                    stage: Some(stage),
                    error: message,
                },
                BTreeMap::new(),
            ),
            Err(e) => (
                CellOutcome::Failed {
                    stage: None,
                    error: e.to_string(),
                },
                BTreeMap::new(),
            ),
        };
        let rec = CellRecord {
            key: key.clone(),
            outcome,
        };
        write_file(&path, &rec.to_json())?;
        Ok((
            rec,
            CellTiming {
                key,
                stages,
                resumed: false,
            },
        ))
    };

    let results: Vec<(CellRecord, CellTiming)> = if config.parallel {
        jobs.par_iter().map(job).collect::<Result<_, HarnessError>>()?
    } else {
        jobs.iter().map(job).collect::<Result<_, HarnessError>>()?
    };
    let (cells, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let source_name = config.source_name();
    let entries: Vec<ReportEntry> = cells
        .iter()
        .filter_map(|c| {
            c.report().map(|r| ReportEntry {
                generator: c.key.generator.clone(),
                dataset: format!("{source_name}/n={}", c.key.n),
                attack: c.key.attack.clone(),
                report: r.clone(),
            })
        })
        .collect();
    let summary = aggregate(&entries);

    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_file(&out_dir.join("summary.txt"), &render_table(&summary))?;
    write_file(
        &out_dir.join("timings.json"),
        &serde_json::to_string_pretty(&timings).expect("timings serialize"),
    )?;

    Ok(RunRecord {
        config_hash: hash,
        cells,
        timings,
        summary,
    })
}
