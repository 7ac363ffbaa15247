use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genlra_core::attacks::{AttackId, AttackScores, AttackSpec, Locality};
use genlra_core::data::{load_csv_group, read_raw_csv_file};
use genlra_core::encode::{fit_encoder_split, Strategy};
use genlra_core::eval::{evaluate, EvalReport, DEFAULT_FPR_LEVELS};
use genlra_core::harness::{run_experiment, ExperimentConfig, HarnessError, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "genlra", version, about = "Membership inference audits for synthetic tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score test records against a synthetic/reference pair.
    Audit(AuditArgs),
    /// Compute AUC, TPR at fixed FPR and median accuracy for a score file.
    Evaluate(EvaluateArgs),
    /// Run a benchmark grid described by a JSON config.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "gen-lra", value_parser = parse_attack)]
    attack: AttackId,
    /// Neighborhood size for gen-lra (a count or "all") and dpi.
    #[arg(long, default_value = "10", value_parser = parse_locality)]
    k: Locality,
    /// Matching radius for mc; defaults to the median nearest-synthetic distance.
    #[arg(long)]
    radius: Option<f64>,
    /// Feature encoding; defaults to the attack's own choice.
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    /// Fit standardization statistics on the synthetic rows only (default)
    /// or on every input row.
    #[arg(long, value_enum, default_value_t = FitArg::SyntheticStats)]
    encoder_fit: FitArg,
    /// Accepted for interface symmetry; every attack is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Print a human-readable table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Score JSON as written by `genlra audit`.
    #[arg(long)]
    scores: PathBuf,
    /// CSV with a single 0/1 column, optionally headed.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FPR_LEVELS)]
    fpr: Vec<f64>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to the config's output_dir.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Reuse completed cells already present under the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    OrdinalStandardize,
    OneHotScale,
    OrdinalStandardizePca,
}

impl From<EncodingArg> for Strategy {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::OrdinalStandardize => Strategy::OrdinalStandardize,
            EncodingArg::OneHotScale => Strategy::OneHotScale,
            EncodingArg::OrdinalStandardizePca => Strategy::OrdinalStandardizePca,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitArg {
    SyntheticStats,
    Pooled,
}

fn parse_attack(s: &str) -> Result<AttackId, String> {
    s.parse()
}

fn parse_locality(s: &str) -> Result<Locality, String> {
    if s == "all" {
        return Ok(Locality::All);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(Locality::Neighbors(k)),
        _ => Err(format!("expected a positive integer or \"all\", got '{s}'")),
    }
}

/// A failure with its exit status.
enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Internal(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(a) => audit(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if writeln!(stdout, "{out}").is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn attack_spec(args: &AuditArgs) -> Result<AttackSpec, Failure> {
    let spec = match args.attack {
        AttackId::GenLra => {
            let AttackSpec::GenLra { bandwidth, .. } = AttackSpec::default_for(AttackId::GenLra) else {
                unreachable!()
            };
            AttackSpec::GenLra { k: args.k, bandwidth }
        }
        AttackId::Dpi => match args.k {
            Locality::Neighbors(k) => AttackSpec::Dpi { k },
            Locality::All => return Err(Failure::Input("--k all is only meaningful for gen-lra".into())),
        },
        AttackId::Mc => AttackSpec::Mc { radius: args.radius },
        id => AttackSpec::default_for(id),
    };
    Ok(spec)
}

fn audit(args: AuditArgs) -> Result<String, Failure> {
    let id = args.attack;
    let spec = attack_spec(&args)?;
    let reference = match (&args.reference, id.needs_reference()) {
        (None, true) => {
            return Err(Failure::Input(format!(
                "--reference is required for attack {id}"
            )))
        }
        (Some(_), false) => {
            eprintln!("warning: {id} uses only the synthetic data; ignoring --reference");
            None
        }
        (r, _) => r.as_deref(),
    };

    let mut paths: Vec<&Path> = vec![&args.synthetic, &args.test];
    if let Some(r) = reference {
        paths.push(r);
    }
    let tables = load_csv_group(&paths).map_err(input)?;
    let (s, x, r) = (&tables[0], &tables[1], tables.get(2));

    let strategy = args.encoding.map_or_else(|| id.default_encoding(), Strategy::from);
    let mut all = vec![s, x];
    all.extend(r);
    let stats = if args.encoder_fit == FitArg::Pooled { all.clone() } else { vec![s] };
    let encoder = fit_encoder_split(strategy, &stats, &all).map_err(input)?;
    let s_enc = encoder.encode(s).map_err(input)?;
    let x_enc = encoder.encode(x).map_err(input)?;
    let r_enc = r.map(|r| encoder.encode(r)).transpose().map_err(input)?;

    let scores = spec.run(&s_enc, r_enc.as_ref(), &x_enc).map_err(input)?;
    Ok(if args.pretty {
        score_table(&scores)
    } else {
        scores.to_json()
    })
}

fn score_table(scores: &AttackScores) -> String {
    let mut out = format!("attack: {}\n", scores.attack);
    for (k, v) in &scores.params {
        out.push_str(&format!("{k}: {v}\n"));
    }
    out.push_str(&format!("{:>8}  {:>14}\n", "row", "score"));
    for (i, s) in scores.scores.iter().enumerate() {
        out.push_str(&format!("{i:>8}  {s:>14.6}\n"));
    }
    out.pop();
    out
}

fn read_labels(path: &Path) -> Result<Vec<u8>, Failure> {
    let raw = read_raw_csv_file(path).map_err(input)?;
    if raw.header.len() != 1 {
        return Err(Failure::Input(format!(
            "{}: expected a single label column, found {}",
            path.display(),
            raw.header.len()
        )));
    }
    let parse = |cell: &str, line: usize| -> Result<u8, Failure> {
        match cell.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Failure::Input(format!(
                "{}:{line}: label must be 0 or 1, got '{other}'",
                path.display()
            ))),
        }
    };
    let mut labels = Vec::with_capacity(raw.rows.len() + 1);
    // a header is anything that is not itself a label
    if let Ok(first) = parse(&raw.header[0], 1) {
        labels.push(first);
    }
    for (i, row) in raw.rows.iter().enumerate() {
        labels.push(parse(&row[0], i + 2)?);
    }
    Ok(labels)
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<String, Failure> {
    let text = fs::read_to_string(&args.scores)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.scores.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let scores: AttackScores = serde_path_to_error::deserialize(de).map_err(|e| {
        Failure::Input(format!("{}: at {}: {}", args.scores.display(), e.path(), e.inner()))
    })?;
    let labels = read_labels(&args.labels)?;
    let report = evaluate(&scores, &labels, &args.fpr, None).map_err(input)?;
    Ok(if args.pretty {
        report_table(&report)
    } else {
        serde_json::to_string(&report).expect("report serializes")
    })
}

fn report_table(report: &EvalReport) -> String {
    let mut out = format!("attack: {}\nauc: {:.4}\n", report.attack, report.auc);
    for t in &report.tpr_at_fpr {
        out.push_str(&format!("tpr@fpr={}: {:.4}\n", t.fpr, t.tpr));
    }
    out.push_str(&format!("accuracy@median: {:.4}", report.accuracy_median));
    out
}

fn benchmark(args: BenchmarkArgs) -> Result<String, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.config.display())))?;
    let config = ExperimentConfig::from_json(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.config.display())))?;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Failure::Input(format!("--out is required (or set {OUT_DIR_ENV} or output_dir)")))?;
    let run = run_experiment(&config, &out, args.resume).map_err(|e| match e {
        HarnessError::Config(_) => input(e),
        other => Failure::Internal(other.to_string()),
    })?;
    let resumed = run.timings.iter().filter(|t| t.resumed).count();
    eprintln!(
        "{} cells ({} resumed), results in {}",
        run.cells.len(),
        resumed,
        out.display()
    );
    let failed: Vec<_> = run.failed().collect();
    for cell in &failed {
        if let genlra_core::harness::CellOutcome::Failed { error, .. } = &cell.outcome {
            eprintln!("cell {} failed: {error}", cell.key.file_name());
        }
    }
    let table = genlra_core::eval::render_table(&run.summary).trim_end().to_string();
    if !failed.is_empty() {
        println!("{table}");
        return Err(Failure::Internal(format!("{} of {} cells failed", failed.len(), run.cells.len())));
    }
    Ok(table)
}
