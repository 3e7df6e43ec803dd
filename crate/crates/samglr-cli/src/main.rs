//! Batch frontend for fitting additive models, running GLR tests,
//! reproducing the simulation studies, and querying the chi-square-mixture
//! distribution kernel.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical error, 4 simulation
//! quality-gate failure (more than 10% of replications failed).

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use report::{FitReport, RunManifest, StudySummary, TestReport};
use samglr::backfit::{backfit, partial_effect_table, FitOptions, ModelSpec, PartialEffect};
use samglr::data::{Dataset, Schema};
use samglr::dist::ChiSquareMixture;
use samglr::glr::{run_test, HypothesisSpec};
use samglr::sim::{null_study, power_study, SimulationConfig, StudyKind, StudyResult};

#[derive(Parser)]
#[command(name = "samglr", version, about = "Additive-model GLR testing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an additive/semiparametric model and write a JSON report.
    Fit(FitArgs),
    /// Run a GLR test of a hypothesis file and write a JSON report.
    Test(TestArgs),
    /// Run a null-distribution study from a config file.
    Simulate(StudyArgs),
    /// Run a power study over the config's beta grid.
    Power(StudyArgs),
    /// Evaluate the weighted chi-square mixture distribution.
    Dist(DistArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV data file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// JSON schema file mapping column names to declarations.
    #[arg(long)]
    schema: PathBuf,
    /// Output JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-component partial-effect CSV files.
    #[arg(long)]
    partial_effects: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// JSON hypothesis file: a list of {"variable", "constraint"} entries.
    #[arg(long)]
    hypothesis: PathBuf,
    /// Which p-value is the headline; both are always reported.
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Indep,
}

#[derive(Args)]
struct StudyArgs {
    /// JSON study configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV and summary files.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DistArgs {
    /// Mixture weights (positive reals).
    #[arg(long, num_args = 1.., required = true)]
    weights: Vec<f64>,
    /// Constant shift added to the mixture.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    /// Print P(Q <= q).
    #[arg(long, group = "query")]
    cdf: Option<f64>,
    /// Print the p-quantile.
    #[arg(long, group = "query")]
    quantile: Option<f64>,
    /// Print the upper tail P(Q > q).
    #[arg(long, group = "query")]
    pvalue: Option<f64>,
}

enum CliError {
    Input(String),
    Numerical(String),
    QualityGate(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::QualityGate(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) | CliError::QualityGate(m) => m,
        }
    }
}

impl From<samglr::Error> for CliError {
    fn from(e: samglr::Error) -> CliError {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_inputs(data: &Path, schema_path: &Path) -> Result<(Schema, Dataset), CliError> {
    let schema = Schema::from_json_str(&read_to_string(schema_path)?)?;
    let file = fs::File::open(data)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", data.display())))?;
    let dataset = Dataset::from_csv_reader(std::io::BufReader::new(file), &schema)?;
    Ok((schema, dataset))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("serialization: {e}")))?;
    body.push('\n');
    fs::write(path, body)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (_, dataset) = load_inputs(&args.data, &args.schema)?;
    let spec = ModelSpec::from_dataset(&dataset);
    let options = FitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        track_rss: false,
    };
    let fit = backfit(&dataset, &spec, &options)?;
    if !fit.converged {
        eprintln!(
            "warning: backfitting stopped after {} sweeps with max delta {:.3e}",
            fit.iterations, fit.max_delta
        );
    }

    let mut outputs = vec![args.out.display().to_string()];
    if let Some(dir) = &args.partial_effects {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
        for comp in &fit.components {
            let path = dir.join(format!("{}.csv", comp.variable));
            let mut body = String::new();
            match partial_effect_table(&dataset, &fit, &comp.variable)? {
                PartialEffect::Discrete {
                    levels,
                    estimates,
                    observations,
                } => {
                    body.push_str("code,label,partial_residual,level_estimate\n");
                    for (code, pr) in observations {
                        body.push_str(&format!(
                            "{code},{},{pr},{}\n",
                            levels[code], estimates[code]
                        ));
                    }
                }
                PartialEffect::Continuous { points, fitted } => {
                    body.push_str("z,partial_residual,fitted\n");
                    for ((z, pr), f) in points.iter().zip(&fitted) {
                        body.push_str(&format!("{z},{pr},{f}\n"));
                    }
                }
            }
            fs::write(&path, body).map_err(|e| {
                CliError::Input(format!("cannot write {}: {e}", path.display()))
            })?;
            outputs.push(path.display().to_string());
        }
    }

    let mut manifest = RunManifest::new("fit");
    manifest.data = Some(args.data.display().to_string());
    manifest.schema = Some(args.schema.display().to_string());
    manifest.outputs = outputs;
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    write_json(&args.out, &FitReport::build(manifest, &fit, &dataset))
}

fn cmd_test(args: &TestArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (_, dataset) = load_inputs(&args.data, &args.schema)?;
    let hypothesis = HypothesisSpec::from_json_str(&read_to_string(&args.hypothesis)?)?;
    hypothesis.validate(&dataset)?;
    let spec = ModelSpec::from_dataset(&dataset);
    let options = FitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        track_rss: false,
    };
    let result = run_test(&dataset, &spec, &hypothesis, &options)?;
    let (mode, headline) = match args.mode {
        Mode::Exact => ("exact", result.p_value),
        Mode::Indep => ("indep", result.p_value_indep),
    };
    let mut manifest = RunManifest::new("test");
    manifest.data = Some(args.data.display().to_string());
    manifest.schema = Some(args.schema.display().to_string());
    manifest.hypothesis = Some(args.hypothesis.display().to_string());
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    write_json(
        &args.out,
        &TestReport {
            manifest,
            mode: mode.to_string(),
            p_value_headline: headline,
            result,
        },
    )
}

fn write_study_outputs(
    command: &str,
    args: &StudyArgs,
    cfg: &SimulationConfig,
    result: &StudyResult,
    started: Instant,
) -> Result<(), CliError> {
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", args.out.display())))?;
    let mut outputs = Vec::new();

    let records_path = args.out.join("replications.csv");
    let mut buf = Vec::new();
    result
        .write_records_csv(&mut buf)
        .map_err(CliError::from)?;
    fs::write(&records_path, &buf)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", records_path.display())))?;
    outputs.push(records_path.display().to_string());

    match result.kind {
        StudyKind::Null => {
            let density_path = args.out.join("null_density.csv");
            let mut buf = Vec::new();
            result
                .write_density_csv(&mut buf)
                .map_err(CliError::from)?;
            fs::write(&density_path, &buf).map_err(|e| {
                CliError::Input(format!("cannot write {}: {e}", density_path.display()))
            })?;
            outputs.push(density_path.display().to_string());
        }
        StudyKind::Power => {
            let power_path = args.out.join("power.csv");
            let mut buf = Vec::new();
            result.write_power_csv(&mut buf).map_err(CliError::from)?;
            fs::write(&power_path, &buf).map_err(|e| {
                CliError::Input(format!("cannot write {}: {e}", power_path.display()))
            })?;
            outputs.push(power_path.display().to_string());
        }
    }

    let summary_path = args.out.join("summary.json");
    outputs.push(summary_path.display().to_string());
    let mut manifest = RunManifest::new(command);
    manifest.config = Some(args.config.display().to_string());
    manifest.seed = Some(cfg.seed);
    manifest.outputs = outputs;
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    write_json(&summary_path, &StudySummary::build(manifest, cfg, result))?;

    let total = result.records.len() + result.failures.len();
    if total > 0 && result.failures.len() * 10 > total {
        return Err(CliError::QualityGate(format!(
            "{} of {} replications failed",
            result.failures.len(),
            total
        )));
    }
    Ok(())
}

fn load_study_config(args: &StudyArgs) -> Result<SimulationConfig, CliError> {
    let mut cfg = SimulationConfig::from_json_str(&read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn cmd_simulate(args: &StudyArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = load_study_config(args)?;
    let result = null_study(&cfg)?;
    write_study_outputs("simulate", args, &cfg, &result, started)
}

fn cmd_power(args: &StudyArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = load_study_config(args)?;
    let result = power_study(&cfg)?;
    write_study_outputs("power", args, &cfg, &result, started)
}

fn cmd_dist(args: &DistArgs) -> Result<(), CliError> {
    let mixture = ChiSquareMixture::with_shift(args.weights.clone(), args.shift)?;
    let value = match (args.cdf, args.quantile, args.pvalue) {
        (Some(q), None, None) => mixture.cdf(q),
        (None, Some(p), None) => mixture.quantile(p)?,
        (None, None, Some(q)) => mixture.survival(q),
        _ => {
            return Err(CliError::Input(
                "exactly one of --cdf, --quantile, --pvalue is required".into(),
            ))
        }
    };
    println!("{value:.6}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Power(args) => cmd_power(args),
        Command::Dist(args) => cmd_dist(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
