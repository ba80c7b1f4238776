//! Command-line front end: train forests, explain queries, compute thresholds
//! and run retraining experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 a solve
//! timed out (outputs are still written), 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robustcf::data::{load_dataset, read_queries, LoadOptions, RangeMode};
use robustcf::ensemble::{
    deserialize_forest, serialize_forest, train_forest, train_stump_ensemble, EnsembleError,
};
use robustcf::harness::{
    permutation_importance, stump_consistency_study, ExperimentConfig, ExperimentMode,
    HarnessError, StumpStudyConfig,
};
use robustcf::plausibility::{
    deserialize_isolation_forest, lof_penalty, serialize_isolation_forest, train_isolation_forest,
    ConstraintDirection, IsolationConfig, PlausibilityError,
};
use robustcf::solver::{solve_counterfactual, Plausibility, SolverError};
use robustcf::threshold::{
    p_star_by_size, p_star_by_target, select_threshold, MajorityReading, ThresholdError,
};
use robustcf::{
    CounterfactualProblem, Dataset, DatasetSchema, DistanceWeights, ForestConfig, RobustnessMode,
    RobustnessSpec,
};

#[derive(Parser)]
#[command(name = "robustcf", version, about = "Counterfactual explanations that survive retraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a random forest (or stump ensemble) on a CSV dataset.
    Train(TrainArgs),
    /// Explain query rows with a trained forest.
    Explain(ExplainArgs),
    /// Print the robustness threshold for one setting.
    Threshold(ThresholdArgs),
    /// Sweep p* over tolerances or ensemble sizes as CSV.
    ThresholdTable(TableArgs),
    /// Run a retrain-and-validate experiment from a TOML config.
    Experiment(ExperimentArgs),
    /// Permutation importance of a trained forest on a dataset.
    Importance(ImportanceArgs),
    /// Monte Carlo consistency study of Direct-SAA with stump ensembles.
    StumpStudy(StudyArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Label value mapped to class 1; otherwise labels must be 0/1.
    #[arg(long)]
    positive_label: Option<String>,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    #[arg(long)]
    features_per_split: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_samples_leaf: usize,
    #[arg(long)]
    no_bootstrap: bool,
    /// Train depth-1 stumps on bootstrap samples instead of forest trees.
    #[arg(long)]
    stumps: bool,
    /// Also train an isolation forest on the rows of class `--iso-class`.
    #[arg(long)]
    iso: bool,
    #[arg(long, default_value_t = 1)]
    iso_class: u8,
    #[arg(long, default_value_t = 50)]
    iso_trees: usize,
    #[arg(long, default_value_t = 0.1)]
    contamination: f64,
    #[arg(long, default_value = "as-printed")]
    constraint_direction: ConstraintDirection,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Naive,
    DirectSaa,
    RobustSaa,
    Convex,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadingArg {
    Inclusive,
    Strict,
}

impl From<ReadingArg> for MajorityReading {
    fn from(r: ReadingArg) -> Self {
        match r {
            ReadingArg::Inclusive => MajorityReading::Inclusive,
            ReadingArg::Strict => MajorityReading::Strict,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlausibilityArg {
    Iso,
    Lof,
}

#[derive(Args)]
struct ThresholdSpecArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "direct-saa")]
    mode: ModeArg,
    /// Confidence level of robust-saa.
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Parity reading of the majority condition for even ensemble sizes.
    #[arg(long, value_enum, default_value = "inclusive")]
    reading: ReadingArg,
}

impl ThresholdSpecArgs {
    fn spec(&self, n: u64) -> RobustnessSpec {
        let mode = match self.mode {
            ModeArg::Naive => RobustnessMode::Naive,
            ModeArg::DirectSaa => RobustnessMode::DirectSaa,
            ModeArg::RobustSaa => RobustnessMode::RobustSaa { beta: self.beta },
            ModeArg::Convex => RobustnessMode::Convex,
        };
        RobustnessSpec {
            n,
            alpha: self.alpha,
            mode,
            reading: self.reading.into(),
        }
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    forest: PathBuf,
    /// Schema with every range declared, as written by `train`.
    #[arg(long)]
    schema: PathBuf,
    /// CSV of query rows in original units.
    #[arg(long)]
    query: PathBuf,
    #[command(flatten)]
    threshold: ThresholdSpecArgs,
    #[arg(long, default_value_t = 1)]
    target: u8,
    #[arg(long, value_enum)]
    plausibility: Option<PlausibilityArg>,
    /// Isolation forest file; without it one is trained on `--data`.
    #[arg(long)]
    iso: Option<PathBuf>,
    /// Training data for the plausibility model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    positive_label: Option<String>,
    #[arg(long)]
    contamination: Option<f64>,
    #[arg(long, default_value_t = 50)]
    iso_trees: usize,
    #[arg(long)]
    constraint_direction: Option<ConstraintDirection>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 10)]
    lof_anchors: usize,
    /// Per-query time limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Clamp out-of-range query values instead of rejecting them.
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    n: u64,
    #[command(flatten)]
    threshold: ThresholdSpecArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    /// Rows over the robustness target `1 - alpha`, one column per size.
    Alpha,
    /// Rows over the ensemble size, one column per tolerance.
    N,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, value_enum, default_value = "alpha")]
    sweep: Sweep,
    /// Ensemble sizes (columns for `--sweep alpha`, rows for `--sweep n`).
    #[arg(long, value_delimiter = ',', default_values_t = [5u64, 11, 51, 101, 501])]
    sizes: Vec<u64>,
    /// Tolerances (rows for `--sweep alpha`, columns for `--sweep n`).
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01])]
    alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "inclusive")]
    reading: ReadingArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeKind {
    Fixed,
    Evolving,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: ModeKind,
    /// Worker threads; all cores when unset.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    forest: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    positive_label: Option<String>,
    #[arg(long, default_value_t = 10)]
    shuffles: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct StudyArgs {
    /// TOML study config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn data_err(e: impl std::fmt::Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 1, message: format!("{}: {e}", path.display()) }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Threshold(_) => config_err(e),
            HarnessError::Data(_) | HarnessError::Empty(_) => data_err(e),
            HarnessError::Ensemble(EnsembleError::Config(_)) => config_err(e),
            HarnessError::Ensemble(_) => data_err(e),
            HarnessError::Plausibility(ref p) => plausibility_failure(p, e.to_string()),
            HarnessError::Solver(_) => data_err(e),
            HarnessError::Audit(_) | HarnessError::Io(_) | HarnessError::Csv(_) => Failure {
                code: 1,
                message: e.to_string(),
            },
        }
    }
}

impl From<ThresholdError> for Failure {
    fn from(e: ThresholdError) -> Self {
        config_err(e)
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        data_err(e)
    }
}

impl From<PlausibilityError> for Failure {
    fn from(e: PlausibilityError) -> Self {
        let message = e.to_string();
        plausibility_failure(&e, message)
    }
}

fn plausibility_failure(e: &PlausibilityError, message: String) -> Failure {
    match e {
        PlausibilityError::Contamination(_) | PlausibilityError::Config(_) => config_err(message),
        _ => data_err(message),
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Explain(a) => explain(a),
        Command::Threshold(a) => threshold(a),
        Command::ThresholdTable(a) => threshold_table(a),
        Command::Experiment(a) => experiment(a),
        Command::Importance(a) => importance(a),
        Command::StumpStudy(a) => stump_study(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn load(data: &Path, schema: &Path, positive_label: Option<String>) -> Result<Dataset, Failure> {
    let options = LoadOptions {
        range_mode: RangeMode::Strict,
        positive_label,
    };
    load_dataset(data, schema, &options).map_err(data_err)
}

fn complete_schema(path: &Path) -> Result<DatasetSchema, Failure> {
    DatasetSchema::from_toml_str(&read(path)?)
        .and_then(|s| s.into_complete())
        .map_err(data_err)
}

fn train(a: TrainArgs) -> Outcome {
    let seed = a.common.seed.unwrap_or(0);
    let data = load(&a.data, &a.schema, a.positive_label)?;
    let forest = if a.stumps {
        train_stump_ensemble(&data, a.n_trees, seed)
    } else {
        let config = ForestConfig {
            n_trees: a.n_trees,
            max_depth: a.max_depth,
            features_per_split: a.features_per_split,
            bootstrap: !a.no_bootstrap,
            min_samples_leaf: a.min_samples_leaf,
        };
        train_forest(&data, &config, seed)
    }
    .map_err(|e| match e {
        EnsembleError::Config(_) => config_err(e),
        _ => data_err(e),
    })?;
    let dir = out_dir(&a.common)?;
    write(&dir.join("forest.json"), &serialize_forest(&forest))?;
    write(&dir.join("schema.toml"), &data.schema.to_toml_string())?;
    let accuracy = forest.accuracy(&data).map_err(data_err)?;
    println!("trees = {}", forest.n_trees());
    println!("training_accuracy = {accuracy}");
    if a.iso {
        let rows = data.class_rows(a.iso_class);
        let config = IsolationConfig {
            n_trees: a.iso_trees,
            contamination: a.contamination,
            subsample: None,
            direction: a.constraint_direction,
        };
        let iso = train_isolation_forest(&rows, &config, seed)?;
        write(&dir.join("iso.json"), &serialize_isolation_forest(&iso))?;
        println!("iso_bound = {}", iso.bound);
    }
    Ok(ExitCode::SUCCESS)
}

fn explain(a: ExplainArgs) -> Outcome {
    let seed = a.common.seed.unwrap_or(0);
    let forest = deserialize_forest(&read(&a.forest)?).map_err(data_err)?;
    let schema = complete_schema(&a.schema)?;
    if forest.n_features != schema.d() {
        return Err(data_err(format!(
            "forest expects {} features, schema has {}",
            forest.n_features,
            schema.d()
        )));
    }
    let mode = if a.lenient { RangeMode::Lenient } else { RangeMode::Strict };
    let file = fs::File::open(&a.query).map_err(|e| data_err(format!("{}: {e}", a.query.display())))?;
    let queries = read_queries(file, &schema, mode).map_err(data_err)?;
    let threshold = select_threshold(&a.threshold.spec(forest.n_trees() as u64))?;
    let weights = DistanceWeights::from_schema(&schema);

    let training_rows = |what: &str| -> Result<Vec<Vec<f64>>, Failure> {
        let path = a
            .data
            .as_ref()
            .ok_or_else(|| config_err(format!("{what} needs --data")))?;
        let data = load(path, &a.schema, a.positive_label.clone())?;
        Ok(data.class_rows(a.target))
    };
    let iso = match a.plausibility {
        Some(PlausibilityArg::Iso) => Some(match &a.iso {
            Some(path) => {
                let mut iso = deserialize_isolation_forest(&read(path)?)?;
                if let Some(direction) = a.constraint_direction {
                    if direction != iso.direction {
                        return Err(config_err(
                            "--constraint-direction differs from the isolation forest file",
                        ));
                    }
                }
                if let Some(c) = a.contamination {
                    iso = iso.with_contamination(&training_rows("--contamination with --iso")?, c)?;
                }
                iso
            }
            None => {
                let config = IsolationConfig {
                    n_trees: a.iso_trees,
                    contamination: a.contamination.unwrap_or(0.1),
                    subsample: None,
                    direction: a.constraint_direction.unwrap_or_default(),
                };
                train_isolation_forest(&training_rows("--plausibility iso")?, &config, seed)?
            }
        }),
        _ => None,
    };
    let lof_rows = match a.plausibility {
        Some(PlausibilityArg::Lof) => {
            if a.lambda.is_none() {
                return Err(config_err("--plausibility lof needs --lambda"));
            }
            Some(training_rows("--plausibility lof")?)
        }
        _ => None,
    };

    let dir = out_dir(&a.common)?;
    let path = dir.join("explanations.csv");
    let mut wtr = csv::Writer::from_path(&path).map_err(data_err)?;
    let mut header = vec!["query".to_string()];
    header.extend(schema.features.iter().map(|f| f.name.clone()));
    header.extend(
        ["distance", "votes", "score", "nu", "optimal", "changed", "nodes"].map(String::from),
    );
    wtr.write_record(&header).map_err(data_err)?;
    let mut timeouts = 0;
    for (i, x0) in queries.iter().enumerate() {
        let mut problem =
            CounterfactualProblem::new(&forest, &schema, x0.clone(), a.target, threshold.tau)?
                .with_min_votes(threshold.min_votes as usize)?;
        if let Some(t) = a.timeout {
            problem = problem.with_timeout(Duration::from_secs_f64(t));
        }
        let lof;
        if let Some(iso) = &iso {
            problem = problem.with_plausibility(Plausibility::Isolation(iso))?;
        }
        if let Some(rows) = &lof_rows {
            lof = lof_penalty(rows, x0, a.lof_anchors, a.lambda.unwrap_or(0.0), &weights)?;
            problem = problem.with_plausibility(Plausibility::Lof(&lof))?;
        }
        let e = solve_counterfactual(&problem);
        if !e.optimal {
            timeouts += 1;
        }
        let mut rec = vec![i.to_string()];
        rec.extend(
            e.x_hat
                .iter()
                .zip(&schema.features)
                .map(|(v, f)| f.denormalize(*v).to_string()),
        );
        let changed: Vec<&str> = e
            .changed
            .iter()
            .map(|(j, _, _)| schema.features[*j].name.as_str())
            .collect();
        rec.extend([
            e.distance.to_string(),
            e.votes.to_string(),
            e.score.to_string(),
            e.nu.to_string(),
            e.optimal.to_string(),
            changed.join(";"),
            e.nodes.to_string(),
        ]);
        wtr.write_record(&rec).map_err(data_err)?;
    }
    wtr.flush().map_err(|e| io_err(&path, e))?;
    println!("tau = {}", threshold.tau);
    println!("min_votes = {}", threshold.min_votes);
    println!("explanations = {}", queries.len());
    println!("timeouts = {timeouts}");
    Ok(if timeouts > 0 { ExitCode::from(4) } else { ExitCode::SUCCESS })
}

fn threshold(a: ThresholdArgs) -> Outcome {
    let spec = a.threshold.spec(a.n);
    let r = select_threshold(&spec)?;
    let fields = [
        ("n", a.n.to_string()),
        ("alpha", spec.alpha.to_string()),
        ("mode", spec.mode.name().to_string()),
        ("tau", r.tau.to_string()),
        ("p_star", r.p_star.to_string()),
        ("rho_ac", r.rho_ac.to_string()),
        ("rho_star", r.rho_star.to_string()),
        ("z_beta", r.z_beta.to_string()),
        ("min_votes", r.min_votes.to_string()),
    ];
    let text: String = fields.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    emit(&a.common, "threshold.txt", &text)
}

/// Writes to `--out/name` when an output directory was given, else stdout.
fn emit(common: &Common, name: &str, text: &str) -> Outcome {
    match &common.out {
        Some(_) => write(&out_dir(common)?.join(name), text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn threshold_table(a: TableArgs) -> Outcome {
    let reading = a.reading.into();
    let mut text = String::new();
    match a.sweep {
        Sweep::Alpha => {
            let targets: Vec<f64> = a.alphas.iter().map(|al| 1.0 - al).collect();
            text.push_str("robustness_target");
            for n in &a.sizes {
                text.push_str(&format!(",p_star_n{n}"));
            }
            text.push('\n');
            for (t, row) in p_star_by_target(&a.sizes, &targets, reading)? {
                text.push_str(&t.to_string());
                for v in row {
                    text.push_str(&format!(",{v}"));
                }
                text.push('\n');
            }
        }
        Sweep::N => {
            text.push('n');
            for al in &a.alphas {
                text.push_str(&format!(",p_star_alpha{al}"));
            }
            text.push('\n');
            for (n, row) in p_star_by_size(&a.sizes, &a.alphas, reading)? {
                text.push_str(&n.to_string());
                for v in row {
                    text.push_str(&format!(",{v}"));
                }
                text.push('\n');
            }
        }
    }
    emit(&a.common, "threshold_table.csv", &text)
}

fn experiment(a: ExperimentArgs) -> Outcome {
    let mut config = ExperimentConfig::from_path(&a.config)?;
    if let Some(seed) = a.common.seed {
        config.seed = seed;
    }
    if a.threads.is_some() {
        config.threads = a.threads;
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let mode = match a.mode {
        ModeKind::Fixed => ExperimentMode::Fixed,
        ModeKind::Evolving => ExperimentMode::Evolving,
    };
    let data = config.dataset.load(config.seed, base)?;
    let report = robustcf::harness::run_experiment(&config, &data, mode)?;
    let dir = out_dir(&a.common)?;
    let files = report.write_csvs(&dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    let timeouts = report.timeouts();
    println!("solves = {}", report.records.len());
    println!("skipped_repetitions = {}", report.skipped.len());
    println!("timeouts = {timeouts}");
    Ok(if timeouts > 0 { ExitCode::from(4) } else { ExitCode::SUCCESS })
}

fn importance(a: ImportanceArgs) -> Outcome {
    let forest = deserialize_forest(&read(&a.forest)?).map_err(data_err)?;
    let data = load(&a.data, &a.schema, a.positive_label)?;
    let imp = permutation_importance(&forest, &data, a.shuffles, a.common.seed.unwrap_or(0))?;
    let mut text = String::from("feature,raw,normalized\n");
    for (j, f) in data.schema.features.iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", f.name, imp.raw[j], imp.normalized[j]));
    }
    let dir = out_dir(&a.common)?;
    write(&dir.join("importance.csv"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn stump_study(a: StudyArgs) -> Outcome {
    let mut config = match &a.config {
        Some(path) => toml::from_str::<StumpStudyConfig>(&read(path)?).map_err(config_err)?,
        None => StumpStudyConfig::default(),
    };
    if let Some(seed) = a.common.seed {
        config.seed = seed;
    }
    let rows = stump_consistency_study(&config)?;
    let mut text = String::from("n,tau,solves,mean_robustness,mean_gap,relaxed\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.tau, r.solves, r.mean_robustness, r.mean_gap, r.relaxed
        ));
    }
    let dir = out_dir(&a.common)?;
    write(&dir.join("stump_study.csv"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}
