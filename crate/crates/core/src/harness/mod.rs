//! Retrain-and-validate experiments.
//!
//! Each repetition draws a pool of candidate queries, trains a forest `T0` on
//! the remaining rows, explains the pool points `T0` assigns to the other
//! class, retrains `T1` with a fresh seed and checks whether `T1` still gives
//! the explanations the target class. In the evolving-data variant `T0` only
//! sees a fraction of the rows and `T1` sees all of them.
//!
//! Seeds: repetition `r` reads five `u64`s from stream `r + 1` of the master
//! seed, in this order: pool shuffle, data split, `T0`, `T1`, isolation
//! forest. Repetitions run in parallel and are assembled in index order, so
//! reports do not depend on the thread count.

mod config;
mod metrics;
mod report;
mod study;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{
    DatasetSource, EvolvingConfig, ExperimentConfig, IsolationSettings, Method, Setting,
};
pub use metrics::{
    changed_features, measure_validity, permutation_importance, Importance, Proportion,
    CHANGE_TOLERANCE,
};
pub use report::{
    feature_change_stats, AggregateRow, ExperimentReport, FeatureChangeRow, SolveRecord,
};
pub use study::{stump_consistency_study, StumpStudyConfig, StumpStudyRow};

use crate::data::DataError;
use crate::ensemble::{train_forest, tree_rng, EnsembleError};
use crate::plausibility::{
    lof_penalty, train_isolation_forest, IsolationConfig, IsolationForest, PlausibilityError,
};
use crate::solver::{solve_counterfactual, Plausibility, SolverError};
use crate::threshold::{select_threshold, RobustnessSpec, ThresholdError};
use crate::{CounterfactualProblem, Dataset, DistanceWeights, Forest};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Plausibility(#[from] PlausibilityError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("consistency audit failed: {0}")]
    Audit(String),
    #[error("report output: {0}")]
    Io(#[from] std::io::Error),
    #[error("report output: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    Fixed,
    Evolving,
}

impl ExperimentMode {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentMode::Fixed => "fixed",
            ExperimentMode::Evolving => "evolving",
        }
    }
}

/// Query pool size per repetition, as a multiple of the queries needed.
const POOL_FACTOR: usize = 4;

/// Loads the dataset (relative paths resolve against `base`) and runs the
/// fixed-data experiment.
pub fn run_fixed_data_experiment(
    config: &ExperimentConfig,
    base: &Path,
) -> Result<ExperimentReport, HarnessError> {
    let data = config.dataset.load(config.seed, base)?;
    run_experiment(config, &data, ExperimentMode::Fixed)
}

pub fn run_evolving_data_experiment(
    config: &ExperimentConfig,
    base: &Path,
) -> Result<ExperimentReport, HarnessError> {
    let data = config.dataset.load(config.seed, base)?;
    run_experiment(config, &data, ExperimentMode::Evolving)
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    data: &'a Dataset,
    mode: ExperimentMode,
    settings: Vec<Setting>,
    /// `(tau, min_votes)` per setting.
    thresholds: Vec<(f64, usize)>,
    weights: DistanceWeights,
}

enum Outcome {
    Done(Vec<SolveRecord>),
    Skipped,
}

pub fn run_experiment(
    config: &ExperimentConfig,
    data: &Dataset,
    mode: ExperimentMode,
) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let reps = config.repetitions();
    let pool = POOL_FACTOR * config.queries;
    if data.n() <= pool + 1 {
        return Err(HarnessError::Config(format!(
            "dataset has {} rows, need more than {} to hold out the query pool",
            data.n(),
            pool + 1
        )));
    }
    let settings = config.settings();
    let n = config.forest.n_trees as u64;
    let thresholds = settings
        .iter()
        .map(|s| {
            let spec = RobustnessSpec {
                n,
                alpha: s.alpha.unwrap_or(0.5),
                mode: s.mode(),
                reading: config.reading,
            };
            select_threshold(&spec).map(|t| (t.tau, t.min_votes as usize))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = Context {
        config,
        data,
        mode,
        settings,
        thresholds,
        weights: DistanceWeights::from_schema(&data.schema),
    };
    let run = || {
        (0..reps)
            .into_par_iter()
            .map(|r| run_repetition(&ctx, r))
            .collect::<Result<Vec<_>, _>>()
    };
    let outcomes = match config.threads {
        None => run()?,
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(run)?,
    };
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Done(rows) => records.extend(rows),
            Outcome::Skipped => skipped.push(r),
        }
    }
    let report = ExperimentReport {
        mode,
        n_trees: config.forest.n_trees,
        target: config.target,
        feature_names: data.schema.features.iter().map(|f| f.name.clone()).collect(),
        settings: ctx.settings,
        records,
        skipped,
    };
    report.audit(&ctx.weights)?;
    Ok(report)
}

fn run_repetition(ctx: &Context, rep: usize) -> Result<Outcome, HarnessError> {
    let config = ctx.config;
    let data = ctx.data;
    let mut rng = tree_rng(config.seed, rep as u64 + 1);
    let pool_seed: u64 = rng.random();
    let split_seed: u64 = rng.random();
    let t0_seed: u64 = rng.random();
    let t1_seed: u64 = rng.random();
    let iso_seed: u64 = rng.random();
    let t1_seed = if config.same_seed_retrain { t0_seed } else { t1_seed };

    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(pool_seed));
    let pool_size = POOL_FACTOR * config.queries;
    let pool = &order[..pool_size];
    let mut rest = order[pool_size..].to_vec();
    rest.sort_unstable();
    let first = match ctx.mode {
        ExperimentMode::Fixed => rest.clone(),
        ExperimentMode::Evolving => {
            let keep = ((config.evolving.train_fraction * rest.len() as f64).round() as usize)
                .clamp(1, rest.len());
            let mut chosen = rest.clone();
            chosen.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
            chosen.truncate(keep);
            chosen.sort_unstable();
            chosen
        }
    };
    let d0 = data.subset(&first);
    let t0 = train_forest(&d0, &config.forest, t0_seed)?;

    let mut queries = Vec::with_capacity(config.queries);
    for &i in pool {
        if queries.len() == config.queries {
            break;
        }
        if t0.predict_class(data.row(i))? != config.target {
            queries.push(i);
        }
    }
    if queries.is_empty() {
        log::warn!("repetition {rep}: no pool point needs an explanation; skipped");
        return Ok(Outcome::Skipped);
    }
    if queries.len() < config.queries {
        log::info!(
            "repetition {rep}: only {} of {} queries eligible",
            queries.len(),
            config.queries
        );
    }
    let t1 = train_forest(&data.subset(&rest), &config.forest, t1_seed)?;

    let plausible_rows = d0.class_rows(config.target);
    let iso = if config.methods.contains(&Method::IsoPlausibility) {
        let iso_config = IsolationConfig {
            n_trees: config.isolation.n_trees,
            contamination: config.contaminations[0],
            subsample: config.isolation.subsample,
            direction: config.isolation.direction,
        };
        let base = train_isolation_forest(&plausible_rows, &iso_config, iso_seed)?;
        config
            .contaminations
            .iter()
            .map(|&c| base.with_contamination(&plausible_rows, c))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };

    let mut records = Vec::new();
    for &q in &queries {
        let x0 = data.row(q).to_vec();
        for (s, setting) in ctx.settings.iter().enumerate() {
            records.push(solve_one(ctx, rep, q, &x0, s, setting, &t0, &t1, &iso, &plausible_rows)?);
        }
    }
    Ok(Outcome::Done(records))
}

#[allow(clippy::too_many_arguments)]
fn solve_one(
    ctx: &Context,
    rep: usize,
    query: usize,
    x0: &[f64],
    s: usize,
    setting: &Setting,
    t0: &Forest,
    t1: &Forest,
    iso: &[IsolationForest],
    plausible_rows: &[Vec<f64>],
) -> Result<SolveRecord, HarnessError> {
    let config = ctx.config;
    let (tau, min_votes) = ctx.thresholds[s];
    let lof;
    let mut problem = CounterfactualProblem::new(t0, &ctx.data.schema, x0.to_vec(), config.target, tau)?
        .with_weights(ctx.weights.clone())
        .with_timeout(Duration::from_secs_f64(config.timeout_secs));
    problem.min_votes = min_votes;
    match setting.method {
        Method::IsoPlausibility => {
            let k = config
                .contaminations
                .iter()
                .position(|&c| Some(c) == setting.param)
                .expect("iso settings come from the contamination grid");
            problem = problem.with_plausibility(Plausibility::Isolation(&iso[k]))?;
        }
        Method::LofPlausibility => {
            let lambda = setting.param.expect("lof settings carry lambda");
            lof = lof_penalty(plausible_rows, x0, config.lof_anchors, lambda, &ctx.weights)?;
            problem = problem.with_plausibility(Plausibility::Lof(&lof))?;
        }
        _ => {}
    }
    let start = Instant::now();
    let e = solve_counterfactual(&problem);
    let seconds = start.elapsed().as_secs_f64();
    let votes = |f: &Forest| -> Result<usize, HarnessError> {
        let v = f.predict_votes(&e.x_hat)?;
        Ok(if config.target == 1 { v.ones } else { v.total - v.ones })
    };
    Ok(SolveRecord {
        repetition: rep,
        query,
        setting: s,
        method: setting.method,
        alpha: setting.alpha,
        beta: setting.beta,
        param: setting.param,
        tau,
        min_votes,
        distance: e.distance,
        nu: e.nu,
        votes_t0: votes(t0)?,
        votes_t1: votes(t1)?,
        valid_t1: t1.predict_class(&e.x_hat)? == config.target,
        changed: changed_features(x0, &e.x_hat),
        optimal: e.optimal,
        nodes: e.nodes,
        x0: x0.to_vec(),
        x_hat: e.x_hat,
        seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;
    use crate::ForestConfig;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            seed: 3,
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec::linear(300, 3, 1, 0.05),
                seed: None,
            },
            forest: ForestConfig {
                n_trees: 15,
                max_depth: 3,
                ..Default::default()
            },
            repetitions: Some(3),
            queries: 2,
            alphas: vec![0.3, 0.1],
            betas: vec![0.1],
            ..Default::default()
        }
    }

    fn data(config: &ExperimentConfig) -> Dataset {
        config.dataset.load(config.seed, Path::new(".")).unwrap()
    }

    #[test]
    fn same_seed_retrain_is_always_valid() {
        let config = ExperimentConfig {
            same_seed_retrain: true,
            ..small_config()
        };
        let report = run_experiment(&config, &data(&config), ExperimentMode::Fixed).unwrap();
        assert!(!report.records.is_empty());
        for r in &report.records {
            assert_eq!(r.votes_t0, r.votes_t1);
        }
        // Every unrelaxed explanation reaches the target class on T0 = T1.
        assert!(report.records.iter().filter(|r| r.nu == 0.0).all(|r| r.valid_t1));
    }

    #[test]
    fn full_split_matches_fixed_experiment() {
        let config = ExperimentConfig {
            evolving: EvolvingConfig { train_fraction: 1.0 },
            ..small_config()
        };
        let d = data(&config);
        let fixed = run_experiment(&config, &d, ExperimentMode::Fixed).unwrap();
        let evolving = run_experiment(&config, &d, ExperimentMode::Evolving).unwrap();
        assert_eq!(fixed.records.len(), evolving.records.len());
        for (a, b) in fixed.records.iter().zip(&evolving.records) {
            assert_eq!((a.query, a.distance, a.votes_t1), (b.query, b.distance, b.votes_t1));
            assert_eq!(a.x_hat, b.x_hat);
        }
    }

    #[test]
    fn thread_count_does_not_change_records() {
        let serial = ExperimentConfig {
            threads: Some(1),
            ..small_config()
        };
        let parallel = ExperimentConfig {
            threads: Some(4),
            ..small_config()
        };
        let d = data(&serial);
        let a = run_experiment(&serial, &d, ExperimentMode::Fixed).unwrap();
        let b = run_experiment(&parallel, &d, ExperimentMode::Fixed).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.x_hat, y.x_hat);
            assert_eq!((x.query, x.votes_t1, x.distance), (y.query, y.votes_t1, y.distance));
        }
    }

    #[test]
    fn plausibility_methods_run() {
        let config = ExperimentConfig {
            methods: vec![Method::IsoPlausibility, Method::LofPlausibility],
            contaminations: vec![0.1, 0.3],
            lambdas: vec![0.0, 1.0],
            repetitions: Some(1),
            ..small_config()
        };
        let report = run_experiment(&config, &data(&config), ExperimentMode::Fixed).unwrap();
        assert!(!report.records.is_empty());
        assert_eq!(report.records.len() % 4, 0);
        // lambda = 0 is the unpenalized naive problem
        let naive = ExperimentConfig {
            methods: vec![Method::Naive],
            ..config.clone()
        };
        let base = run_experiment(&naive, &data(&config), ExperimentMode::Fixed).unwrap();
        let zero: Vec<_> = report
            .records
            .iter()
            .filter(|r| r.method == Method::LofPlausibility && r.param == Some(0.0))
            .collect();
        for (a, b) in zero.iter().zip(&base.records) {
            assert!((a.distance - b.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn too_small_dataset_is_config_error() {
        let config = small_config();
        let d = data(&config).subset(&[0, 1, 2, 3, 4]);
        assert!(matches!(
            run_experiment(&config, &d, ExperimentMode::Fixed),
            Err(HarnessError::Config(_))
        ));
    }
}
