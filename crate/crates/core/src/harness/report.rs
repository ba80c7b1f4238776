//! Experiment records, aggregates and report files.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{normalize_to_max, Proportion, CHANGE_TOLERANCE};
use super::{ExperimentMode, HarnessError, Method, Setting};
use crate::DistanceWeights;

/// One solve-and-retrain outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub repetition: usize,
    /// Row index of the query in the dataset.
    pub query: usize,
    /// Index into [`ExperimentReport::settings`].
    pub setting: usize,
    pub method: Method,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub param: Option<f64>,
    pub tau: f64,
    pub min_votes: usize,
    pub distance: f64,
    pub nu: f64,
    /// Target-class votes of the original forest at the explanation.
    pub votes_t0: usize,
    /// Target-class votes of the retrained forest.
    pub votes_t1: usize,
    pub valid_t1: bool,
    pub changed: usize,
    pub optimal: bool,
    pub nodes: u64,
    pub x0: Vec<f64>,
    pub x_hat: Vec<f64>,
    /// Wall time of the solve; reported only in `timings.csv`.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub mode: ExperimentMode,
    pub n_trees: usize,
    pub target: u8,
    pub feature_names: Vec<String>,
    pub settings: Vec<Setting>,
    /// Sorted by repetition, then query, then setting.
    pub records: Vec<SolveRecord>,
    /// Repetitions without an eligible query.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub param: Option<f64>,
    pub tau: f64,
    pub min_votes: usize,
    pub solves: usize,
    pub valid: usize,
    pub validity: f64,
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_distance: f64,
    pub mean_changed: f64,
    pub mean_nu: f64,
    /// Solves with `nu > 0`.
    pub relaxed: usize,
    pub timeouts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChangeRow {
    pub setting: Setting,
    pub mean_changed: f64,
    /// Mean `|x_hat_j - x0_j|` per feature, normalized units.
    pub mean_abs_change: Vec<f64>,
    /// `mean_abs_change` divided by its largest entry.
    pub normalized: Vec<f64>,
}

/// Per setting: mean number of changed features and mean absolute change per
/// feature.
pub fn feature_change_stats(report: &ExperimentReport) -> Result<Vec<FeatureChangeRow>, HarnessError> {
    if report.records.is_empty() {
        return Err(HarnessError::Empty("report has no records".into()));
    }
    let d = report.feature_names.len();
    let mut out = Vec::new();
    for (s, setting) in report.settings.iter().enumerate() {
        let rows: Vec<&SolveRecord> = report.records.iter().filter(|r| r.setting == s).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mut sums = vec![0.0; d];
        for r in &rows {
            for (j, sum) in sums.iter_mut().enumerate() {
                let delta = (r.x_hat[j] - r.x0[j]).abs();
                if delta > CHANGE_TOLERANCE {
                    *sum += delta;
                }
            }
        }
        let mean_abs_change: Vec<f64> = sums.iter().map(|v| v / n).collect();
        out.push(FeatureChangeRow {
            setting: *setting,
            mean_changed: rows.iter().map(|r| r.changed as f64).sum::<f64>() / n,
            normalized: normalize_to_max(&mean_abs_change),
            mean_abs_change,
        });
    }
    Ok(out)
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}

impl ExperimentReport {
    pub fn timeouts(&self) -> usize {
        self.records.iter().filter(|r| !r.optimal).count()
    }

    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut out = Vec::new();
        for (s, setting) in self.settings.iter().enumerate() {
            let rows: Vec<&SolveRecord> = self.records.iter().filter(|r| r.setting == s).collect();
            let Some(first) = rows.first() else {
                continue;
            };
            let n = rows.len();
            let valid = rows.iter().filter(|r| r.valid_t1).count();
            let p = Proportion::new(valid, n).expect("rows are non-empty");
            let mean = |f: &dyn Fn(&SolveRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            out.push(AggregateRow {
                method: setting.method,
                alpha: setting.alpha,
                beta: setting.beta,
                param: setting.param,
                tau: first.tau,
                min_votes: first.min_votes,
                solves: n,
                valid,
                validity: p.fraction,
                half_width: p.half_width,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                mean_distance: mean(&|r| r.distance),
                mean_changed: mean(&|r| r.changed as f64),
                mean_nu: mean(&|r| r.nu),
                relaxed: rows.iter().filter(|r| r.nu > 0.0).count(),
                timeouts: rows.iter().filter(|r| !r.optimal).count(),
            });
        }
        out
    }

    /// Aggregate for the first setting matching `method` and `alpha`.
    pub fn aggregate_for(&self, method: Method, alpha: Option<f64>) -> Option<AggregateRow> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.alpha == alpha)
    }

    /// Rechecks every record against its own forest: an unrelaxed explanation
    /// must clear its threshold, and votes and distances must be consistent.
    pub fn audit(&self, weights: &DistanceWeights) -> Result<(), HarnessError> {
        for r in &self.records {
            let at = || format!("repetition {}, query {}, {}", r.repetition, r.query, r.method);
            if r.nu == 0.0 {
                if r.votes_t0 < r.min_votes {
                    return Err(HarnessError::Audit(format!(
                        "{}: nu = 0 but {} votes < {}",
                        at(),
                        r.votes_t0,
                        r.min_votes
                    )));
                }
                if (r.votes_t0 as f64 / self.n_trees as f64) < r.tau {
                    return Err(HarnessError::Audit(format!("{}: score below tau {}", at(), r.tau)));
                }
            }
            if r.votes_t0 > self.n_trees || r.votes_t1 > self.n_trees {
                return Err(HarnessError::Audit(format!("{}: more votes than trees", at())));
            }
            if weights.distance(&r.x_hat, &r.x0) != r.distance {
                return Err(HarnessError::Audit(format!("{}: distance mismatch", at())));
            }
        }
        Ok(())
    }

    /// Writes the report CSVs into `dir` and returns their paths. Every file
    /// except `timings.csv` is a deterministic function of config and seed.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        let mut open = |name: &str| -> Result<csv::Writer<std::fs::File>, HarnessError> {
            let path = dir.join(name);
            paths.push(path.clone());
            Ok(csv::Writer::from_path(path)?)
        };

        let mut w = open("solves.csv")?;
        w.write_record([
            "repetition", "query", "method", "alpha", "beta", "param", "tau", "min_votes",
            "distance", "nu", "votes_t0", "votes_t1", "n_trees", "valid_t1", "changed",
            "optimal", "nodes", "x0", "x_hat",
        ])?;
        for r in &self.records {
            w.write_record([
                r.repetition.to_string(),
                r.query.to_string(),
                r.method.to_string(),
                opt(r.alpha),
                opt(r.beta),
                opt(r.param),
                num(r.tau),
                r.min_votes.to_string(),
                num(r.distance),
                num(r.nu),
                r.votes_t0.to_string(),
                r.votes_t1.to_string(),
                self.n_trees.to_string(),
                u8::from(r.valid_t1).to_string(),
                r.changed.to_string(),
                u8::from(r.optimal).to_string(),
                r.nodes.to_string(),
                join(&r.x0),
                join(&r.x_hat),
            ])?;
        }
        w.flush()?;

        let aggregates = self.aggregates();
        let mut w = open("aggregate.csv")?;
        w.write_record([
            "method", "alpha", "beta", "param", "tau", "min_votes", "solves", "valid",
            "validity", "half_width", "ci_low", "ci_high", "mean_distance", "mean_changed",
            "mean_nu", "relaxed", "timeouts",
        ])?;
        for a in &aggregates {
            w.write_record([
                a.method.to_string(),
                opt(a.alpha),
                opt(a.beta),
                opt(a.param),
                num(a.tau),
                a.min_votes.to_string(),
                a.solves.to_string(),
                a.valid.to_string(),
                num(a.validity),
                num(a.half_width),
                num(a.ci_low),
                num(a.ci_high),
                num(a.mean_distance),
                num(a.mean_changed),
                num(a.mean_nu),
                a.relaxed.to_string(),
                a.timeouts.to_string(),
            ])?;
        }
        w.flush()?;

        // Validity against the robustness target.
        let mut w = open("validity.csv")?;
        w.write_record(["method", "alpha", "beta", "param", "target", "validity", "ci_low", "ci_high", "valid", "solves"])?;
        for a in &aggregates {
            w.write_record([
                a.method.to_string(),
                opt(a.alpha),
                opt(a.beta),
                opt(a.param),
                opt(a.alpha.map(|x| 1.0 - x)),
                num(a.validity),
                num(a.ci_low),
                num(a.ci_high),
                a.valid.to_string(),
                a.solves.to_string(),
            ])?;
        }
        w.flush()?;

        // Distance against validity.
        let mut w = open("pareto.csv")?;
        w.write_record(["method", "alpha", "beta", "param", "mean_distance", "validity"])?;
        for a in &aggregates {
            w.write_record([
                a.method.to_string(),
                opt(a.alpha),
                opt(a.beta),
                opt(a.param),
                num(a.mean_distance),
                num(a.validity),
            ])?;
        }
        w.flush()?;

        let changes = if self.records.is_empty() {
            Vec::new()
        } else {
            feature_change_stats(self)?
        };
        let mut w = open("changed_features.csv")?;
        w.write_record(["method", "alpha", "beta", "param", "mean_changed"])?;
        for c in &changes {
            let s = &c.setting;
            w.write_record([s.method.to_string(), opt(s.alpha), opt(s.beta), opt(s.param), num(c.mean_changed)])?;
        }
        w.flush()?;

        let mut w = open("feature_changes.csv")?;
        w.write_record(["method", "alpha", "beta", "param", "feature", "mean_abs_change", "normalized"])?;
        for c in &changes {
            let s = &c.setting;
            for (j, name) in self.feature_names.iter().enumerate() {
                w.write_record([
                    s.method.to_string(),
                    opt(s.alpha),
                    opt(s.beta),
                    opt(s.param),
                    name.clone(),
                    num(c.mean_abs_change[j]),
                    num(c.normalized[j]),
                ])?;
            }
        }
        w.flush()?;

        let mut w = open("timings.csv")?;
        w.write_record(["repetition", "query", "method", "alpha", "beta", "param", "seconds", "nodes", "optimal"])?;
        for r in &self.records {
            w.write_record([
                r.repetition.to_string(),
                r.query.to_string(),
                r.method.to_string(),
                opt(r.alpha),
                opt(r.beta),
                opt(r.param),
                num(r.seconds),
                r.nodes.to_string(),
                u8::from(r.optimal).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(paths)
    }
}
