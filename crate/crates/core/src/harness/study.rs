//! Consistency of Direct-SAA explanations for stump ensembles.
//!
//! Stumps of one ensemble are trained independently, so given the data the
//! target-class votes of a freshly trained ensemble of size `N` at a point `x`
//! are `Binomial(N, p(x))`. `p(x)` is estimated by retraining a large pool of
//! stumps; the true robustness of an explanation is then the exact binomial
//! majority probability at that estimate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::ensemble::{train_stump_ensemble, tree_rng};
use crate::solver::solve_counterfactual;
use crate::threshold::{binomial_cdf, select_threshold, MajorityReading, RobustnessMode, RobustnessSpec};
use crate::CounterfactualProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StumpStudyConfig {
    pub seed: u64,
    pub data: SyntheticSpec,
    pub sizes: Vec<usize>,
    pub alpha: f64,
    /// Independent training draws of the explained ensemble per size.
    pub draws: usize,
    pub queries: usize,
    /// Stumps retrained to estimate `p(x)`.
    pub retrains: usize,
}

impl Default for StumpStudyConfig {
    fn default() -> Self {
        StumpStudyConfig {
            seed: 0,
            data: SyntheticSpec::linear(400, 2, 0, 0.1),
            sizes: vec![11, 51, 201, 1001],
            alpha: 0.1,
            draws: 20,
            queries: 5,
            retrains: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StumpStudyRow {
    pub n: usize,
    pub tau: f64,
    pub solves: usize,
    /// Mean true robustness of the explanations.
    pub mean_robustness: f64,
    /// Mean `|robustness - (1 - alpha)|`.
    pub mean_gap: f64,
    /// Solves that needed `nu > 0`.
    pub relaxed: usize,
}

/// Probability that an ensemble of `n` stumps, each voting for the target with
/// probability `p`, reaches the majority `2 * votes >= n`.
pub fn majority_probability(n: usize, p: f64) -> Result<f64, HarnessError> {
    let need = n.div_ceil(2) as u64;
    if need == 0 {
        return Ok(1.0);
    }
    Ok(1.0 - binomial_cdf(need - 1, n as u64, p)?)
}

pub fn stump_consistency_study(config: &StumpStudyConfig) -> Result<Vec<StumpStudyRow>, HarnessError> {
    if config.sizes.is_empty() || config.draws == 0 || config.queries == 0 || config.retrains == 0 {
        return Err(HarnessError::Config(
            "sizes, draws, queries and retrains must be non-empty".into(),
        ));
    }
    let data = generate_synthetic(&config.data, config.seed)?;
    let mut rng = tree_rng(config.seed, 0);
    let pool_seed: u64 = rng.random();
    let query_seed: u64 = rng.random();
    let pool = train_stump_ensemble(&data, config.retrains, pool_seed)?;

    let mut candidates: Vec<usize> = (0..data.n()).filter(|&i| data.y[i] == 0).collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(query_seed));
    candidates.truncate(config.queries);
    if candidates.is_empty() {
        return Err(HarnessError::Empty("no class-0 rows to explain".into()));
    }

    let mut out = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let spec = RobustnessSpec {
            n: n as u64,
            alpha: config.alpha,
            mode: RobustnessMode::DirectSaa,
            reading: MajorityReading::default(),
        };
        let threshold = select_threshold(&spec)?;
        let mut robustness = Vec::new();
        let mut relaxed = 0;
        for _ in 0..config.draws {
            let seed: u64 = rng.random();
            let forest = train_stump_ensemble(&data, n, seed)?;
            for &q in &candidates {
                let problem =
                    CounterfactualProblem::new(&forest, &data.schema, data.row(q).to_vec(), 1, threshold.tau)?;
                let e = solve_counterfactual(&problem);
                if e.nu > 0.0 {
                    relaxed += 1;
                }
                let p = pool.predict_score(&e.x_hat)?;
                robustness.push(majority_probability(n, p)?);
            }
        }
        let target = 1.0 - config.alpha;
        let m = robustness.len() as f64;
        out.push(StumpStudyRow {
            n,
            tau: threshold.tau,
            solves: robustness.len(),
            mean_robustness: robustness.iter().sum::<f64>() / m,
            mean_gap: robustness.iter().map(|r| (r - target).abs()).sum::<f64>() / m,
            relaxed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_probability_matches_hand_values() {
        // n = 3: P(S >= 2) = 3p^2(1-p) + p^3
        let p: f64 = 0.7;
        let want = 3.0 * p * p * (1.0 - p) + p.powi(3);
        assert!((majority_probability(3, p).unwrap() - want).abs() < 1e-14);
        // n = 2 needs one vote
        assert!((majority_probability(2, 0.5).unwrap() - 0.75).abs() < 1e-14);
        assert_eq!(majority_probability(5, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn small_study_runs_and_is_deterministic() {
        let config = StumpStudyConfig {
            sizes: vec![5, 21],
            draws: 2,
            queries: 2,
            retrains: 200,
            ..Default::default()
        };
        let a = stump_consistency_study(&config).unwrap();
        assert_eq!(a, stump_consistency_study(&config).unwrap());
        assert_eq!(a.len(), 2);
        for row in &a {
            assert_eq!(row.solves, 4);
            assert!((0.0..=1.0).contains(&row.mean_robustness));
        }
    }
}
