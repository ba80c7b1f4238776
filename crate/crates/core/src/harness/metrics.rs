//! Validity, confidence intervals, permutation importance and feature-change
//! summaries.

use rand::seq::SliceRandom;
use serde::Serialize;

use super::HarnessError;
use crate::ensemble::tree_rng;
use crate::threshold::z_beta;
use crate::{Dataset, Forest};

/// Changes at or below this size (normalized units) do not count.
pub const CHANGE_TOLERANCE: f64 = 1e-9;

/// Share of successes with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: usize,
    pub total: usize,
    pub fraction: f64,
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: usize, total: usize) -> Result<Self, HarnessError> {
        if total == 0 {
            return Err(HarnessError::Empty("no observations".into()));
        }
        if successes > total {
            return Err(HarnessError::Empty(format!(
                "{successes} successes out of {total}"
            )));
        }
        let p = successes as f64 / total as f64;
        let z = z_beta(0.05).expect("0.05 is a valid level");
        let half_width = z * (p * (1.0 - p) / total as f64).sqrt();
        Ok(Proportion {
            successes,
            total,
            fraction: p,
            half_width,
            ci_low: (p - half_width).max(0.0),
            ci_high: (p + half_width).min(1.0),
        })
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Share of `explanations` the retrained forest assigns to `target`.
pub fn measure_validity(
    explanations: &[Vec<f64>],
    retrained: &Forest,
    target: u8,
) -> Result<Proportion, HarnessError> {
    let mut valid = 0;
    for x in explanations {
        if retrained.predict_class(x)? == target {
            valid += 1;
        }
    }
    Proportion::new(valid, explanations.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Importance {
    /// Mean accuracy drop per feature.
    pub raw: Vec<f64>,
    /// `raw` divided by its largest entry (unchanged when that is not positive).
    pub normalized: Vec<f64>,
}

/// Mean accuracy drop over `shuffles` permutations of each column. Feature
/// `j` draws its permutations from stream `j` of `seed`.
pub fn permutation_importance(
    forest: &Forest,
    held_out: &Dataset,
    shuffles: usize,
    seed: u64,
) -> Result<Importance, HarnessError> {
    let n = held_out.n();
    if n == 0 {
        return Err(HarnessError::Empty("held-out set is empty".into()));
    }
    if shuffles == 0 {
        return Err(HarnessError::Config("shuffles must be at least 1".into()));
    }
    let d = held_out.d();
    if forest.n_features != d {
        return Err(HarnessError::Config(format!(
            "forest expects {} features, data has {d}",
            forest.n_features
        )));
    }
    let correct = |x: &[f64], i: usize| forest.predict_class(x).map(|c| c == held_out.y[i]);
    let mut base = 0usize;
    for i in 0..n {
        base += usize::from(correct(held_out.row(i), i)?);
    }
    let mut raw = Vec::with_capacity(d);
    let mut x = vec![0.0; d];
    for j in 0..d {
        let mut rng = tree_rng(seed, j as u64);
        let mut column: Vec<f64> = held_out.rows().map(|r| r[j]).collect();
        let mut drop = 0.0;
        for _ in 0..shuffles {
            column.shuffle(&mut rng);
            let mut hits = 0usize;
            for i in 0..n {
                x.copy_from_slice(held_out.row(i));
                x[j] = column[i];
                hits += usize::from(correct(&x, i)?);
            }
            drop += (base as f64 - hits as f64) / n as f64;
        }
        raw.push(drop / shuffles as f64);
    }
    let normalized = normalize_to_max(&raw);
    Ok(Importance { raw, normalized })
}

pub(crate) fn normalize_to_max(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        values.to_vec()
    }
}

/// Features with `|x_hat_j - x0_j| > CHANGE_TOLERANCE`.
pub fn changed_features(x0: &[f64], x_hat: &[f64]) -> usize {
    x0.iter()
        .zip(x_hat)
        .filter(|(a, b)| (*a - *b).abs() > CHANGE_TOLERANCE)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{train_forest, Tree};
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::ForestConfig;

    #[test]
    fn proportion_arithmetic() {
        let p = Proportion::new(3, 4).unwrap();
        assert_eq!((p.successes, p.total, p.fraction), (3, 4, 0.75));
        let hw = 1.959_963_984_540_054 * (0.75f64 * 0.25 / 4.0).sqrt();
        assert!((p.half_width - hw).abs() < 1e-12);
        assert_eq!(p.ci_high, 1.0);
        assert_eq!(Proportion::new(5, 5).unwrap().fraction, 1.0);
        assert!(Proportion::new(0, 0).is_err());
    }

    #[test]
    fn validity_counts_target_class() {
        let f = Forest::from_trees(vec![Tree::stump(0, 0.5, 0, 1)], 1).unwrap();
        let xs = vec![vec![0.9], vec![0.6], vec![0.2], vec![0.7]];
        let v = measure_validity(&xs, &f, 1).unwrap();
        assert_eq!((v.successes, v.total), (3, 4));
        assert_eq!(v.fraction, 0.75);
        assert_eq!(measure_validity(&xs, &f, 0).unwrap().successes, 1);
        assert!(matches!(measure_validity(&[], &f, 1), Err(HarnessError::Empty(_))));
    }

    #[test]
    fn stump_importance_lives_on_its_feature() {
        let data = generate_synthetic(&SyntheticSpec::linear(300, 3, 0, 0.0), 2).unwrap();
        let f = Forest::from_trees(vec![Tree::stump(1, 0.5, 0, 1)], 3).unwrap();
        let imp = permutation_importance(&f, &data, 5, 9).unwrap();
        assert_eq!(imp.raw[0], 0.0);
        assert_eq!(imp.raw[2], 0.0);
        assert!(imp.raw[1] > 0.0);
        assert_eq!(imp.normalized[1], 1.0);
    }

    #[test]
    fn importance_is_deterministic_and_validates_input() {
        let data = generate_synthetic(&SyntheticSpec::linear(200, 2, 1, 0.1), 3).unwrap();
        let f = train_forest(&data, &ForestConfig { n_trees: 10, ..Default::default() }, 1).unwrap();
        assert_eq!(
            permutation_importance(&f, &data, 3, 5).unwrap(),
            permutation_importance(&f, &data, 3, 5).unwrap()
        );
        assert!(permutation_importance(&f, &data.subset(&[]), 3, 5).is_err());
        assert!(permutation_importance(&f, &data, 0, 5).is_err());
    }

    #[test]
    fn change_count_uses_tolerance() {
        assert_eq!(changed_features(&[0.1, 0.2, 0.3], &[0.1, 0.2 + 1e-10, 0.4]), 1);
        assert_eq!(changed_features(&[0.5], &[0.5]), 0);
    }
}
