//! Robust counterfactual explanations for randomized tree ensembles.
//!
//! A random forest retrained on the same data with a different seed is a
//! different classifier. An explanation that barely reaches the majority vote
//! of one forest is valid for a retrained forest only about half of the time.
//! This crate computes explanations whose vote share clears a threshold derived
//! from the binomial distribution of base-learner votes, so that they remain
//! valid for a retrained ensemble with a chosen probability.
//!
//! Modules:
//!
//! - [`data`]: schemas, CSV loading, normalization, synthetic datasets.
//! - [`ensemble`]: CART random forests and decision stumps, with a versioned file format.
//! - [`threshold`]: binomial machinery and the robustness thresholds.
//! - [`solver`]: exact minimum-distance counterfactual search and a brute-force oracle.
//! - [`plausibility`]: isolation-forest constraints and the 1-LOF penalty.
//! - [`harness`]: retrain-and-validate experiments, metrics and report files.

pub mod data;
pub mod ensemble;
pub mod harness;
pub mod plausibility;
pub mod solver;
pub mod special;
pub mod threshold;

pub use data::{Dataset, DatasetSchema, DistanceWeights, FeatureKind, FeatureSpec};
pub use ensemble::{Forest, ForestConfig, Tree};
pub use solver::{CounterfactualProblem, Explanation};

pub use threshold::{RobustnessMode, RobustnessSpec, ThresholdResult};
