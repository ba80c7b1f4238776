//! Plausibility models consumed by the solver: an isolation-forest anomaly
//! constraint and the 1-LOF penalty.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DistanceWeights;
use crate::ensemble::{parse_node_table, EnsembleError, NodeRecord, TableNode};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Floor on 1NN distances before taking the reciprocal density.
pub const LOF_MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PlausibilityError {
    #[error("need at least {needed} target-class samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("contamination {0} outside (0, 0.5]")]
    Contamination(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input has {got} features, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("isolation forest file: {0}")]
    Format(String),
    #[error(transparent)]
    Tree(#[from] EnsembleError),
}

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points.
pub fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IsoNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `size` training points reached this leaf at `depth`.
    Leaf { size: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<IsoNode>,
}

impl IsoTree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                IsoNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                IsoNode::Leaf { .. } => return i,
            }
        }
    }

    /// `I_t(x) = depth + c(size)` of the leaf reached by `x`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        leaf_value(&self.nodes[self.leaf_index(x)])
    }
}

pub fn leaf_value(node: &IsoNode) -> f64 {
    match *node {
        IsoNode::Leaf { size, depth } => depth as f64 + c_factor(size),
        IsoNode::Internal { .. } => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationConfig {
    pub n_trees: usize,
    pub contamination: f64,
    /// `None` means `min(256, n)`.
    pub subsample: Option<usize>,
    pub direction: ConstraintDirection,
}

impl Default for IsolationConfig {
    fn default() -> Self {
        IsolationConfig {
            n_trees: 50,
            contamination: 0.1,
            subsample: None,
            direction: ConstraintDirection::default(),
        }
    }
}

/// Which side of the offset counts as plausible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintDirection {
    /// `A(x) <= bound + nu`.
    #[default]
    AsPrinted,
    /// `A(x) >= bound - nu`: long isolation paths are the normal ones.
    Inlier,
}

impl std::str::FromStr for ConstraintDirection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "as-printed" => Ok(ConstraintDirection::AsPrinted),
            "inlier" => Ok(ConstraintDirection::Inlier),
            other => Err(format!("unknown constraint direction `{other}`")),
        }
    }
}

/// Isolation forest with its anomaly constraint `A(x) <= log2(-offset) + nu`
/// (or the reverse, see [`ConstraintDirection`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsoTree>,
    pub subsample: usize,
    pub n_features: usize,
    pub contamination: f64,
    pub direction: ConstraintDirection,
    /// `log2(-offset)`.
    pub bound: f64,
    pub seed: u64,
}

impl IsolationForest {
    pub fn offset(&self) -> f64 {
        -(2f64.powf(self.bound))
    }

    pub fn c_subsample(&self) -> f64 {
        c_factor(self.subsample)
    }

    fn normalizer(&self) -> f64 {
        let c = self.c_subsample();
        // A single-point subsample has c = 0; scores are then raw path lengths.
        self.trees.len() as f64 * if c > 0.0 { c } else { 1.0 }
    }

    /// `A(x) = (1/N_if) * sum_t I_t(x) / c(psi)`.
    pub fn anomaly_score(&self, x: &[f64]) -> Result<f64, PlausibilityError> {
        if x.len() != self.n_features {
            return Err(PlausibilityError::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.normalizer()
    }

    /// Score from per-tree path lengths.
    pub(crate) fn score_from_sum(&self, total_path: f64) -> f64 {
        total_path / self.normalizer()
    }

    /// Smallest `nu >= 0` satisfying the constraint at score `a`.
    pub fn violation(&self, a: f64) -> f64 {
        match self.direction {
            ConstraintDirection::AsPrinted => (a - self.bound).max(0.0),
            ConstraintDirection::Inlier => (self.bound - a).max(0.0),
        }
    }

    /// Recomputes the bound for another contamination level on the same trees.
    pub fn with_contamination(
        &self,
        training: &[Vec<f64>],
        contamination: f64,
    ) -> Result<IsolationForest, PlausibilityError> {
        check_contamination(contamination)?;
        let mut out = self.clone();
        let scores: Vec<f64> = training.iter().map(|x| self.score_unchecked(x)).collect();
        out.contamination = contamination;
        out.bound = quantile_bound(scores, contamination, self.direction);
        Ok(out)
    }
}

fn check_contamination(c: f64) -> Result<(), PlausibilityError> {
    if c > 0.0 && c <= 0.5 {
        Ok(())
    } else {
        Err(PlausibilityError::Contamination(c))
    }
}

/// Bound such that `ceil(c * n)` training scores violate it; ties on the
/// boundary fall on the violating side.
fn quantile_bound(mut scores: Vec<f64>, contamination: f64, direction: ConstraintDirection) -> f64 {
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let k = ((contamination * n as f64).ceil() as usize).clamp(1, n);
    match direction {
        // violators: the k largest, so every score >= scores[n - k] violates
        ConstraintDirection::AsPrinted => scores[n - k].next_down(),
        // violators: the k smallest, so every score <= scores[k - 1] violates
        ConstraintDirection::Inlier => scores[k - 1].next_up(),
    }
}

/// Trains on target-class rows only. Per-tree randomness comes from stream
/// `t` of the seed.
pub fn train_isolation_forest(
    samples: &[Vec<f64>],
    config: &IsolationConfig,
    seed: u64,
) -> Result<IsolationForest, PlausibilityError> {
    if samples.len() < 2 {
        return Err(PlausibilityError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    check_contamination(config.contamination)?;
    if config.n_trees == 0 {
        return Err(PlausibilityError::Config("n_trees must be at least 1".into()));
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(PlausibilityError::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    let psi = config
        .subsample
        .unwrap_or(256)
        .min(samples.len())
        .max(2);
    let max_depth = (psi as f64).log2().ceil() as usize;
    let mut degenerate = false;
    let trees: Vec<IsoTree> = (0..config.n_trees)
        .map(|t| {
            let mut rng = crate::ensemble::tree_rng(seed, t as u64);
            let rows: Vec<usize> = sample(&mut rng, samples.len(), psi).into_vec();
            let mut nodes = Vec::new();
            grow_iso(samples, rows, 0, max_depth, &mut rng, &mut nodes);
            if nodes.len() == 1 {
                degenerate = true;
            }
            IsoTree { nodes }
        })
        .collect();
    if degenerate {
        log::warn!("constant target-class data: some isolation trees are single leaves");
    }
    let mut forest = IsolationForest {
        trees,
        subsample: psi,
        n_features: d,
        contamination: config.contamination,
        direction: config.direction,
        bound: 0.0,
        seed,
    };
    let scores = samples.iter().map(|x| forest.score_unchecked(x)).collect();
    forest.bound = quantile_bound(scores, config.contamination, config.direction);
    Ok(forest)
}

fn grow_iso<R: Rng>(
    samples: &[Vec<f64>],
    rows: Vec<usize>,
    depth: usize,
    max_depth: usize,
    rng: &mut R,
    nodes: &mut Vec<IsoNode>,
) -> usize {
    let index = nodes.len();
    nodes.push(IsoNode::Leaf {
        size: rows.len(),
        depth,
    });
    if rows.len() <= 1 || depth >= max_depth {
        return index;
    }
    let d = samples[0].len();
    let ranges: Vec<(usize, f64, f64)> = (0..d)
        .filter_map(|j| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(samples[r][j]), hi.max(samples[r][j]))
            });
            (lo < hi).then_some((j, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return index;
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let threshold = rng.random_range(lo..hi);
    let (l, r): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&row| samples[row][feature] <= threshold);
    let left = grow_iso(samples, l, depth + 1, max_depth, rng, nodes);
    let right = grow_iso(samples, r, depth + 1, max_depth, rng, nodes);
    nodes[index] = IsoNode::Internal {
        feature,
        threshold,
        left,
        right,
    };
    index
}

const IFOREST_FORMAT: &str = "robustcf-iforest";
const IFOREST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsoTreeFile {
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsoForestFile {
    format: String,
    version: u32,
    seed: u64,
    n_features: usize,
    subsample: usize,
    contamination: f64,
    direction: ConstraintDirection,
    bound: String,
    offset: String,
    trees: Vec<IsoTreeFile>,
}

pub fn serialize_isolation_forest(forest: &IsolationForest) -> String {
    let trees = forest
        .trees
        .iter()
        .map(|t| IsoTreeFile {
            nodes: t
                .nodes
                .iter()
                .map(|n| match *n {
                    IsoNode::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => NodeRecord {
                        feature: Some(feature),
                        threshold: Some(crate::ensemble::encode_threshold(threshold)),
                        left: Some(left),
                        right: Some(right),
                        ..NodeRecord::default()
                    },
                    IsoNode::Leaf { size, .. } => NodeRecord {
                        samples: Some(size),
                        ..NodeRecord::default()
                    },
                })
                .collect(),
        })
        .collect();
    let file = IsoForestFile {
        format: IFOREST_FORMAT.into(),
        version: IFOREST_VERSION,
        seed: forest.seed,
        n_features: forest.n_features,
        subsample: forest.subsample,
        contamination: forest.contamination,
        direction: forest.direction,
        bound: crate::ensemble::encode_threshold(forest.bound),
        offset: crate::ensemble::encode_threshold(forest.offset()),
        trees,
    };
    serde_json::to_string_pretty(&file).expect("isolation forest serialization is infallible")
}

pub fn deserialize_isolation_forest(text: &str) -> Result<IsolationForest, PlausibilityError> {
    let file: IsoForestFile =
        serde_json::from_str(text).map_err(|e| PlausibilityError::Format(e.to_string()))?;
    if file.format != IFOREST_FORMAT {
        return Err(PlausibilityError::Format(format!(
            "not an isolation forest file (format = {:?})",
            file.format
        )));
    }
    if file.version != IFOREST_VERSION {
        return Err(PlausibilityError::Format(format!(
            "version {} is not supported (expected {IFOREST_VERSION})",
            file.version
        )));
    }
    if file.trees.is_empty() || file.n_features == 0 || file.subsample < 2 {
        return Err(PlausibilityError::Format(
            "needs at least one tree, one feature and a subsample of at least 2".into(),
        ));
    }
    check_contamination(file.contamination)?;
    let bound: f64 = file
        .bound
        .parse()
        .ok()
        .filter(|b: &f64| b.is_finite())
        .ok_or_else(|| PlausibilityError::Format(format!("bad bound `{}`", file.bound)))?;
    let mut trees = Vec::with_capacity(file.trees.len());
    for (t, tree) in file.trees.iter().enumerate() {
        let table = parse_node_table(&tree.nodes, file.n_features, t)?;
        // Depths follow from the structure; parents precede children.
        let mut depth = vec![0usize; table.len()];
        let mut nodes = Vec::with_capacity(table.len());
        for (i, node) in table.into_iter().enumerate() {
            nodes.push(match node {
                TableNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    depth[left] = depth[i] + 1;
                    depth[right] = depth[i] + 1;
                    IsoNode::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                TableNode::Leaf {
                    class: None,
                    samples,
                } => IsoNode::Leaf {
                    size: samples,
                    depth: depth[i],
                },
                TableNode::Leaf { class: Some(_), .. } => {
                    return Err(PlausibilityError::Format(format!(
                        "tree {t}, node {i}: isolation leaves carry no class"
                    )))
                }
            });
        }
        trees.push(IsoTree { nodes });
    }
    Ok(IsolationForest {
        trees,
        subsample: file.subsample,
        n_features: file.n_features,
        contamination: file.contamination,
        direction: file.direction,
        bound,
        seed: file.seed,
    })
}

/// `lambda * l_a * max(Delta_a, f(x, x_a))` where `a` is the anchor nearest to
/// `x` (lowest index on ties) and `l_a = 1 / Delta_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofPenalty {
    pub anchors: Vec<Vec<f64>>,
    /// 1NN distance of each anchor within the target-class training set.
    pub delta: Vec<f64>,
    /// Local reachability density `1 / max(Delta, LOF_MIN_DISTANCE)`.
    pub lrd: Vec<f64>,
    pub lambda: f64,
    pub weights: DistanceWeights,
}

impl LofPenalty {
    pub fn nearest_anchor(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, a) in self.anchors.iter().enumerate() {
            let dist = self.weights.distance(x, a);
            if dist < best.1 {
                best = (i, dist);
            }
        }
        best.0
    }

    pub fn anchor_term(&self, i: usize, dist_to_anchor: f64) -> f64 {
        self.lambda * self.lrd[i] * self.delta[i].max(dist_to_anchor)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let a = self.nearest_anchor(x);
        self.anchor_term(a, self.weights.distance(x, &self.anchors[a]))
    }
}

/// Builds the penalty from the `n_anchors` target-class rows nearest to `x0`.
pub fn lof_penalty(
    target_rows: &[Vec<f64>],
    x0: &[f64],
    n_anchors: usize,
    lambda: f64,
    weights: &DistanceWeights,
) -> Result<LofPenalty, PlausibilityError> {
    if target_rows.len() < n_anchors + 1 {
        return Err(PlausibilityError::TooFewSamples {
            needed: n_anchors + 1,
            got: target_rows.len(),
        });
    }
    if n_anchors == 0 {
        return Err(PlausibilityError::Config("need at least one anchor".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(PlausibilityError::Config(format!("lambda {lambda} must be finite and >= 0")));
    }
    let mut order: Vec<(f64, usize)> = target_rows
        .iter()
        .enumerate()
        .map(|(i, r)| (weights.distance(r, x0), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut anchors = Vec::with_capacity(n_anchors);
    let mut delta = Vec::with_capacity(n_anchors);
    for &(_, i) in order.iter().take(n_anchors) {
        let nn = target_rows
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, r)| weights.distance(r, &target_rows[i]))
            .fold(f64::INFINITY, f64::min);
        anchors.push(target_rows[i].clone());
        delta.push(nn);
    }
    let lrd = delta.iter().map(|d| 1.0 / d.max(LOF_MIN_DISTANCE)).collect();
    Ok(LofPenalty {
        anchors,
        delta,
        lrd,
        lambda,
        weights: weights.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn c_factor_values() {
        assert_eq!(c_factor(0), 0.0);
        assert_eq!(c_factor(1), 0.0);
        assert_eq!(c_factor(2), 1.0);
        // 2 (ln 2 + gamma) - 4/3
        let expected = 2.0 * (2f64.ln() + EULER_GAMMA) - 4.0 / 3.0;
        assert!((c_factor(3) - expected).abs() < 1e-15);
        assert!((c_factor(256) - 10.244_770_920_119_917).abs() < 1e-9);
    }

    #[test]
    fn leaf_depth_three_singleton_path_length() {
        let tree = IsoTree {
            nodes: vec![
                IsoNode::Internal { feature: 0, threshold: 0.5, left: 1, right: 2 },
                IsoNode::Leaf { size: 4, depth: 1 },
                IsoNode::Internal { feature: 0, threshold: 0.7, left: 3, right: 4 },
                IsoNode::Leaf { size: 2, depth: 2 },
                IsoNode::Internal { feature: 1, threshold: 0.5, left: 5, right: 6 },
                IsoNode::Leaf { size: 1, depth: 3 },
                IsoNode::Leaf { size: 1, depth: 3 },
            ],
        };
        assert_eq!(tree.path_length(&[0.9, 0.1]), 3.0);
        assert_eq!(tree.path_length(&[0.6, 0.1]), 3.0);
        let f = IsolationForest {
            trees: vec![tree.clone()],
            subsample: 2,
            n_features: 2,
            contamination: 0.1,
            direction: ConstraintDirection::AsPrinted,
            bound: 0.0,
            seed: 0,
        };
        let doubled = IsolationForest { trees: vec![tree.clone(), tree], ..f.clone() };
        for x in [[0.1, 0.1], [0.9, 0.9], [0.6, 0.3]] {
            assert_eq!(f.anomaly_score(&x).unwrap(), doubled.anomaly_score(&x).unwrap());
        }
        assert!(f.anomaly_score(&[0.1]).is_err());
    }

    fn cluster(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.5, 0.05).unwrap();
        (0..300)
            .map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect()
    }

    #[test]
    fn cluster_center_scores_higher_than_outlier() {
        let data = cluster(3);
        let f = train_isolation_forest(&data, &IsolationConfig::default(), 11).unwrap();
        let center = f.anomaly_score(&[0.5, 0.5]).unwrap();
        let outlier = f.anomaly_score(&[0.95, 0.05]).unwrap();
        assert!(center > outlier, "{center} vs {outlier}");
        for t in &f.trees {
            for x in [[0.5, 0.5], [0.95, 0.05]] {
                assert!(t.path_length(&x) >= 0.0);
            }
        }
    }

    #[test]
    fn offset_violations_match_contamination() {
        let data = cluster(5);
        for direction in [ConstraintDirection::AsPrinted, ConstraintDirection::Inlier] {
            let config = IsolationConfig { direction, ..Default::default() };
            let f = train_isolation_forest(&data, &config, 11).unwrap();
            let mut last = f64::INFINITY;
            for c in [0.05, 0.1, 0.2, 0.3, 0.4, 0.5] {
                let g = f.with_contamination(&data, c).unwrap();
                let violators = data
                    .iter()
                    .filter(|x| g.violation(g.anomaly_score(x).unwrap()) > 0.0)
                    .count();
                assert_eq!(violators, (c * data.len() as f64).ceil() as usize, "{c}");
                if direction == ConstraintDirection::AsPrinted {
                    assert!(g.bound <= last);
                    last = g.bound;
                }
                assert_eq!(g.offset(), -(2f64.powf(g.bound)));
            }
        }
    }

    #[test]
    fn iforest_round_trip_and_rejects_classes() {
        let data = cluster(7);
        let f = train_isolation_forest(&data, &IsolationConfig { n_trees: 5, ..Default::default() }, 2).unwrap();
        let g = deserialize_isolation_forest(&serialize_isolation_forest(&f)).unwrap();
        assert_eq!(f, g);
        let text = serialize_isolation_forest(&f).replacen("\"samples\"", "\"class\": 1, \"samples\"", 1);
        assert!(deserialize_isolation_forest(&text).is_err());
    }

    #[test]
    fn constant_data_gives_single_leaves() {
        let data = vec![vec![0.3, 0.3]; 10];
        let f = train_isolation_forest(&data, &IsolationConfig::default(), 1).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn lof_anchor_contribution_is_lambda() {
        let w = DistanceWeights(vec![1.0, 1.0]);
        let rows = vec![
            vec![0.1, 0.1],
            vec![0.2, 0.1],
            vec![0.8, 0.8],
            vec![0.9, 0.9],
            vec![0.5, 0.5],
        ];
        let lof = lof_penalty(&rows, &[0.15, 0.1], 3, 2.0, &w).unwrap();
        assert_eq!(lof.anchors[0], vec![0.1, 0.1]);
        assert_eq!(lof.anchors[1], vec![0.2, 0.1]);
        assert!((lof.delta[0] - 0.1).abs() < 1e-15);
        assert!((lof.value(&[0.1, 0.1]) - 2.0).abs() < 1e-12);
        assert!(lof_penalty(&rows, &[0.0, 0.0], 5, 1.0, &w).is_err());
    }

    #[test]
    fn lof_duplicate_anchor_is_capped() {
        let w = DistanceWeights(vec![1.0]);
        let rows = vec![vec![0.4], vec![0.4], vec![0.9]];
        let lof = lof_penalty(&rows, &[0.4], 1, 1.0, &w).unwrap();
        assert_eq!(lof.delta[0], 0.0);
        assert_eq!(lof.lrd[0], 1.0 / LOF_MIN_DISTANCE);
        assert!(lof.value(&[0.4]).is_finite());
    }
}
