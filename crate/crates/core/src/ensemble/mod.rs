//! Randomized tree ensembles: depth-capped CART forests, single-split stumps
//! and their file format.

mod format;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{deserialize_forest, serialize_forest, FORMAT_VERSION};
pub(crate) use format::{encode_threshold, parse_node_table, NodeRecord, TableNode};
pub(crate) use train::tree_rng;
pub use train::{train_forest, train_stump_ensemble};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid forest configuration: {0}")]
    Config(String),
    #[error("input has {got} features, forest expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("forest file: {0}")]
    Format(String),
    #[error("forest file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tree {tree}: {message}")]
    CorruptTree { tree: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: u8,
        samples: usize,
    },
}

/// Flat node array with the root at index 0. Children always have larger
/// indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(class: u8, samples: usize) -> Self {
        Tree {
            nodes: vec![Node::Leaf { class, samples }],
        }
    }

    /// Depth-1 tree splitting `feature` at `threshold`.
    pub fn stump(feature: usize, threshold: f64, left_class: u8, right_class: u8) -> Self {
        Tree {
            nodes: vec![
                Node::Internal {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf {
                    class: left_class,
                    samples: 0,
                },
                Node::Leaf {
                    class: right_class,
                    samples: 0,
                },
            ],
        }
    }

    /// Index of the leaf reached by `x`; `x[f] <= threshold` goes left.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { class, .. } => class,
            Node::Internal { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Internal { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    /// Every `(feature, threshold)` pair used by an internal node.
    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Internal {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        })
    }

    /// `(A, b)` encoding of a tree of depth at most 1, `None` for deeper trees.
    pub fn stump_encoding(&self, d: usize) -> Option<StumpEncoding> {
        match self.nodes.as_slice() {
            [Node::Leaf { class, .. }] => Some(StumpEncoding::constant(d, *class)),
            [Node::Internal {
                feature,
                threshold,
                left,
                right,
            }, ..] => {
                let class_of = |i: usize| match self.nodes.get(i) {
                    Some(Node::Leaf { class, .. }) => Some(*class),
                    _ => None,
                };
                let (lc, rc) = (class_of(*left)?, class_of(*right)?);
                Some(match (lc, rc) {
                    (1, 0) => StumpEncoding::single(d, *feature, 1, *threshold),
                    // x > t  <=>  x >= next_up(t), which keeps the equivalence
                    // exact on the threshold itself.
                    (0, 1) => StumpEncoding::single(d, *feature, -1, -threshold.next_up()),
                    (c, _) => StumpEncoding::constant(d, c),
                })
            }
            _ => None,
        }
    }
}

/// Linear form of a stump: class 1 iff `A.x - b <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpEncoding {
    pub a: Vec<i8>,
    pub b: f64,
}

impl StumpEncoding {
    fn single(d: usize, feature: usize, sign: i8, b: f64) -> Self {
        let mut a = vec![0; d];
        a[feature] = sign;
        StumpEncoding { a, b }
    }

    /// `A = 0` with `b = 0` (always class 1) or `b = -1` (always class 0).
    fn constant(d: usize, class: u8) -> Self {
        StumpEncoding {
            a: vec![0; d],
            b: if class == 1 { 0.0 } else { -1.0 },
        }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        let s: f64 = self
            .a
            .iter()
            .zip(x)
            .filter(|(a, _)| **a != 0)
            .map(|(a, v)| f64::from(*a) * v)
            .sum();
        u8::from(s - self.b <= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 4,
            features_per_split: None,
            bootstrap: true,
            min_samples_leaf: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.n_trees == 0 {
            return Err(EnsembleError::Config("n_trees must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(EnsembleError::Config("max_depth must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(EnsembleError::Config(
                "features_per_split must be at least 1".into(),
            ));
        }
        if self.min_samples_leaf == 0 {
            return Err(EnsembleError::Config(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn features_per_split_for(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub seed: u64,
    pub n_features: usize,
}

/// Vote count for class 1 out of `total` trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Votes {
    pub ones: usize,
    pub total: usize,
}

impl Votes {
    pub fn score(self) -> f64 {
        self.ones as f64 / self.total as f64
    }

    /// Class 1 iff at least half of the trees vote 1.
    pub fn class(self) -> u8 {
        u8::from(2 * self.ones >= self.total)
    }
}

impl Forest {
    /// Builds a forest from explicit trees; used for hand-built fixtures.
    pub fn from_trees(trees: Vec<Tree>, n_features: usize) -> Result<Self, EnsembleError> {
        if trees.is_empty() {
            return Err(EnsembleError::Config("a forest needs at least one tree".into()));
        }
        let max_depth = trees.iter().map(Tree::depth).max().unwrap_or(0).max(1);
        let forest = Forest {
            config: ForestConfig {
                n_trees: trees.len(),
                max_depth,
                ..ForestConfig::default()
            },
            trees,
            seed: 0,
            n_features,
        };
        format::validate_forest(&forest)?;
        Ok(forest)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), EnsembleError> {
        if x.len() != self.n_features {
            return Err(EnsembleError::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict_votes(&self, x: &[f64]) -> Result<Votes, EnsembleError> {
        self.check_dim(x)?;
        let ones = self.trees.iter().filter(|t| t.predict(x) == 1).count();
        Ok(Votes {
            ones,
            total: self.trees.len(),
        })
    }

    pub fn predict_score(&self, x: &[f64]) -> Result<f64, EnsembleError> {
        self.predict_votes(x).map(Votes::score)
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<u8, EnsembleError> {
        self.predict_votes(x).map(Votes::class)
    }

    pub fn accuracy(&self, data: &crate::Dataset) -> Result<f64, EnsembleError> {
        let mut correct = 0usize;
        for (i, row) in data.rows().enumerate() {
            if self.predict_class(row)? == data.y[i] {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.n().max(1) as f64)
    }

    /// `(A, b)` encodings when every tree has depth at most 1.
    pub fn stump_encodings(&self) -> Option<Vec<StumpEncoding>> {
        self.trees
            .iter()
            .map(|t| t.stump_encoding(self.n_features))
            .collect()
    }
}
