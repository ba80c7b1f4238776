//! CART training with Gini splits, bootstrap resampling and random feature
//! subsets.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EnsembleError, Forest, ForestConfig, Node, Tree};
use crate::Dataset;

/// RNG for tree `index`: stream `index` of the ChaCha generator keyed by `seed`.
pub(crate) fn tree_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn train_forest(
    data: &Dataset,
    config: &ForestConfig,
    seed: u64,
) -> Result<Forest, EnsembleError> {
    config.validate()?;
    if data.n() == 0 {
        return Err(EnsembleError::EmptyDataset);
    }
    let counts = data.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        log::warn!("training data holds a single class; the forest is constant");
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_rng(seed, i as u64);
            train_tree(data, config, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        config: config.clone(),
        seed,
        n_features: data.d(),
    })
}

/// Forest of depth-1 trees.
pub fn train_stump_ensemble(
    data: &Dataset,
    n_trees: usize,
    seed: u64,
) -> Result<Forest, EnsembleError> {
    let config = ForestConfig {
        n_trees,
        max_depth: 1,
        ..ForestConfig::default()
    };
    train_forest(data, &config, seed)
}

/// Training sample: row index and multiplicity in the bootstrap draw.
#[derive(Clone, Copy)]
struct Sample {
    row: usize,
    weight: u64,
}

fn train_tree(data: &Dataset, config: &ForestConfig, rng: &mut ChaCha8Rng) -> Tree {
    let n = data.n();
    let mut weights = vec![0u64; n];
    if config.bootstrap {
        for _ in 0..n {
            weights[rng.random_range(0..n)] += 1;
        }
    } else {
        weights.fill(1);
    }
    let samples: Vec<Sample> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0)
        .map(|(row, &weight)| Sample { row, weight })
        .collect();
    let mut builder = Builder {
        data,
        config,
        mtry: config.features_per_split_for(data.d()),
        nodes: Vec::new(),
        scratch: Vec::new(),
    };
    builder.grow(samples, 0, rng);
    Tree {
        nodes: builder.nodes,
    }
}

struct Builder<'a> {
    data: &'a Dataset,
    config: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, u8, u64)>,
}

/// Split quality `sum_children (w0^2 + w1^2) / w_child`, kept as the exact
/// fraction `num / den`; larger is lower weighted Gini impurity.
#[derive(Clone, Copy)]
struct Quality {
    num: u128,
    den: u128,
}

impl Quality {
    fn new(l: [u64; 2], r: [u64; 2]) -> Self {
        let sq = |c: [u64; 2]| u128::from(c[0]) * u128::from(c[0]) + u128::from(c[1]) * u128::from(c[1]);
        let (wl, wr) = (u128::from(l[0] + l[1]), u128::from(r[0] + r[1]));
        Quality {
            num: sq(l) * wr + sq(r) * wl,
            den: wl * wr,
        }
    }

    fn cmp(&self, other: &Quality) -> Ordering {
        // num <= n^3 and den <= n^2, so the products fit in u128 for n < 2^25.
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    quality: Quality,
}

impl Split {
    /// Higher quality wins; ties go to the lower feature, then the lower threshold.
    fn beats(&self, other: &Split) -> bool {
        match self.quality.cmp(&other.quality) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.feature, self.threshold) < (other.feature, other.threshold),
        }
    }
}

impl Builder<'_> {
    fn grow(&mut self, samples: Vec<Sample>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut counts = [0u64; 2];
        for s in &samples {
            counts[usize::from(self.data.y[s.row])] += s.weight;
        }
        let total = counts[0] + counts[1];
        let index = self.nodes.len();
        let leaf = Node::Leaf {
            class: u8::from(counts[1] > counts[0]),
            samples: total as usize,
        };
        self.nodes.push(leaf);

        let pure = counts[0] == 0 || counts[1] == 0;
        let min_leaf = self.config.min_samples_leaf as u64;
        if pure || depth >= self.config.max_depth || total < 2 * min_leaf {
            return index;
        }
        let Some(split) = self.best_split(&samples, counts, rng) else {
            return index;
        };
        let (left, right): (Vec<Sample>, Vec<Sample>) = samples
            .into_iter()
            .partition(|s| self.data.row(s.row)[split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[index] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        index
    }

    /// Visits features in random order until `mtry` non-constant ones have
    /// been evaluated.
    fn best_split(
        &mut self,
        samples: &[Sample],
        counts: [u64; 2],
        rng: &mut ChaCha8Rng,
    ) -> Option<Split> {
        let d = self.data.d();
        let order = sample(rng, d, d);
        let mut visited = 0;
        let mut best: Option<Split> = None;
        for feature in order.iter() {
            if visited == self.mtry {
                break;
            }
            self.scratch.clear();
            self.scratch.extend(samples.iter().map(|s| {
                (self.data.row(s.row)[feature], self.data.y[s.row], s.weight)
            }));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[self.scratch.len() - 1].0 {
                continue;
            }
            visited += 1;
            if let Some(split) = best_threshold(&self.scratch, feature, counts, self.config.min_samples_leaf as u64) {
                if best.as_ref().is_none_or(|b| split.beats(b)) {
                    best = Some(split);
                }
            }
        }
        best
    }
}

fn best_threshold(
    sorted: &[(f64, u8, u64)],
    feature: usize,
    counts: [u64; 2],
    min_leaf: u64,
) -> Option<Split> {
    let mut left = [0u64; 2];
    let mut best: Option<Split> = None;
    for i in 0..sorted.len() - 1 {
        let (v, class, w) = sorted[i];
        left[usize::from(class)] += w;
        let next = sorted[i + 1].0;
        if next == v {
            continue;
        }
        let right = [counts[0] - left[0], counts[1] - left[1]];
        if left[0] + left[1] < min_leaf || right[0] + right[1] < min_leaf {
            continue;
        }
        let mut threshold = v + (next - v) / 2.0;
        if threshold >= next {
            threshold = v;
        }
        let split = Split {
            feature,
            threshold,
            quality: Quality::new(left, right),
        };
        if best.as_ref().is_none_or(|b| split.beats(b)) {
            best = Some(split);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DatasetSchema, SyntheticSpec};

    fn dataset(rows: &[(f64, f64, u8)]) -> Dataset {
        let x = rows.iter().flat_map(|r| [r.0, r.1]).collect();
        let y = rows.iter().map(|r| r.2).collect();
        Dataset::new(DatasetSchema::synthetic(2, 0), x, y).unwrap()
    }

    #[test]
    fn all_ones_gives_single_leaves() {
        let data = dataset(&[(0.1, 0.2, 1), (0.5, 0.9, 1), (0.7, 0.3, 1)]);
        let f = train_forest(&data, &ForestConfig { n_trees: 10, ..Default::default() }, 3).unwrap();
        for t in &f.trees {
            assert_eq!(t.nodes.len(), 1);
            assert!(matches!(t.nodes[0], Node::Leaf { class: 1, .. }));
        }
        assert_eq!(f.predict_score(&[0.4, 0.4]).unwrap(), 1.0);
    }

    #[test]
    fn gini_picks_separating_midpoint() {
        let data = dataset(&[(0.1, 0.5, 0), (0.2, 0.1, 0), (0.6, 0.9, 1), (0.8, 0.4, 1)]);
        let config = ForestConfig {
            n_trees: 1,
            max_depth: 3,
            features_per_split: Some(2),
            bootstrap: false,
            min_samples_leaf: 1,
        };
        let f = train_forest(&data, &config, 0).unwrap();
        assert_eq!(
            f.trees[0].nodes[0],
            Node::Internal { feature: 0, threshold: 0.4, left: 1, right: 2 }
        );
        assert_eq!(f.trees[0].depth(), 1);
    }

    #[test]
    fn equal_quality_tie_goes_to_lowest_feature() {
        // Both features separate the classes perfectly.
        let data = dataset(&[(0.1, 0.1, 0), (0.2, 0.2, 0), (0.8, 0.8, 1), (0.9, 0.9, 1)]);
        let config = ForestConfig {
            n_trees: 20,
            max_depth: 1,
            features_per_split: Some(2),
            bootstrap: false,
            min_samples_leaf: 1,
        };
        let f = train_forest(&data, &config, 11).unwrap();
        for t in &f.trees {
            assert!(matches!(t.nodes[0], Node::Internal { feature: 0, .. }));
        }
    }

    #[test]
    fn leaf_class_tie_is_zero() {
        let data = dataset(&[(0.5, 0.5, 0), (0.5, 0.5, 1)]);
        let config = ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() };
        let f = train_forest(&data, &config, 0).unwrap();
        assert_eq!(f.trees[0].nodes, vec![Node::Leaf { class: 0, samples: 2 }]);
    }

    #[test]
    fn deterministic_and_tree_independent() {
        let data = generate_synthetic(&SyntheticSpec::linear(300, 3, 1, 0.1), 5).unwrap();
        let config = ForestConfig { n_trees: 12, ..Default::default() };
        let a = train_forest(&data, &config, 42).unwrap();
        let b = train_forest(&data, &config, 42).unwrap();
        assert_eq!(a, b);
        // Tree i only depends on (seed, i).
        let fewer = train_forest(&data, &ForestConfig { n_trees: 5, ..config }, 42).unwrap();
        assert_eq!(&a.trees[..5], &fewer.trees[..]);
        for t in &a.trees {
            assert!(t.depth() <= 4);
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let data = generate_synthetic(&SyntheticSpec::linear(200, 2, 0, 0.2), 1).unwrap();
        let config = ForestConfig { n_trees: 5, max_depth: 6, min_samples_leaf: 15, ..Default::default() };
        let f = train_forest(&data, &config, 9).unwrap();
        for t in &f.trees {
            for n in &t.nodes {
                if let Node::Leaf { samples, .. } = n {
                    assert!(*samples >= 15);
                }
            }
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = Dataset::new(DatasetSchema::synthetic(1, 0), vec![], vec![]).unwrap();
        assert!(matches!(
            train_forest(&data, &ForestConfig::default(), 0),
            Err(EnsembleError::EmptyDataset)
        ));
    }
}
