//! Random small counterfactual instances shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustcf::data::{Actionability, FeatureKind, FeatureSpec};
use robustcf::ensemble::Node;
use robustcf::{DatasetSchema, Forest, Tree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to `max_d` features of mixed kinds; a categorical group counts its
/// columns toward the limit.
pub fn random_schema(rng: &mut ChaCha8Rng, max_d: usize) -> DatasetSchema {
    let d = rng.random_range(1..=max_d);
    let mut features = Vec::new();
    let mut group = 0;
    while features.len() < d {
        let room = d - features.len();
        let actionability = match rng.random_range(0..6) {
            0 => Actionability::Fixed,
            1 => Actionability::IncreaseOnly,
            2 => Actionability::DecreaseOnly,
            _ => Actionability::Free,
        };
        let choice = rng.random_range(0..4);
        if choice == 3 && room >= 2 {
            let cardinality = rng.random_range(2..=room.min(3));
            for c in 0..cardinality {
                features.push(FeatureSpec {
                    name: format!("g{group}_{c}"),
                    kind: FeatureKind::Categorical {
                        group: format!("g{group}"),
                        cardinality,
                    },
                    actionability: if rng.random_bool(0.8) { Actionability::Free } else { actionability },
                    range: (0.0, 1.0),
                });
            }
            group += 1;
            continue;
        }
        let j = features.len();
        let (kind, range) = match choice {
            0 => (FeatureKind::Continuous, (0.0, 1.0)),
            1 => (FeatureKind::Discrete, (0.0, rng.random_range(1..=5) as f64)),
            _ => (FeatureKind::Binary, (0.0, 1.0)),
        };
        features.push(FeatureSpec {
            name: format!("f{j}"),
            kind,
            actionability,
            range,
        });
    }
    DatasetSchema {
        features,
        target: "y".into(),
    }
}

/// A point satisfying the schema's encoding.
pub fn random_point(rng: &mut ChaCha8Rng, schema: &DatasetSchema) -> Vec<f64> {
    let mut x = vec![0.0; schema.d()];
    for (j, f) in schema.features.iter().enumerate() {
        x[j] = match f.kind {
            FeatureKind::Continuous => rng.random::<f64>(),
            FeatureKind::Discrete => {
                let s = f.grid_steps().unwrap();
                rng.random_range(0..=s) as f64 / s as f64
            }
            FeatureKind::Binary => f64::from(u8::from(rng.random_bool(0.5))),
            FeatureKind::Categorical { .. } => 0.0,
        };
    }
    for (_, cols) in schema.groups() {
        x[cols[rng.random_range(0..cols.len())]] = 1.0;
    }
    x
}

fn random_threshold(rng: &mut ChaCha8Rng, f: &FeatureSpec) -> f64 {
    match f.kind {
        FeatureKind::Continuous | FeatureKind::Discrete => rng.random_range(0.02..0.98),
        _ => 0.5,
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, schema: &DatasetSchema, max_depth: usize) -> Tree {
    fn grow(
        rng: &mut ChaCha8Rng,
        schema: &DatasetSchema,
        depth: usize,
        max_depth: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let i = nodes.len();
        nodes.push(Node::Leaf {
            class: u8::from(rng.random_bool(0.5)),
            samples: 1,
        });
        if depth < max_depth && rng.random_bool(0.8) {
            let feature = rng.random_range(0..schema.d());
            let threshold = random_threshold(rng, &schema.features[feature]);
            let left = grow(rng, schema, depth + 1, max_depth, nodes);
            let right = grow(rng, schema, depth + 1, max_depth, nodes);
            nodes[i] = Node::Internal {
                feature,
                threshold,
                left,
                right,
            };
        }
        i
    }
    let mut nodes = Vec::new();
    grow(rng, schema, 0, max_depth, &mut nodes);
    Tree { nodes }
}

pub fn random_forest(
    rng: &mut ChaCha8Rng,
    schema: &DatasetSchema,
    max_trees: usize,
    max_depth: usize,
) -> Forest {
    let n = rng.random_range(1..=max_trees);
    let trees = (0..n)
        .map(|_| {
            let depth = rng.random_range(1..=max_depth);
            random_tree(rng, schema, depth)
        })
        .collect();
    Forest::from_trees(trees, schema.d()).unwrap()
}
