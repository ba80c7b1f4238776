//! Versioned JSON forest files. Thresholds are stored as decimal strings that
//! round-trip to the exact `f64`.

use serde::{Deserialize, Serialize};

use super::{EnsembleError, Forest, ForestConfig, Node, Tree};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "robustcf-forest";

/// One entry of a flat node array. Internal nodes carry `feature`,
/// `threshold`, `left` and `right`; leaves carry `samples` and, in forest
/// files, `class`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: Option<u8>,
        samples: usize,
    },
}

pub type NodeTable = Vec<TableNode>;

pub fn encode_threshold(t: f64) -> String {
    // `Display` prints the shortest decimal that parses back to the same f64.
    format!("{t}")
}

/// Decodes and structurally validates a node array: every child index is
/// larger than its parent and referenced exactly once, so the table is a
/// tree rooted at 0.
pub(crate) fn parse_node_table(
    records: &[NodeRecord],
    n_features: usize,
    tree: usize,
) -> Result<NodeTable, EnsembleError> {
    let corrupt = |message: String| EnsembleError::CorruptTree { tree, message };
    if records.is_empty() {
        return Err(corrupt("empty node array".into()));
    }
    let mut referenced = vec![false; records.len()];
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let node = match (r.feature, &r.threshold, r.left, r.right) {
            (Some(feature), Some(threshold), Some(left), Some(right)) => {
                if r.class.is_some() || r.samples.is_some() {
                    return Err(corrupt(format!("node {i} mixes internal and leaf fields")));
                }
                if feature >= n_features {
                    return Err(corrupt(format!(
                        "node {i}: feature {feature} out of range for {n_features} features"
                    )));
                }
                let threshold: f64 = threshold
                    .trim()
                    .parse()
                    .ok()
                    .filter(|t: &f64| t.is_finite())
                    .ok_or_else(|| corrupt(format!("node {i}: bad threshold `{threshold}`")))?;
                for child in [left, right] {
                    if child <= i || child >= records.len() {
                        return Err(corrupt(format!("node {i}: dangling child index {child}")));
                    }
                    if std::mem::replace(&mut referenced[child], true) {
                        return Err(corrupt(format!("node {child} has two parents")));
                    }
                }
                if left == right {
                    return Err(corrupt(format!("node {i}: left and right coincide")));
                }
                TableNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }
            (None, None, None, None) => {
                let samples = r
                    .samples
                    .ok_or_else(|| corrupt(format!("node {i}: leaf without samples")))?;
                if let Some(c) = r.class {
                    if c > 1 {
                        return Err(corrupt(format!("node {i}: leaf class {c} is not 0 or 1")));
                    }
                }
                TableNode::Leaf {
                    class: r.class,
                    samples,
                }
            }
            _ => return Err(corrupt(format!("node {i}: incomplete internal node"))),
        };
        out.push(node);
    }
    if let Some(orphan) = referenced.iter().skip(1).position(|r| !r) {
        return Err(corrupt(format!("node {} is unreachable", orphan + 1)));
    }
    Ok(out)
}

pub(crate) fn to_records(tree: &Tree) -> Vec<NodeRecord> {
    tree.nodes
        .iter()
        .map(|n| match *n {
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => NodeRecord {
                feature: Some(feature),
                threshold: Some(encode_threshold(threshold)),
                left: Some(left),
                right: Some(right),
                ..NodeRecord::default()
            },
            Node::Leaf { class, samples } => NodeRecord {
                class: Some(class),
                samples: Some(samples),
                ..NodeRecord::default()
            },
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestFile {
    format: String,
    version: u32,
    seed: u64,
    n_features: usize,
    config: ForestConfig,
    trees: Vec<TreeFile>,
}

pub fn serialize_forest(forest: &Forest) -> String {
    let file = ForestFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        seed: forest.seed,
        n_features: forest.n_features,
        config: forest.config.clone(),
        trees: forest
            .trees
            .iter()
            .map(|t| TreeFile {
                nodes: to_records(t),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("forest serialization is infallible")
}

pub fn deserialize_forest(text: &str) -> Result<Forest, EnsembleError> {
    #[derive(Deserialize)]
    struct Header {
        format: Option<String>,
        version: Option<u32>,
    }
    let header: Header =
        serde_json::from_str(text).map_err(|e| EnsembleError::Format(e.to_string()))?;
    if header.format.as_deref() != Some(FORMAT_NAME) {
        return Err(EnsembleError::Format(format!(
            "not a forest file (format = {:?})",
            header.format
        )));
    }
    match header.version {
        Some(FORMAT_VERSION) => {}
        Some(found) => {
            return Err(EnsembleError::Version {
                found,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(EnsembleError::Format("missing version".into())),
    }
    let file: ForestFile =
        serde_json::from_str(text).map_err(|e| EnsembleError::Format(e.to_string()))?;
    if file.n_features == 0 {
        return Err(EnsembleError::Format("n_features must be at least 1".into()));
    }
    let mut trees = Vec::with_capacity(file.trees.len());
    for (t, tree) in file.trees.iter().enumerate() {
        let table = parse_node_table(&tree.nodes, file.n_features, t)?;
        let nodes = table
            .into_iter()
            .enumerate()
            .map(|(i, n)| match n {
                TableNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => Ok(Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                }),
                TableNode::Leaf {
                    class: Some(class),
                    samples,
                } => Ok(Node::Leaf { class, samples }),
                TableNode::Leaf { class: None, .. } => Err(EnsembleError::CorruptTree {
                    tree: t,
                    message: format!("node {i}: leaf without class"),
                }),
            })
            .collect::<Result<_, _>>()?;
        trees.push(Tree { nodes });
    }
    let forest = Forest {
        trees,
        config: file.config,
        seed: file.seed,
        n_features: file.n_features,
    };
    validate_forest(&forest)?;
    Ok(forest)
}

pub(crate) fn validate_forest(forest: &Forest) -> Result<(), EnsembleError> {
    if forest.trees.is_empty() {
        return Err(EnsembleError::Format("forest has no trees".into()));
    }
    forest.config.validate()?;
    if forest.config.n_trees != forest.trees.len() {
        return Err(EnsembleError::Format(format!(
            "config lists {} trees, file holds {}",
            forest.config.n_trees,
            forest.trees.len()
        )));
    }
    for (t, tree) in forest.trees.iter().enumerate() {
        let records = to_records(tree);
        parse_node_table(&records, forest.n_features, t)?;
        if tree.depth() > forest.config.max_depth {
            return Err(EnsembleError::CorruptTree {
                tree: t,
                message: format!(
                    "depth {} exceeds max_depth {}",
                    tree.depth(),
                    forest.config.max_depth
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn three_stumps() -> Forest {
        Forest::from_trees(
            vec![
                Tree::stump(0, 0.2, 0, 1),
                Tree::stump(0, 0.5, 0, 1),
                Tree::stump(0, 0.8, 0, 1),
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_structure_and_scores() {
        let f = three_stumps();
        let g = deserialize_forest(&serialize_forest(&f)).unwrap();
        assert_eq!(f, g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            assert_eq!(f.predict_score(&x).unwrap(), g.predict_score(&x).unwrap());
        }
    }

    #[test]
    fn awkward_thresholds_round_trip_exactly() {
        for t in [0.1 + 0.2, 1.0 / 3.0, 5e-324, 0.999_999_999_999_999_9] {
            assert_eq!(encode_threshold(t).parse::<f64>().unwrap(), t);
        }
    }

    fn file_with_nodes(nodes: &str) -> String {
        format!(
            r#"{{"format":"robustcf-forest","version":1,"seed":0,"n_features":2,
               "config":{{"n_trees":1,"max_depth":4,"features_per_split":null,"bootstrap":true,"min_samples_leaf":1}},
               "trees":[{{"nodes":{nodes}}}]}}"#
        )
    }

    #[test]
    fn dangling_child_is_structured_error() {
        let text = file_with_nodes(
            r#"[{"feature":0,"threshold":"0.5","left":1,"right":7},{"class":0,"samples":1}]"#,
        );
        let err = deserialize_forest(&text).unwrap_err();
        assert!(matches!(&err, EnsembleError::CorruptTree { tree: 0, message } if message.contains("dangling")), "{err}");
    }

    #[test]
    fn corrupt_tables_rejected() {
        let cases = [
            r#"[]"#,
            r#"[{"feature":0,"threshold":"0.5","left":1,"right":1},{"class":0,"samples":1}]"#,
            r#"[{"feature":5,"threshold":"0.5","left":1,"right":2},{"class":0,"samples":1},{"class":1,"samples":1}]"#,
            r#"[{"feature":0,"threshold":"nan","left":1,"right":2},{"class":0,"samples":1},{"class":1,"samples":1}]"#,
            r#"[{"class":2,"samples":1}]"#,
            r#"[{"class":1,"samples":1},{"class":1,"samples":1}]"#,
            r#"[{"feature":0,"left":1,"right":2},{"class":0,"samples":1},{"class":1,"samples":1}]"#,
        ];
        for nodes in cases {
            assert!(deserialize_forest(&file_with_nodes(nodes)).is_err(), "{nodes}");
        }
    }

    #[test]
    fn empty_tree_list_and_bad_version_rejected() {
        let empty = r#"{"format":"robustcf-forest","version":1,"seed":0,"n_features":2,
            "config":{"n_trees":1,"max_depth":4,"features_per_split":null,"bootstrap":true,"min_samples_leaf":1},
            "trees":[]}"#;
        assert!(deserialize_forest(empty).is_err());
        let v2 = file_with_nodes(r#"[{"class":1,"samples":1}]"#).replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            deserialize_forest(&v2),
            Err(EnsembleError::Version { found: 2, expected: 1 })
        ));
        assert!(deserialize_forest("{}").is_err());
        assert!(deserialize_forest("not json").is_err());
    }
}
