//! Exact minimum-distance counterfactual search over a trained forest.
//!
//! The search space is the finite candidate grid: along every feature, the
//! forest (and plausibility model) can only change value at split thresholds,
//! so the optimum over the grid is the optimum over the cell decomposition.
//! [`solve_counterfactual`] is a best-first branch-and-bound that splits grid
//! regions at the tree thresholds that cut them;
//! [`brute_force_counterfactual`] enumerates the grid and serves as its oracle.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Actionability, DatasetSchema, DistanceWeights, FeatureKind};
use crate::ensemble::{Forest, Node};
use crate::plausibility::{leaf_value, IsoNode, IsolationForest, LofPenalty};
use crate::threshold::min_votes;

/// Step past a threshold on continuous features, in normalized units.
pub const EPSILON: f64 = 1e-6;
/// Grid size above which the brute-force oracle refuses to run.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;
/// Improvement below which the search treats objectives as equal.
const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("query has {got} features, forest expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("query value {value} of feature {feature} outside [0, 1]")]
    Domain { feature: usize, value: f64 },
    #[error("target class must be 0 or 1, got {0}")]
    Target(u8),
    #[error("threshold {0} outside [0.5, 1]")]
    Threshold(f64),
    #[error("min_votes {k} outside [{lo}, {n}]")]
    MinVotes { k: usize, lo: usize, n: usize },
    #[error("candidate grid has {0} points, above the brute-force limit")]
    GridTooLarge(u128),
    #[error("plausibility model expects {expected} features, problem has {got}")]
    PlausibilityDimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy)]
pub enum Plausibility<'a> {
    Isolation(&'a IsolationForest),
    Lof(&'a LofPenalty),
}

#[derive(Debug, Clone)]
pub struct CounterfactualProblem<'a> {
    pub forest: &'a Forest,
    pub schema: &'a DatasetSchema,
    pub x0: Vec<f64>,
    /// Class the explanation must reach; votes are counted for this class.
    pub target: u8,
    pub tau: f64,
    pub min_votes: usize,
    pub weights: DistanceWeights,
    pub plausibility: Option<Plausibility<'a>>,
    /// Cost per unit of relaxation `nu`.
    pub z_pen: f64,
    pub timeout: Option<Duration>,
}

impl<'a> CounterfactualProblem<'a> {
    /// Problem with default weights, `z_pen = 5000 d` and no plausibility model.
    pub fn new(
        forest: &'a Forest,
        schema: &'a DatasetSchema,
        x0: Vec<f64>,
        target: u8,
        tau: f64,
    ) -> Result<Self, SolverError> {
        let d = schema.d();
        if x0.len() != d || forest.n_features != d {
            return Err(SolverError::Dimension {
                expected: forest.n_features,
                got: x0.len(),
            });
        }
        if let Some(j) = x0.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(SolverError::Domain {
                feature: j,
                value: x0[j],
            });
        }
        if target > 1 {
            return Err(SolverError::Target(target));
        }
        if !(0.5..=1.0).contains(&tau) {
            return Err(SolverError::Threshold(tau));
        }
        let k = min_votes(forest.n_trees() as u64, tau) as usize;
        Ok(CounterfactualProblem {
            forest,
            schema,
            x0,
            target,
            tau,
            min_votes: k,
            weights: DistanceWeights::from_schema(schema),
            plausibility: None,
            z_pen: 5000.0 * d as f64,
            timeout: None,
        })
    }

    pub fn with_min_votes(mut self, k: usize) -> Result<Self, SolverError> {
        let n = self.forest.n_trees();
        let lo = n.div_ceil(2);
        if k < lo || k > n {
            return Err(SolverError::MinVotes { k, lo, n });
        }
        self.min_votes = k;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: DistanceWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_plausibility(mut self, p: Plausibility<'a>) -> Result<Self, SolverError> {
        let expected = match p {
            Plausibility::Isolation(f) => f.n_features,
            Plausibility::Lof(l) => l.weights.0.len(),
        };
        if expected != self.x0.len() {
            return Err(SolverError::PlausibilityDimension {
                expected,
                got: self.x0.len(),
            });
        }
        self.plausibility = Some(p);
        Ok(self)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    /// Votes for the target class at `x`.
    pub fn target_votes(&self, x: &[f64]) -> usize {
        let ones = self.forest.trees.iter().filter(|t| t.predict(x) == 1).count();
        if self.target == 1 {
            ones
        } else {
            self.forest.n_trees() - ones
        }
    }

    /// Objective terms at `x`, computed directly from the models.
    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        let n = self.forest.n_trees();
        let votes = self.target_votes(x);
        let nu_votes = self.min_votes.saturating_sub(votes) as f64 / n as f64;
        let (anomaly, nu_iso, penalty) = match self.plausibility {
            None => (None, 0.0, 0.0),
            Some(Plausibility::Isolation(f)) => {
                let a = f.score_unchecked(x);
                (Some(a), f.violation(a), 0.0)
            }
            Some(Plausibility::Lof(l)) => (None, 0.0, l.value(x)),
        };
        let distance = self.weights.distance(x, &self.x0);
        let nu = nu_votes.max(nu_iso);
        Evaluation {
            distance,
            votes,
            nu,
            anomaly,
            penalty,
            objective: distance + self.z_pen * nu + penalty,
        }
    }

    fn explanation(&self, x: Vec<f64>, optimal: bool, nodes: u64) -> Explanation {
        let e = self.evaluate(&x);
        let changed = x
            .iter()
            .zip(&self.x0)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(j, (a, b))| (j, *b, *a))
            .collect();
        Explanation {
            score: e.votes as f64 / self.forest.n_trees() as f64,
            x_hat: x,
            distance: e.distance,
            votes: e.votes,
            nu: e.nu,
            anomaly: e.anomaly,
            penalty: e.penalty,
            objective: e.objective,
            optimal,
            changed,
            nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub distance: f64,
    pub votes: usize,
    pub nu: f64,
    pub anomaly: Option<f64>,
    pub penalty: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub x_hat: Vec<f64>,
    /// Weighted `l1` distance to the query, excluding penalty terms.
    pub distance: f64,
    /// Votes for the target class.
    pub votes: usize,
    pub score: f64,
    /// Relaxation of the vote (and isolation) constraint.
    pub nu: f64,
    pub anomaly: Option<f64>,
    /// LOF penalty term.
    pub penalty: f64,
    pub objective: f64,
    /// Set when the search finished; cleared on timeout.
    pub optimal: bool,
    /// `(feature, old, new)` in normalized units.
    pub changed: Vec<(usize, f64, f64)>,
    /// Search nodes visited.
    pub nodes: u64,
}

/// Sorted candidate values per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    pub values: Vec<Vec<f64>>,
}

impl CandidateGrid {
    pub fn size(&self) -> u128 {
        self.values.iter().map(|v| v.len() as u128).product()
    }
}

fn push_threshold(out: &mut Vec<f64>, kind: &FeatureKind, steps: Option<u64>, b: f64) {
    match kind {
        FeatureKind::Continuous => {
            out.push(b);
            out.push(b + EPSILON);
        }
        FeatureKind::Discrete => {
            let s = steps.unwrap_or(1).max(1);
            let grid = |i: i64| i as f64 / s as f64;
            let mut i = (b * s as f64).floor() as i64;
            while grid(i + 1) <= b {
                i += 1;
            }
            while grid(i) > b {
                i -= 1;
            }
            out.push(grid(i));
            out.push(grid(i + 1));
        }
        FeatureKind::Binary | FeatureKind::Categorical { .. } => {
            out.push(0.0);
            out.push(1.0);
        }
    }
}

pub fn build_candidate_grid(problem: &CounterfactualProblem) -> CandidateGrid {
    let d = problem.x0.len();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); d];
    let features = &problem.schema.features;
    let mut add = |j: usize, b: f64| {
        push_threshold(&mut raw[j], &features[j].kind, features[j].grid_steps(), b);
    };
    for tree in &problem.forest.trees {
        for (j, t) in tree.splits() {
            add(j, t);
        }
    }
    match problem.plausibility {
        Some(Plausibility::Isolation(f)) => {
            for tree in &f.trees {
                for node in &tree.nodes {
                    if let IsoNode::Internal {
                        feature, threshold, ..
                    } = *node
                    {
                        add(feature, threshold);
                    }
                }
            }
        }
        Some(Plausibility::Lof(l)) => {
            for a in &l.anchors {
                for (j, v) in a.iter().enumerate() {
                    raw[j].push(*v);
                }
            }
        }
        None => {}
    }
    let values = raw
        .into_iter()
        .enumerate()
        .map(|(j, mut vals)| {
            let x0 = problem.x0[j];
            vals.push(x0);
            vals.retain(|v| {
                (0.0..=1.0).contains(v)
                    && match features[j].actionability {
                        Actionability::Free => true,
                        Actionability::Fixed => *v == x0,
                        Actionability::IncreaseOnly => *v >= x0,
                        Actionability::DecreaseOnly => *v <= x0,
                    }
            });
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals
        })
        .collect();
    CandidateGrid { values }
}

/// Exhaustive search over the candidate grid. Among equal objectives the
/// lexicographically smallest point wins.
pub fn brute_force_counterfactual(
    problem: &CounterfactualProblem,
) -> Result<Explanation, SolverError> {
    let grid = build_candidate_grid(problem);
    let size = grid.size();
    if size > BRUTE_FORCE_LIMIT {
        return Err(SolverError::GridTooLarge(size));
    }
    let groups: Vec<Vec<usize>> = problem
        .schema
        .groups()
        .into_iter()
        .map(|(_, cols)| cols)
        .collect();
    let d = grid.values.len();
    let mut idx = vec![0usize; d];
    let mut x: Vec<f64> = grid.values.iter().map(|v| v[0]).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut visited = 0u64;
    loop {
        let one_hot = groups
            .iter()
            .all(|cols| cols.iter().map(|&c| x[c]).sum::<f64>() == 1.0);
        if one_hot {
            visited += 1;
            let obj = problem.evaluate(&x).objective;
            if best.as_ref().is_none_or(|(b, _)| obj < *b - TOLERANCE) {
                best = Some((obj, x.clone()));
            }
        }
        // odometer, last feature fastest, so points arrive in lexicographic order
        let mut j = d;
        loop {
            if j == 0 {
                let (_, x) = best.expect("x0 lies on the grid and satisfies the encoding");
                return Ok(problem.explanation(x, true, visited));
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < grid.values[j].len() {
                x[j] = grid.values[j][idx[j]];
                break;
            }
            idx[j] = 0;
            x[j] = grid.values[j][0];
        }
    }
}

/// Per-feature inclusive index range into the candidate grid.
type Region = Vec<(u32, u32)>;

/// A tree node in grid-index space: a split sends indices `< cut` left.
#[derive(Debug, Clone, Copy)]
enum GridNode {
    Split {
        feature: usize,
        cut: u32,
        left: usize,
        right: usize,
    },
    /// `leaf` indexes the tree's [`LeafBox`] list.
    Leaf { leaf: usize },
}

/// A leaf as sparse range constraints on the grid.
#[derive(Debug, Clone)]
struct LeafBox {
    cons: Vec<(usize, u32, u32)>,
    /// Votes for the target class (forest leaves).
    target: bool,
    /// Path length `depth + c(size)` (isolation leaves).
    value: f64,
}

#[derive(Debug, Clone)]
struct GridTree {
    nodes: Vec<GridNode>,
    leaves: Vec<LeafBox>,
}

impl GridTree {
    fn build<N>(
        grid: &[Vec<f64>],
        nodes: &[N],
        split: impl Fn(&N) -> Option<(usize, f64, usize, usize)>,
        leaf: impl Fn(&N) -> (bool, f64),
    ) -> Self {
        let full: Region = grid.iter().map(|v| (0, v.len() as u32 - 1)).collect();
        let mut out = GridTree {
            nodes: Vec::with_capacity(nodes.len()),
            leaves: Vec::new(),
        };
        // Parents precede children, so one forward pass assigns every region.
        let mut regions: Vec<Option<Region>> = vec![None; nodes.len()];
        regions[0] = Some(full.clone());
        for (i, node) in nodes.iter().enumerate() {
            let region = regions[i].take();
            match split(node) {
                Some((j, t, l, r)) => {
                    let cut = grid[j].partition_point(|v| *v <= t) as u32;
                    if let Some(region) = region {
                        let (lo, hi) = region[j];
                        if cut > lo {
                            let mut left = region.clone();
                            left[j].1 = hi.min(cut - 1);
                            regions[l] = Some(left);
                        }
                        if cut <= hi {
                            let mut right = region;
                            right[j].0 = lo.max(cut);
                            regions[r] = Some(right);
                        }
                    }
                    out.nodes.push(GridNode::Split {
                        feature: j,
                        cut,
                        left: l,
                        right: r,
                    });
                }
                None => {
                    let (target, value) = leaf(node);
                    // Unreachable leaves keep an empty box so indices stay aligned.
                    let cons = match region {
                        Some(region) => region
                            .iter()
                            .enumerate()
                            .filter(|(j, r)| **r != full[*j])
                            .map(|(j, r)| (j, r.0, r.1))
                            .collect(),
                        None => vec![(0, 1, 0)],
                    };
                    out.nodes.push(GridNode::Leaf {
                        leaf: out.leaves.len(),
                    });
                    out.leaves.push(LeafBox {
                        cons,
                        target,
                        value,
                    });
                }
            }
        }
        out
    }

    /// Visits the leaves consistent with `region`; returns the root-most
    /// node that cuts the region, if any.
    fn visit(&self, region: &Region, mut on_leaf: impl FnMut(&LeafBox)) -> Option<(usize, u32)> {
        let mut cut_found = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match self.nodes[i] {
                GridNode::Split {
                    feature,
                    cut,
                    left,
                    right,
                } => {
                    let (lo, hi) = region[feature];
                    if hi < cut {
                        stack.push(left);
                    } else if lo >= cut {
                        stack.push(right);
                    } else {
                        cut_found.get_or_insert((feature, cut));
                        stack.push(right);
                        stack.push(left);
                    }
                }
                GridNode::Leaf { leaf } => on_leaf(&self.leaves[leaf]),
            }
        }
        cut_found
    }
}

fn intersect(region: &Region, leaf: &LeafBox) -> Region {
    let mut r = region.clone();
    for &(j, lo, hi) in &leaf.cons {
        r[j] = (lo.max(r[j].0), hi.min(r[j].1));
    }
    r
}

#[derive(Debug, Clone)]
enum Unit {
    Single(usize),
    Group(Vec<usize>),
}

/// Bound and branching data of one region.
struct Assessment {
    lb: f64,
    split: Option<(usize, u32)>,
}

struct Queued {
    lb: f64,
    seq: u64,
    region: Region,
    split: Option<(usize, u32)>,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    /// Reversed so that `BinaryHeap` pops the smallest bound, oldest first.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .lb
            .total_cmp(&self.lb)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'p, 'a> {
    problem: &'p CounterfactualProblem<'a>,
    grid: Vec<Vec<f64>>,
    units: Vec<Unit>,
    unit_of: Vec<usize>,
    trees: Vec<GridTree>,
    iso: Option<(&'a IsolationForest, Vec<GridTree>)>,
    lof: Option<&'a LofPenalty>,
    n: usize,
    best: f64,
    best_x: Vec<f64>,
    nodes: u64,
    deadline: Option<Instant>,
    timed_out: bool,
}

/// Most balanced cut: the one leaving the most grid points on its smaller
/// side; ties go to the lower feature, then the lower cut.
fn choose_cut(region: &Region, cuts: &[(usize, u32)]) -> Option<(usize, u32)> {
    cuts.iter()
        .copied()
        .max_by(|a, b| {
            let balance = |&(j, c): &(usize, u32)| (c - region[j].0).min(region[j].1 + 1 - c);
            balance(a).cmp(&balance(b)).then_with(|| b.cmp(a))
        })
}

impl<'p, 'a> Search<'p, 'a> {
    fn new(problem: &'p CounterfactualProblem<'a>) -> Self {
        let grid = build_candidate_grid(problem).values;
        let d = grid.len();
        let mut units = Vec::new();
        let mut unit_of = vec![usize::MAX; d];
        for (_, cols) in problem.schema.groups() {
            for &c in &cols {
                unit_of[c] = units.len();
            }
            units.push(Unit::Group(cols));
        }
        for j in 0..d {
            if unit_of[j] == usize::MAX {
                unit_of[j] = units.len();
                units.push(Unit::Single(j));
            }
        }
        let target = problem.target;
        let trees = problem
            .forest
            .trees
            .iter()
            .map(|t| {
                GridTree::build(
                    &grid,
                    &t.nodes,
                    |n| match *n {
                        Node::Internal {
                            feature,
                            threshold,
                            left,
                            right,
                        } => Some((feature, threshold, left, right)),
                        Node::Leaf { .. } => None,
                    },
                    |n| match *n {
                        Node::Leaf { class, .. } => (class == target, 0.0),
                        Node::Internal { .. } => unreachable!("internal nodes are splits"),
                    },
                )
            })
            .collect();
        let (iso, lof) = match problem.plausibility {
            None => (None, None),
            Some(Plausibility::Lof(l)) => (None, (l.lambda > 0.0).then_some(l)),
            Some(Plausibility::Isolation(f)) => {
                let trees = f
                    .trees
                    .iter()
                    .map(|t| {
                        GridTree::build(
                            &grid,
                            &t.nodes,
                            |n| match *n {
                                IsoNode::Internal {
                                    feature,
                                    threshold,
                                    left,
                                    right,
                                } => Some((feature, threshold, left, right)),
                                IsoNode::Leaf { .. } => None,
                            },
                            |n| (false, leaf_value(n)),
                        )
                    })
                    .collect();
                (Some((f, trees)), None)
            }
        };
        let x0 = problem.x0.clone();
        let best = problem.evaluate(&x0).objective;
        Search {
            problem,
            grid,
            units,
            unit_of,
            trees,
            iso,
            lof,
            n: problem.forest.n_trees(),
            best,
            best_x: x0,
            nodes: 0,
            deadline: problem.timeout.map(|t| Instant::now() + t),
            timed_out: false,
        }
    }

    fn value(&self, j: usize, i: u32) -> f64 {
        self.grid[j][i as usize]
    }

    /// Minimum weighted distance from `point` to the unit's part of
    /// `region`, with the chosen one-hot column for groups.
    fn unit_cost(&self, unit: &Unit, region: &Region, point: &[f64]) -> (f64, Option<usize>) {
        let w = &self.problem.weights.0;
        match unit {
            Unit::Single(j) => {
                let (lo, hi) = region[*j];
                if lo > hi {
                    return (f64::INFINITY, None);
                }
                let (a, b) = (self.value(*j, lo), self.value(*j, hi));
                let p = point[*j];
                let gap = if p < a {
                    a - p
                } else if p > b {
                    p - b
                } else {
                    0.0
                };
                (w[*j] * gap, None)
            }
            Unit::Group(cols) => {
                if cols.iter().any(|&c| region[c].0 > region[c].1) {
                    return (f64::INFINITY, None);
                }
                let zero_cost: f64 = cols.iter().map(|&c| w[c] * point[c]).sum();
                let mut best: (f64, Option<usize>) = (f64::INFINITY, None);
                for k in self.group_choices(cols, region) {
                    let c = cols[k];
                    let cost = zero_cost - w[c] * point[c] + w[c] * (1.0 - point[c]);
                    // on ties prefer later columns: the resulting point is
                    // lexicographically smaller
                    if cost <= best.0 {
                        best = (cost, Some(k));
                    }
                }
                best
            }
        }
    }

    /// Columns of a one-hot group that may hold the 1 inside `region`.
    fn group_choices<'s>(&'s self, cols: &'s [usize], region: &'s Region) -> impl Iterator<Item = usize> + 's {
        // Ranges are sorted: 0 is available iff it is the low end, 1 iff it
        // is the high end.
        let mut forced = (0..cols.len()).filter(|&k| self.value(cols[k], region[cols[k]].0) != 0.0);
        let only = match (forced.next(), forced.next()) {
            (None, _) => None,
            (Some(k), None) => Some(Some(k)),
            (Some(_), Some(_)) => Some(None),
        };
        (0..cols.len()).filter(move |&k| {
            only.is_none_or(|o| o == Some(k)) && self.value(cols[k], region[cols[k]].1) == 1.0
        })
    }

    /// Minimum of `f(x, x0) + c * f(x, anchor)` over the unit's part of
    /// `region`, relaxing single features to their value interval.
    fn joint_cost(&self, unit: &Unit, region: &Region, c: f64, anchor: &[f64]) -> f64 {
        let w = &self.problem.weights.0;
        let x0 = &self.problem.x0;
        match unit {
            Unit::Single(j) => {
                let (lo, hi) = region[*j];
                let (a, b) = (self.value(*j, lo), self.value(*j, hi));
                // piecewise linear and convex: the minimum is at a breakpoint
                // or an end
                [a, b, x0[*j].clamp(a, b), anchor[*j].clamp(a, b)]
                    .iter()
                    .map(|v| w[*j] * ((v - x0[*j]).abs() + c * (v - anchor[*j]).abs()))
                    .fold(f64::INFINITY, f64::min)
            }
            Unit::Group(cols) => self
                .group_choices(cols, region)
                .map(|k| {
                    cols.iter()
                        .enumerate()
                        .map(|(i, &col)| {
                            let v = if i == k { 1.0 } else { 0.0 };
                            w[col] * ((v - x0[col]).abs() + c * (v - anchor[col]).abs())
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn region_distance(&self, region: &Region, point: &[f64]) -> f64 {
        self.units
            .iter()
            .map(|u| self.unit_cost(u, region, point).0)
            .sum()
    }

    /// Distance from x0 to `region ∩ leaf`, recomputing only the units the
    /// leaf constrains. `base` holds the per-unit costs of `region`.
    fn leaf_distance(&self, region: &Region, base: &[f64], total: f64, leaf: &LeafBox) -> f64 {
        let mut touched: Vec<usize> = Vec::with_capacity(leaf.cons.len());
        for &(j, _, _) in &leaf.cons {
            let u = self.unit_of[j];
            if !touched.contains(&u) {
                touched.push(u);
            }
        }
        let narrowed = intersect(region, leaf);
        let mut d = total;
        for &u in &touched {
            d += self.unit_cost(&self.units[u], &narrowed, &self.problem.x0).0 - base[u];
        }
        d
    }

    fn project(&self, region: &Region) -> Vec<f64> {
        let mut x = self.problem.x0.clone();
        for unit in &self.units {
            match unit {
                Unit::Single(j) => {
                    let (lo, hi) = region[*j];
                    x[*j] = x[*j].clamp(self.value(*j, lo), self.value(*j, hi));
                }
                Unit::Group(cols) => {
                    let (_, k) = self.unit_cost(unit, region, &self.problem.x0);
                    let k = k.expect("projected regions are feasible");
                    for (i, &c) in cols.iter().enumerate() {
                        x[c] = if i == k { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        x
    }

    /// Lower bounds on the penalty alone and on distance plus penalty.
    fn lof_bound(&self, region: &Region, dist: f64) -> (f64, f64) {
        let Some(l) = self.lof else {
            return (0.0, dist);
        };
        let (mut alone, mut joint) = (f64::INFINITY, f64::INFINITY);
        for (a, anchor) in l.anchors.iter().enumerate() {
            alone = alone.min(l.anchor_term(a, self.region_distance(region, anchor)));
            let c = l.lambda * l.lrd[a];
            let separable: f64 = self
                .units
                .iter()
                .map(|u| self.joint_cost(u, region, c, anchor))
                .sum();
            joint = joint.min(separable.max(dist + c * l.delta[a]));
        }
        (alone, joint)
    }

    /// Lower bound on the isolation violation over `region`, whether it is
    /// constant there, and a cut that refines it.
    fn iso_status(&self, region: &Region) -> (f64, bool, Option<(usize, u32)>) {
        let Some((f, trees)) = &self.iso else {
            return (0.0, true, None);
        };
        let (mut lo, mut hi) = (0.0, 0.0);
        let mut cuts = Vec::new();
        for tree in trees {
            let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
            let cut = tree.visit(region, |leaf| {
                a = f64::min(a, leaf.value);
                b = f64::max(b, leaf.value);
            });
            lo += a;
            hi += b;
            cuts.extend(cut);
        }
        let (v_lo, v_hi) = (
            f.violation(f.score_from_sum(lo)),
            f.violation(f.score_from_sum(hi)),
        );
        // the violation is monotone in A, so the extremes bound it
        let constant = v_lo == v_hi;
        let cut = if constant { None } else { choose_cut(region, &cuts) };
        (v_lo.min(v_hi), constant, cut)
    }

    fn vote_nu(&self, votes: usize) -> f64 {
        self.problem.min_votes.saturating_sub(votes) as f64 / self.n as f64
    }

    fn assess(&self, region: &Region) -> Option<Assessment> {
        let base: Vec<f64> = self
            .units
            .iter()
            .map(|u| self.unit_cost(u, region, &self.problem.x0).0)
            .collect();
        let dist: f64 = base.iter().sum();
        if !dist.is_finite() {
            return None;
        }
        let mut committed = 0;
        let mut reach = Vec::new();
        let mut cuts = Vec::new();
        for tree in &self.trees {
            let (mut any_target, mut any_other) = (false, false);
            let mut cost = f64::INFINITY;
            let cut = tree.visit(region, |leaf| {
                if leaf.target {
                    any_target = true;
                    cost = cost.min(self.leaf_distance(region, &base, dist, leaf));
                } else {
                    any_other = true;
                }
            });
            match (any_target, any_other) {
                (true, false) => committed += 1,
                (true, true) => {
                    reach.push(cost);
                    cuts.extend(cut);
                }
                _ => {}
            }
        }
        reach.sort_by(f64::total_cmp);
        let (nu_iso, iso_constant, iso_cut) = self.iso_status(region);
        let needed = self.problem.min_votes.saturating_sub(committed);
        let mut lb = f64::INFINITY;
        // r more trees voting cost at least the r-th smallest reach distance
        for r in 0..=needed.min(reach.len()) {
            let d = if r == 0 { dist } else { reach[r - 1].max(dist) };
            let nu = self.vote_nu(committed + r).max(nu_iso);
            lb = lb.min(d + self.problem.z_pen * nu);
        }
        let (lof_alone, lof_joint) = self.lof_bound(region, dist);
        let nu_min = self.vote_nu(committed + reach.len()).max(nu_iso);
        let lb = (lb + lof_alone).max(lof_joint + self.problem.z_pen * nu_min);
        let split = if !cuts.is_empty() {
            choose_cut(region, &cuts)
        } else if !iso_constant {
            iso_cut
        } else if self.lof.is_some() {
            self.widest_cut(region)
        } else {
            None
        };
        Some(Assessment { lb, split })
    }

    /// Halves the feature with the widest weighted extent; ties go to the
    /// lower feature. `None` once the region is a single point.
    fn widest_cut(&self, region: &Region) -> Option<(usize, u32)> {
        let w = &self.problem.weights.0;
        let mut best: Option<(f64, usize)> = None;
        for (j, &(lo, hi)) in region.iter().enumerate() {
            if lo < hi {
                let extent = w[j] * (self.value(j, hi) - self.value(j, lo));
                if best.is_none_or(|(e, _)| extent > e) {
                    best = Some((extent, j));
                }
            }
        }
        best.map(|(_, j)| (j, (region[j].0 + region[j].1).div_ceil(2)))
    }

    fn tick(&mut self) -> bool {
        self.nodes += 1;
        if self.nodes.is_multiple_of(256) {
            if let Some(deadline) = self.deadline {
                if Instant::now() >= deadline {
                    self.timed_out = true;
                }
            }
        }
        self.timed_out
    }

    fn offer(&mut self, x: Vec<f64>) {
        let obj = self.problem.evaluate(&x).objective;
        if obj < self.best - TOLERANCE {
            self.best = obj;
            self.best_x = x;
        }
    }

    /// Best-first over regions. A region without a split has a constant
    /// objective apart from the distance, so its nearest point to x0 is
    /// optimal in it; with LOF, regions are halved down to single points.
    fn run(&mut self) {
        let root: Region = self
            .grid
            .iter()
            .map(|vals| (0, vals.len() as u32 - 1))
            .collect();
        let Some(a) = self.assess(&root) else {
            return;
        };
        let mut seq = 0u64;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(Queued {
            lb: a.lb,
            seq,
            region: root,
            split: a.split,
        });
        while let Some(q) = heap.pop() {
            if q.lb > self.best - TOLERANCE || self.tick() {
                break;
            }
            let x = self.project(&q.region);
            self.offer(x);
            let Some((j, cut)) = q.split else {
                continue;
            };
            let mut left = q.region.clone();
            left[j].1 = cut - 1;
            let mut right = q.region;
            right[j].0 = cut;
            for child in [left, right] {
                if let Some(a) = self.assess(&child) {
                    if a.lb <= self.best - TOLERANCE {
                        seq += 1;
                        heap.push(Queued {
                            lb: a.lb,
                            seq,
                            region: child,
                                            split: a.split,
                        });
                    }
                }
            }
        }
    }
}

/// Minimizes `f(x, x0) + z_pen * nu + penalty` over the candidate grid subject
/// to actionability and the one-hot encoding. On timeout the best point found
/// so far is returned with `optimal = false`.
pub fn solve_counterfactual(problem: &CounterfactualProblem) -> Explanation {
    let mut search = Search::new(problem);
    search.run();
    let optimal = !search.timed_out;
    if !optimal {
        log::warn!("solver timed out after {} nodes; returning incumbent", search.nodes);
    }
    let nodes = search.nodes;
    let x = std::mem::take(&mut search.best_x);
    problem.explanation(x, optimal, nodes)
}
