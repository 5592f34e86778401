//! Regression/classification trees grown greedily on squared error.
//!
//! Classification targets are encoded as 0/1, where the node SSE is
//! `n p (1 - p)`, half the Gini impurity times `n`. Minimizing the summed
//! child SSE therefore selects exactly the Gini-optimal split, and leaf values
//! are the positive-class fraction.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Number of candidate features examined at each node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
    Fraction(f64),
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().round() as usize,
            MaxFeatures::Log2 => (n_features as f64).log2().round() as usize,
            MaxFeatures::Fraction(f) => (f * n_features as f64).round() as usize,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Exhaustive search over midpoints between distinct values.
    Best,
    /// One uniform threshold per candidate feature.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub split: SplitRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// Column-major view of the training rows.
pub struct Columns {
    cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let width = rows.first().map_or(0, |r| r.len());
        let cols = (0..width)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect();
        Columns { cols }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    fn get(&self, feature: usize, row: usize) -> f64 {
        self.cols[feature][row]
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Grows a tree on `rows` (indices into `x`, duplicates allowed).
    pub fn fit(
        x: &Columns,
        targets: &[f64],
        rows: Vec<usize>,
        params: &TreeParams,
        rng: &mut impl Rng,
    ) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        tree.grow(x, targets, rows, 0, params, rng);
        tree
    }

    fn grow(
        &mut self,
        x: &Columns,
        y: &[f64],
        rows: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        rng: &mut impl Rng,
    ) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| y[r]).sum();
        let sum_sq: f64 = rows.iter().map(|&r| y[r] * y[r]).sum();
        let value = if rows.is_empty() { 0.0 } else { sum / n };
        self.nodes.push(Node::Leaf { value });

        let leaf_min = params.min_samples_leaf.max(1);
        let depth_ok = params.max_depth.map_or(true, |d| depth < d);
        if !depth_ok || rows.len() < 2 * leaf_min || sse(sum, sum_sq, n) <= 1e-12 * n.max(1.0) {
            return id;
        }

        let p = x.n_features();
        let m = params.max_features.resolve(p);
        let mut features: Vec<usize> = if m >= p {
            (0..p).collect()
        } else {
            sample(rng, p, m).into_vec()
        };
        features.sort_unstable();

        let best = match params.split {
            SplitRule::Best => best_split(x, y, &rows, &features, leaf_min),
            SplitRule::Random => random_split(x, y, &rows, &features, leaf_min, rng),
        };
        let Some(c) = best else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| x.get(c.feature, r) <= c.threshold);
        let left = self.grow(x, y, left_rows, depth + 1, params, rng);
        let right = self.grow(x, y, right_rows, depth + 1, params, rng);
        self.nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        };
        id
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_of(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_of returns leaves"),
        }
    }

    pub fn set_leaf_value(&mut self, leaf: usize, value: f64) {
        if let Node::Leaf { value: v } = &mut self.nodes[leaf] {
            *v = value;
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Lowest summed child SSE; ties keep the lower feature, then the lower threshold.
fn best_split(
    x: &Columns,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    leaf_min: usize,
) -> Option<Candidate> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| y[r] * y[r]).sum();
    let mut best: Option<Candidate> = None;
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        order.clear();
        order.extend(rows.iter().map(|&r| (x.get(f, r), y[r])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut ls, mut lsq) = (0.0, 0.0);
        for i in 0..n - 1 {
            ls += order[i].1;
            lsq += order[i].1 * order[i].1;
            let nl = i + 1;
            if nl < leaf_min || n - nl < leaf_min || order[i].0 == order[i + 1].0 {
                continue;
            }
            let score = sse(ls, lsq, nl as f64) + sse(total - ls, total_sq - lsq, (n - nl) as f64);
            if best.as_ref().map_or(true, |b| score < b.score) {
                let mut threshold = (order[i].0 + order[i + 1].0) / 2.0;
                // midpoint may round up to the right value for adjacent floats
                if threshold >= order[i + 1].0 {
                    threshold = order[i].0;
                }
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

fn random_split(
    x: &Columns,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    leaf_min: usize,
    rng: &mut impl Rng,
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for &f in features {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            let v = x.get(f, r);
            (lo.min(v), hi.max(v))
        });
        if !(hi > lo) {
            continue;
        }
        let threshold = rng.gen_range(lo..hi);
        let (mut ls, mut lsq, mut nl) = (0.0, 0.0, 0usize);
        let (mut rs, mut rsq, mut nr) = (0.0, 0.0, 0usize);
        for &r in rows {
            let t = y[r];
            if x.get(f, r) <= threshold {
                ls += t;
                lsq += t * t;
                nl += 1;
            } else {
                rs += t;
                rsq += t * t;
                nr += 1;
            }
        }
        if nl < leaf_min || nr < leaf_min {
            continue;
        }
        let score = sse(ls, lsq, nl as f64) + sse(rs, rsq, nr as f64);
        if best.as_ref().map_or(true, |b| score < b.score) {
            best = Some(Candidate {
                feature: f,
                threshold,
                score,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn params(depth: Option<usize>) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            split: SplitRule::Best,
        }
    }

    fn fit(rows: &[Vec<f64>], y: &[f64], p: &TreeParams) -> Tree {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let cols = Columns::from_rows(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Tree::fit(&cols, y, (0..rows.len()).collect(), p, &mut rng)
    }

    #[test]
    fn depth_zero_predicts_mean() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = [2.0, 4.0, 6.0, 8.0];
        let t = fit(&rows, &y, &params(Some(0)));
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[100.0]), 5.0);
    }

    #[test]
    fn step_function_is_recovered() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 7 { 1.0 } else { 3.0 }).collect();
        let t = fit(&rows, &y, &params(None));
        assert_eq!(t.depth(), 1);
        match t.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 6.5);
            }
            _ => panic!("expected split"),
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // features 0 and 1 are identical; 2 is a worse copy
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, i as f64, (i % 3) as f64])
            .collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let t = fit(&rows, &y, &params(Some(1)));
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn min_samples_leaf_respected() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i == 0 { 10.0 } else { 0.0 }).collect();
        let p = TreeParams {
            min_samples_leaf: 3,
            ..params(None)
        };
        let t = fit(&rows, &y, &p);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let mut counts = std::collections::HashMap::new();
        for r in &refs {
            *counts.entry(t.leaf_of(r)).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 3));
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(128), 11);
        assert_eq!(MaxFeatures::All.resolve(64), 64);
        assert_eq!(MaxFeatures::Fraction(0.33).resolve(128), 42);
        assert_eq!(MaxFeatures::Count(500).resolve(10), 10);
        assert_eq!(MaxFeatures::Log2.resolve(1), 1);
    }

    #[test]
    fn random_split_separates_clusters() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![if i < 20 { 0.0 } else { 10.0 } + (i % 7) as f64 * 0.01])
            .collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 1.0 }).collect();
        let p = TreeParams {
            split: SplitRule::Random,
            ..params(None)
        };
        let t = fit(&rows, &y, &p);
        for (r, &target) in rows.iter().zip(&y) {
            assert_eq!(t.predict(r), target);
        }
    }
}
