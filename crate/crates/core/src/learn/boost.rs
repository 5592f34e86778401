use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Columns, Node, Tree, TreeParams};
use super::BoostParams;

/// Additive model `F(x) = init + rate * sum_m tree_m(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    init: f64,
    rate: f64,
    trees: Vec<Tree>,
    /// Set when classification saw a single class; `init` is then 0 or 1 and
    /// is returned as the probability directly.
    constant_probability: Option<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Boosted {
    pub fn raw(&self, row: &[f64]) -> f64 {
        self.init + self.rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        match self.constant_probability {
            Some(p) => p,
            None => sigmoid(self.raw(row)),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.constant_probability.is_some()
    }

    pub fn n_stages(&self) -> usize {
        self.trees.len()
    }
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Squared loss: each stage fits the residuals.
pub fn fit_squared(
    columns: &Columns,
    rows: &[&[f64]],
    targets: &[f64],
    params: &BoostParams,
    tree_params: &TreeParams,
    rng: &mut impl Rng,
) -> Boosted {
    let n = targets.len();
    let init = targets.iter().sum::<f64>() / n as f64;
    let mut f = vec![init; n];
    let mut trees = Vec::with_capacity(params.n_stages);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_stages {
        for i in 0..n {
            residual[i] = targets[i] - f[i];
        }
        let tree = Tree::fit(columns, &residual, all_rows(n), tree_params, rng);
        for (fi, row) in f.iter_mut().zip(rows) {
            *fi += params.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    Boosted {
        init,
        rate: params.learning_rate,
        trees,
        constant_probability: None,
    }
}

/// Logistic loss on 0/1 targets. Trees fit the gradient `y - p`; leaf values
/// are then replaced by the Newton step `sum(y - p) / sum(p (1 - p))`.
pub fn fit_logistic(
    columns: &Columns,
    rows: &[&[f64]],
    targets: &[f64],
    params: &BoostParams,
    tree_params: &TreeParams,
    rng: &mut impl Rng,
) -> Boosted {
    let n = targets.len();
    let positives = targets.iter().sum::<f64>();
    if positives == 0.0 || positives == n as f64 {
        return Boosted {
            init: 0.0,
            rate: params.learning_rate,
            trees: Vec::new(),
            constant_probability: Some(positives / n as f64),
        };
    }
    let prior = positives / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let mut f = vec![init; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_stages);
    for _ in 0..params.n_stages {
        let p: Vec<f64> = f.iter().map(|&z| sigmoid(z)).collect();
        for i in 0..n {
            residual[i] = targets[i] - p[i];
        }
        let mut tree = Tree::fit(columns, &residual, all_rows(n), tree_params, rng);
        let leaves = tree.nodes().len();
        let mut num = vec![0.0; leaves];
        let mut den = vec![0.0; leaves];
        for (i, row) in rows.iter().enumerate() {
            let leaf = tree.leaf_of(row);
            num[leaf] += residual[i];
            den[leaf] += p[i] * (1.0 - p[i]);
        }
        for leaf in 0..leaves {
            if matches!(tree.nodes()[leaf], Node::Leaf { .. }) {
                let v = if den[leaf] > 1e-12 { num[leaf] / den[leaf] } else { 0.0 };
                tree.set_leaf_value(leaf, v);
            }
        }
        for (fi, row) in f.iter_mut().zip(rows) {
            *fi += params.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    Boosted {
        init,
        rate: params.learning_rate,
        trees,
        constant_probability: None,
    }
}

/// Training loss after each stage; used to check monotone descent.
#[cfg(test)]
fn squared_loss_path(b: &Boosted, rows: &[&[f64]], targets: &[f64]) -> Vec<f64> {
    let mut f = vec![b.init; targets.len()];
    let mut out = Vec::with_capacity(b.trees.len() + 1);
    let loss = |f: &[f64]| f.iter().zip(targets).map(|(a, y)| (a - y).powi(2)).sum::<f64>() / targets.len() as f64;
    out.push(loss(&f));
    for t in &b.trees {
        for (fi, row) in f.iter_mut().zip(rows) {
            *fi += b.rate * t.predict(row);
        }
        out.push(loss(&f));
    }
    out
}
