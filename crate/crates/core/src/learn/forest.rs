use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{Columns, SplitRule, Tree, TreeParams};
use super::ForestParams;
use crate::seed;

/// Grows `params.n_trees` trees in parallel. Tree `t` draws from its own
/// stream derived from `(seed, t)`, so the ensemble is independent of the
/// worker count.
pub fn fit(
    rows: &[&[f64]],
    targets: &[f64],
    params: &ForestParams,
    split: SplitRule,
    bootstrap: bool,
    seed: u64,
) -> Vec<Tree> {
    let columns = Columns::from_rows(rows);
    let n = rows.len();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.max_features,
        split,
    };
    (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "tree", t as u64));
            let sample: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            Tree::fit(&columns, targets, sample, &tree_params, &mut rng)
        })
        .collect()
}
