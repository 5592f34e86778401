use serde::{Deserialize, Serialize};

/// Stored training set. Prediction averages the targets of the `k` nearest
/// rows in Euclidean distance; equal distances are ordered by the row's
/// feature vector and then its target, so the result does not depend on the
/// order the rows were supplied in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

impl Knn {
    pub fn fit(rows: &[&[f64]], targets: &[f64], k: usize) -> Self {
        Knn {
            k,
            rows: rows.iter().map(|r| r.to_vec()).collect(),
            targets: targets.to_vec(),
        }
    }

    pub fn predict(&self, query: &[f64]) -> f64 {
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let d2: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| lexicographic(&self.rows[a.1], &self.rows[b.1]))
                .then_with(|| self.targets[a.1].total_cmp(&self.targets[b.1]))
        };
        let k = self.k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored.iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_nearest() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 10.0).collect();
        let m = Knn::fit(&refs, &y, 3);
        assert_eq!(m.predict(&[4.1]), 40.0);
        assert_eq!(m.predict(&[-5.0]), 10.0);
    }

    #[test]
    fn equidistant_ties_are_order_free() {
        let a = [vec![1.0], vec![-1.0], vec![3.0]];
        let y = [1.0, 0.0, 5.0];
        let refs: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
        let m1 = Knn::fit(&refs, &y, 1);
        let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
        let yr: Vec<f64> = y.iter().rev().copied().collect();
        let m2 = Knn::fit(&rev, &yr, 1);
        assert_eq!(m1.predict(&[0.0]), 0.0);
        assert_eq!(m2.predict(&[0.0]), 0.0);
    }
}
