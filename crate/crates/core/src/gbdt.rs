//! Gradient-boosted regression trees with squared-error loss.

use serde::{Deserialize, Serialize};

use crate::numeric::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoostParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 2,
        }
    }
}

/// Flat node: `feature < 0` marks a leaf holding `value`; otherwise rows with
/// `x[feature] <= threshold` go to `left`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode<F> {
    pub feature: i32,
    pub threshold: F,
    pub left: u32,
    pub right: u32,
    pub value: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<F> {
    pub nodes: Vec<TreeNode<F>>,
}

impl<F: Scalar> RegressionTree<F> {
    pub fn predict(&self, x: &[F]) -> F {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.feature < 0 {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    fn fit(x: &[Vec<F>], residual: &[F], params: &BoostParams) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let rows: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, residual, rows, 0, params);
        tree
    }

    fn grow(&mut self, x: &[Vec<F>], r: &[F], rows: Vec<usize>, depth: usize, p: &BoostParams) -> u32 {
        let id = self.nodes.len() as u32;
        let mean = rows.iter().fold(F::zero(), |s, &i| s + r[i]) / F::from_count(rows.len() as u64);
        self.nodes.push(TreeNode {
            feature: -1,
            threshold: F::zero(),
            left: 0,
            right: 0,
            value: mean,
        });
        if depth >= p.max_depth || rows.len() < 2 * p.min_samples_leaf {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, r, &rows, p.min_samples_leaf) else {
            return id;
        };
        let (l, rr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = self.grow(x, r, l, depth + 1, p);
        let right = self.grow(x, r, rr, depth + 1, p);
        let node = &mut self.nodes[id as usize];
        node.feature = feature as i32;
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        id
    }
}

/// Exact greedy split maximizing the reduction in squared error.
fn best_split<F: Scalar>(x: &[Vec<F>], r: &[F], rows: &[usize], min_leaf: usize) -> Option<(usize, F)> {
    let n = rows.len();
    let total: F = rows.iter().fold(F::zero(), |s, &i| s + r[i]);
    let n_f = F::from_count(n as u64);
    let base = total * total / n_f;
    let mut best: Option<(F, usize, F)> = None;
    let n_features = x[rows[0]].len();
    for f in 0..n_features {
        let mut order = rows.to_vec();
        order.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap_or(std::cmp::Ordering::Equal));
        let mut left_sum = F::zero();
        for k in 0..n - 1 {
            left_sum += r[order[k]];
            let (lo, hi) = (x[order[k]][f], x[order[k + 1]][f]);
            if lo == hi || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let nl = F::from_count(k as u64 + 1);
            let nr = n_f - nl;
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
            if best.as_ref().map_or(true, |b| gain > b.0) {
                best = Some((gain, f, (lo + hi) / F::lit(2.0)));
            }
        }
    }
    best.filter(|b| b.0 > F::zero()).map(|b| (b.1, b.2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble<F> {
    pub base: F,
    pub learning_rate: F,
    pub trees: Vec<RegressionTree<F>>,
}

impl<F: Scalar> TreeEnsemble<F> {
    pub fn fit(x: &[Vec<F>], y: &[F], params: BoostParams) -> Self {
        assert_eq!(x.len(), y.len(), "one target per row");
        assert!(!x.is_empty(), "at least one training row");
        let base = y.iter().fold(F::zero(), |s, v| s + *v) / F::from_count(y.len() as u64);
        let lr = F::lit(params.learning_rate);
        let mut pred = vec![base; y.len()];
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let residual: Vec<F> = y.iter().zip(&pred).map(|(a, b)| *a - *b).collect();
            let tree = RegressionTree::fit(x, &residual, &params);
            for (p, row) in pred.iter_mut().zip(x) {
                *p += lr * tree.predict(row);
            }
            trees.push(tree);
        }
        TreeEnsemble {
            base,
            learning_rate: lr,
            trees,
        }
    }

    pub fn predict(&self, x: &[F]) -> F {
        self.trees
            .iter()
            .fold(self.base, |s, t| s + self.learning_rate * t.predict(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_step_function() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 5.0 }).collect();
        let m = TreeEnsemble::fit(&x, &y, BoostParams::default());
        assert!((m.predict(&[3.0]) - 1.0).abs() < 1e-3);
        assert!((m.predict(&[33.0]) - 5.0).abs() < 1e-3);
        assert!(m.trees.iter().all(|t| t.nodes.len() <= 31));
    }

    #[test]
    fn reduces_error_on_smooth_target() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 0.01 * r[0] * r[0] + r[1]).collect();
        let m = TreeEnsemble::fit(&x, &y, BoostParams::default());
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sse: f64 = x.iter().zip(&y).map(|(r, t)| (m.predict(r) - t).powi(2)).sum();
        let sst: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
        assert!(sse < 0.01 * sst);
    }

    #[test]
    fn depth_is_bounded() {
        fn depth(t: &RegressionTree<f64>, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature < 0 {
                0
            } else {
                1 + depth(t, n.left as usize).max(depth(t, n.right as usize))
            }
        }
        let x: Vec<Vec<f64>> = (0..300).map(|i| vec![(i * 37 % 101) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] * 0.3).sin()).collect();
        let m = TreeEnsemble::fit(&x, &y, BoostParams::default());
        assert!(m.trees.iter().all(|t| depth(t, 0) <= 4));
    }
}
