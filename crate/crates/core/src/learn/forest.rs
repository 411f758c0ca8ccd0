//! Random forest of class-weighted CART trees.
//!
//! Each tree is grown on a bootstrap resample; every node draws a fresh
//! random subset of features to split on and picks the split with the lowest
//! weighted Gini impurity. Trees vote with the weighted majority class of the
//! reached leaf; forest ties go to the negative class.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Share of features considered at each node.
    pub feature_fraction: f64,
    pub bootstrap: bool,
    pub balanced: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 40,
            max_depth: 5,
            min_leaf: 3,
            feature_fraction: 0.8,
            bootstrap: true,
            balanced: true,
        }
    }
}

impl ForestParams {
    pub fn features_per_node(&self, n_features: usize) -> usize {
        ((self.feature_fraction * n_features as f64 - 1e-9).ceil() as usize).clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        depth: usize,
        samples: usize,
        negative_weight: f64,
        positive_weight: f64,
    },
    Split {
        depth: usize,
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in creation order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> bool {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { negative_weight, positive_weight, .. } => return positive_weight > negative_weight,
                Node::Split { feature, threshold, left, right, .. } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { depth, .. } | Node::Split { depth, .. } => *depth,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { samples, .. } => Some(*samples),
                Node::Split { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, row: &[f64]) -> bool {
        let positive = self.trees.iter().filter(|t| t.predict(row)).count();
        positive * 2 > self.trees.len()
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent random stream derived from a base seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

struct Grower<'a> {
    x: &'a Matrix,
    positive: Vec<bool>,
    class_weight: [f64; 2],
    params: &'a ForestParams,
    per_node: usize,
    nodes: Vec<Node>,
}

fn gini(neg: f64, pos: f64) -> f64 {
    let total = neg + pos;
    if total <= 0.0 {
        return 0.0;
    }
    let (a, b) = (neg / total, pos / total);
    1.0 - a * a - b * b
}

impl Grower<'_> {
    fn weights(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(n, p), &r| {
            if self.positive[r] {
                (n, p + self.class_weight[1])
            } else {
                (n + self.class_weight[0], p)
            }
        })
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let idx = self.nodes.len();
        let (neg, pos) = self.weights(&rows);
        let leaf = Node::Leaf {
            depth,
            samples: rows.len(),
            negative_weight: neg,
            positive_weight: pos,
        };
        self.nodes.push(leaf);
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf || neg == 0.0 || pos == 0.0 {
            return idx;
        }
        let Some((feature, threshold)) = self.best_split(&rows, neg, pos, rng) else {
            return idx;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x.get(r, feature) <= threshold);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[idx] = Node::Split {
            depth,
            feature,
            threshold,
            left,
            right,
        };
        idx
    }

    fn best_split(&self, rows: &[usize], neg: f64, pos: f64, rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let total = neg + pos;
        let parent = total * gini(neg, pos);
        let min_leaf = self.params.min_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut candidates = sample(rng, self.x.cols(), self.per_node).into_vec();
        candidates.sort_unstable();
        let mut order: Vec<usize> = rows.to_vec();
        for feature in candidates {
            order.sort_by(|&a, &b| self.x.get(a, feature).total_cmp(&self.x.get(b, feature)));
            let (mut left_neg, mut left_pos) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                if self.positive[order[k]] {
                    left_pos += self.class_weight[1];
                } else {
                    left_neg += self.class_weight[0];
                }
                let left_count = k + 1;
                if left_count < min_leaf || order.len() - left_count < min_leaf {
                    continue;
                }
                let a = self.x.get(order[k], feature);
                let b = self.x.get(order[k + 1], feature);
                if a == b {
                    continue;
                }
                let (right_neg, right_pos) = (neg - left_neg, pos - left_pos);
                let impurity = (left_neg + left_pos) * gini(left_neg, left_pos)
                    + (right_neg + right_pos) * gini(right_neg, right_pos);
                if impurity < parent - 1e-12 && best.is_none_or(|(bi, _, _)| impurity < bi) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some((impurity, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// `y` holds 0/1 targets with both classes present.
pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> ForestModel {
    let n = x.rows();
    let positive: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    let class_weight = if params.balanced {
        [n as f64 / (2.0 * n_neg), n as f64 / (2.0 * n_pos)]
    } else {
        [1.0, 1.0]
    };
    let trees = (0..params.trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, t as u64));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut grower = Grower {
                x,
                positive: positive.clone(),
                class_weight,
                params,
                per_node: params.features_per_node(x.cols()),
                nodes: Vec::new(),
            };
            grower.grow(rows, 0, &mut rng);
            Tree { nodes: grower.nodes }
        })
        .collect();
    ForestModel { trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Matrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i % 10) as f64, ((i * 7) % 13) as f64, ((i * 3) % 5) as f64])
            .collect();
        let y = (0..60).map(|i| if (i % 10) + (i * 3) % 5 > 6 { 1.0 } else { 0.0 }).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn structural_limits_hold() {
        let (x, y) = data();
        let params = ForestParams::default();
        let forest = fit_forest(&x, &y, &params, 3);
        assert_eq!(forest.trees.len(), 40);
        for tree in &forest.trees {
            assert!(tree.depth() <= 5);
            assert!(tree.leaf_sizes().iter().all(|&s| s >= 3));
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = data();
        let a = fit_forest(&x, &y, &ForestParams::default(), 11);
        let b = fit_forest(&x, &y, &ForestParams::default(), 11);
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &ForestParams::default(), 12);
        assert_ne!(a, c);
    }

    #[test]
    fn learns_a_threshold_rule() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i >= 20 { 1.0 } else { 0.0 }).collect();
        let forest = fit_forest(&Matrix::from_rows(&rows), &y, &ForestParams::default(), 1);
        assert!(!forest.predict(&[2.0]));
        assert!(forest.predict(&[37.0]));
    }

    #[test]
    fn features_per_node_rounds_up() {
        let p = ForestParams::default();
        assert_eq!(p.features_per_node(20), 16);
        assert_eq!(p.features_per_node(5), 4);
        assert_eq!(p.features_per_node(1), 1);
        assert_eq!(p.features_per_node(3), 3);
    }
}
