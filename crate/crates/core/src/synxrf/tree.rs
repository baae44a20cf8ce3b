//! CART trees with exhaustive threshold search.
//!
//! Classification trees split on Gini impurity and keep a class histogram
//! in every node. Regression trees fit a gradient with a Newton leaf value
//! `Σg / Σh`. Thresholds are midpoints between consecutive distinct values
//! and a sample goes left when `x ≤ threshold`.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vote::argmax;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeConfig {
    /// `None` grows until nodes are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub split: Option<Split>,
    pub samples: usize,
    /// Class histogram, or a single regression value.
    pub value: Vec<f64>,
}

/// Training target of a tree.
pub enum Target<'a> {
    Classes { labels: &'a [usize], classes: usize },
    Newton { grad: &'a [f64], hess: &'a [f64] },
}

impl Target<'_> {
    fn leaf_value(&self, idx: &[usize]) -> Vec<f64> {
        match self {
            Target::Classes { labels, classes } => {
                let mut h = vec![0.0; *classes];
                idx.iter().for_each(|&i| h[labels[i]] += 1.0);
                h
            }
            Target::Newton { grad, hess } => {
                let g: f64 = idx.iter().map(|&i| grad[i]).sum();
                let h: f64 = idx.iter().map(|&i| hess[i]).sum();
                vec![g / h.max(1e-12)]
            }
        }
    }

    /// Whether a node holding `value` can still gain from a split.
    fn splittable(&self, value: &[f64], idx: &[usize]) -> bool {
        match self {
            Target::Classes { .. } => value.iter().filter(|&&c| c > 0.0).count() > 1,
            Target::Newton { grad, .. } => idx.iter().any(|&i| grad[i] != grad[idx[0]]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    features: usize,
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Midpoint of `a < b`, or `a` when the midpoint rounds up to `b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

struct Builder<'a> {
    x: &'a Tensor,
    target: &'a Target<'a>,
    config: &'a TreeConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best split of `idx` on `feature`, scored by the child proxy
    /// `Σ_children Σ_k s_k² / n` (larger is better). For class counts this
    /// is Gini minimization, for gradients it is squared-error reduction.
    fn best_on(&self, idx: &[usize], feature: usize, best: &mut Option<Candidate>) {
        let d = self.x.shape()[1];
        let data = self.x.data();
        let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (data[i * d + feature], i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = order.len();
        let min_leaf = self.config.min_samples_leaf.max(1);
        match self.target {
            Target::Classes { labels, classes } => {
                let mut left = vec![0.0; *classes];
                let mut right = vec![0.0; *classes];
                order.iter().for_each(|&(_, i)| right[labels[i]] += 1.0);
                let mut sq_left = 0.0;
                let mut sq_right: f64 = right.iter().map(|c| c * c).sum();
                for p in 1..n {
                    let c = labels[order[p - 1].1];
                    sq_left += 2.0 * left[c] + 1.0;
                    sq_right -= 2.0 * right[c] - 1.0;
                    left[c] += 1.0;
                    right[c] -= 1.0;
                    if p < min_leaf || n - p < min_leaf || order[p - 1].0 >= order[p].0 {
                        continue;
                    }
                    let score = sq_left / p as f64 + sq_right / (n - p) as f64;
                    consider(best, score, feature, midpoint(order[p - 1].0, order[p].0));
                }
            }
            Target::Newton { grad, .. } => {
                let total: f64 = order.iter().map(|&(_, i)| grad[i]).sum();
                let mut left = 0.0;
                for p in 1..n {
                    left += grad[order[p - 1].1];
                    if p < min_leaf || n - p < min_leaf || order[p - 1].0 >= order[p].0 {
                        continue;
                    }
                    let right = total - left;
                    let score = left * left / p as f64 + right * right / (n - p) as f64;
                    consider(best, score, feature, midpoint(order[p - 1].0, order[p].0));
                }
            }
        }
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let value = self.target.leaf_value(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node {
            split: None,
            samples: idx.len(),
            value,
        });
        let max_depth = self.config.max_depth.unwrap_or(usize::MAX);
        if depth >= max_depth
            || idx.len() < 2 * self.config.min_samples_leaf.max(1)
            || !self.target.splittable(&self.nodes[id].value, &idx)
        {
            return id;
        }
        let d = self.x.shape()[1];
        let features: Vec<usize> = match self.config.max_features {
            Some(m) if m < d => {
                let mut f = index::sample(rng, d, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let mut best = None;
        for f in features {
            self.best_on(&idx, f, &mut best);
        }
        let Some(best) = best else { return id };
        if let Target::Newton { .. } = self.target {
            let parent: f64 = {
                let g = self.target_grad_sum(&idx);
                g * g / idx.len() as f64
            };
            if best.score <= parent {
                return id;
            }
        }
        let data = self.x.data();
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data[i * d + best.feature] <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        });
        id
    }

    fn target_grad_sum(&self, idx: &[usize]) -> f64 {
        match self.target {
            Target::Newton { grad, .. } => idx.iter().map(|&i| grad[i]).sum(),
            Target::Classes { .. } => 0.0,
        }
    }
}

fn consider(best: &mut Option<Candidate>, score: f64, feature: usize, threshold: f64) {
    if best.as_ref().is_none_or(|b| score > b.score) {
        *best = Some(Candidate {
            score,
            feature,
            threshold,
        });
    }
}

impl DecisionTree {
    /// Fits on the rows `idx` of `x` (rows may repeat, as in a bootstrap).
    pub fn fit(x: &Tensor, idx: Vec<usize>, target: &Target, config: &TreeConfig, rng: &mut Rng) -> Result<Self> {
        if x.shape().len() != 2 || idx.is_empty() {
            return Err(Error::EmptyDataset(" for tree fitting".into()));
        }
        let mut b = Builder {
            x,
            target,
            config,
            nodes: Vec::new(),
        };
        b.grow(idx, 0, rng);
        Ok(Self {
            nodes: b.nodes,
            features: x.shape()[1],
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].split {
                Some(s) => 1 + walk(nodes, s.left).max(walk(nodes, s.right)),
                None => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf value for one feature row.
    pub fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            i = if row[s.feature] <= s.threshold { s.left } else { s.right };
        }
        &self.nodes[i].value
    }

    /// Majority class of the leaf, lowest index on ties.
    pub fn predict_class(&self, row: &[f64]) -> usize {
        argmax(self.leaf(row))
    }

    /// Regression output of the leaf.
    pub fn predict_value(&self, row: &[f64]) -> f64 {
        self.leaf(row)[0]
    }

    /// Node table with one row per node:
    /// `feature (-1 for leaves), threshold, left, right, samples, value...`.
    pub fn to_table(&self) -> Tensor {
        let width = 5 + self.nodes[0].value.len();
        let mut data = Vec::with_capacity(self.nodes.len() * width);
        for n in &self.nodes {
            match n.split {
                Some(s) => data.extend([s.feature as f64, s.threshold, s.left as f64, s.right as f64]),
                None => data.extend([-1.0, 0.0, 0.0, 0.0]),
            }
            data.push(n.samples as f64);
            data.extend_from_slice(&n.value);
        }
        Tensor::new(vec![self.nodes.len(), width], data).expect("nonempty tree")
    }

    /// Inverse of [`to_table`](Self::to_table). Children must come after
    /// their parent, which rules out cycles.
    pub fn from_table(table: &Tensor, features: usize) -> Result<Self> {
        let bad = |detail: String| Error::InvalidArgument(format!("tree table: {detail}"));
        if table.shape().len() != 2 || table.shape()[1] < 6 {
            return Err(bad(format!("shape {:?}", table.shape())));
        }
        let n = table.shape()[0];
        let as_index = |v: f64, limit: usize| -> Result<usize> {
            if v.fract() == 0.0 && v >= 0.0 && v < limit as f64 {
                Ok(v as usize)
            } else {
                Err(bad(format!("index {v} outside 0..{limit}")))
            }
        };
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let r = table.row(i);
            let split = if r[0] < 0.0 {
                None
            } else {
                let (left, right) = (as_index(r[2], n)?, as_index(r[3], n)?);
                if left <= i || right <= i {
                    return Err(bad(format!("node {i} points backwards")));
                }
                Some(Split {
                    feature: as_index(r[0], features)?,
                    threshold: r[1],
                    left,
                    right,
                })
            };
            nodes.push(Node {
                split,
                samples: as_index(r[4], usize::MAX)?,
                value: r[5..].to_vec(),
            });
        }
        Ok(Self { nodes, features })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn grid() -> (Tensor, Vec<usize>) {
        // XOR on two features: no single split lowers Gini at the root.
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        (x, vec![0, 1, 1, 0])
    }

    #[test]
    fn memorizes_xor() {
        let (x, y) = grid();
        let t = Target::Classes { labels: &y, classes: 2 };
        let tree = DecisionTree::fit(&x, (0..4).collect(), &t, &TreeConfig::default(), &mut seeded(0)).unwrap();
        for (i, &label) in y.iter().enumerate() {
            assert_eq!(tree.predict_class(x.row(i)), label);
        }
        assert_eq!(tree.depth(), 2);
        for n in tree.nodes() {
            assert_eq!(n.value.iter().sum::<f64>(), n.samples as f64);
        }
    }

    #[test]
    fn thresholds_are_midpoints() {
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let t = Target::Classes {
            labels: &[0, 1],
            classes: 2,
        };
        let tree = DecisionTree::fit(&x, vec![0, 1], &t, &TreeConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(tree.nodes()[0].split.unwrap().threshold, 2.0);
        assert_eq!(tree.predict_class(&[2.0]), 0);
        assert_eq!(midpoint(1.0, f64::from_bits(1.0f64.to_bits() + 1)), 1.0);
    }

    #[test]
    fn newton_leaves_and_depth_limit() {
        let x = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let grad = [1.0, 1.0, -1.0, -2.0];
        let hess = [0.5; 4];
        let t = Target::Newton {
            grad: &grad,
            hess: &hess,
        };
        let config = TreeConfig {
            max_depth: Some(1),
            ..TreeConfig::default()
        };
        let tree = DecisionTree::fit(&x, (0..4).collect(), &t, &config, &mut seeded(0)).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.predict_value(&[0.5]), 2.0 / 1.0);
        assert_eq!(tree.predict_value(&[2.5]), -3.0 / 1.0);
    }

    #[test]
    fn table_round_trip() {
        let (x, y) = grid();
        let t = Target::Classes { labels: &y, classes: 2 };
        let tree = DecisionTree::fit(&x, (0..4).collect(), &t, &TreeConfig::default(), &mut seeded(0)).unwrap();
        assert_eq!(DecisionTree::from_table(&tree.to_table(), 2).unwrap(), tree);
        assert!(DecisionTree::from_table(&tree.to_table(), 1).is_err());
        let mut cyclic = tree.to_table();
        cyclic.data_mut()[2] = 0.0;
        assert!(DecisionTree::from_table(&cyclic, 2).is_err());
    }
}
