//! Bagged Gini trees with per-split feature subsampling.

use super::tree::{DecisionTree, Target, TreeConfig};
use super::{check_input, check_training};
use crate::error::{Error, Result};
use crate::rng::{fork, mix64, RngExt};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features per split; `None` uses `round(√d)`.
    pub max_features: Option<usize>,
    /// Draw a bootstrap of size N per tree; otherwise every tree sees the
    /// full training set once.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        if self.min_samples_leaf == 0 || self.max_features == Some(0) {
            return Err(Error::Config(
                "min_samples_leaf and max_features must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomForestModel {
    trees: Vec<DecisionTree>,
    /// Stream seed each tree's bootstrap and feature draws came from.
    tree_seeds: Vec<u64>,
    classes: usize,
    features: usize,
    max_features: usize,
}

pub fn rf_fit(x: &Tensor, labels: &[usize], config: &ForestConfig, seed: u64) -> Result<RandomForestModel> {
    config.validate()?;
    let classes = check_training("rf_fit", x, labels)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let max_features = config
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
        .min(d);
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_features: Some(max_features),
    };
    let target = Target::Classes { labels, classes };
    let tree_seeds: Vec<u64> = (0..config.trees as u64).map(|t| mix64(seed ^ mix64(t))).collect();
    let trees = crate::par::map(&tree_seeds, |&s| {
        let mut rng = fork(s, 0);
        let idx = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        DecisionTree::fit(x, idx, &target, &tree_config, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RandomForestModel {
        trees,
        tree_seeds,
        classes,
        features: d,
        max_features,
    })
}

impl RandomForestModel {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn tree_seeds(&self) -> &[u64] {
        &self.tree_seeds
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }

    /// Class chosen by each tree for one row.
    pub fn tree_votes(&self, row: &[f64]) -> Vec<usize> {
        self.trees.iter().map(|t| t.predict_class(row)).collect()
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input("rf_predict_proba", x, self.features)?;
        let mut out = Vec::with_capacity(n * self.classes);
        for i in 0..n {
            let mut row = vec![0.0; self.classes];
            for c in self.tree_votes(x.row(i)) {
                row[c] += 1.0;
            }
            out.extend(row.iter().map(|v| v / self.trees.len() as f64));
        }
        Ok(Tensor::new(vec![n, self.classes], out).expect("n ≥ 1"))
    }

    pub(crate) fn from_parts(
        trees: Vec<DecisionTree>,
        tree_seeds: Vec<u64>,
        classes: usize,
        features: usize,
        max_features: usize,
    ) -> Result<Self> {
        if trees.is_empty() || trees.len() != tree_seeds.len() {
            return Err(Error::InvalidArgument("forest tree and seed counts differ".into()));
        }
        if trees.iter().any(|t| t.nodes()[0].value.len() != classes) {
            return Err(Error::InvalidArgument("forest tree class width mismatch".into()));
        }
        Ok(Self {
            trees,
            tree_seeds,
            classes,
            features,
            max_features,
        })
    }
}
