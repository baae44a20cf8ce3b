//! One-vs-rest gradient boosting on the logistic loss.
//!
//! Every round fits, for each class, a regression tree to the negative
//! gradient `y − σ(F)` of that class's binary logistic loss with Newton
//! leaves `Σg / Σσ(1−σ)`, and adds it to the class score with weight
//! `α = lr`. Scores start at zero. Probabilities are a softmax over the
//! class scores.

use super::tree::{DecisionTree, Target, TreeConfig};
use super::{check_input, check_training, softmax_in_place};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GbtConfig {
    pub rounds: usize,
    pub lr: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            lr: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("gbt rounds must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("gbt lr must be positive".into()));
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "gbt max_depth and min_samples_leaf must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbtModel {
    /// `stages[m][c]` is round `m`'s tree for class `c`.
    stages: Vec<Vec<DecisionTree>>,
    alphas: Vec<f64>,
    classes: usize,
    features: usize,
    /// Multiclass log-loss of the training set after each round.
    train_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn log_loss(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &y)| {
            let mut p = s.clone();
            softmax_in_place(&mut p);
            -p[y].max(crate::tensor::LOG_EPS).ln()
        })
        .sum();
    total / labels.len() as f64
}

pub fn gbt_fit(x: &Tensor, labels: &[usize], config: &GbtConfig) -> Result<GbtModel> {
    config.validate()?;
    let classes = check_training("gbt_fit", x, labels)?;
    let n = labels.len();
    let tree_config = TreeConfig {
        max_depth: Some(config.max_depth),
        min_samples_leaf: config.min_samples_leaf,
        max_features: None,
    };
    // Trees see every feature, so the generator is never drawn from.
    let mut rng = seeded(0);
    let mut scores = vec![vec![0.0; classes]; n];
    let mut stages = Vec::with_capacity(config.rounds);
    let mut train_loss = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let mut round = Vec::with_capacity(classes);
        for c in 0..classes {
            let p: Vec<f64> = scores.iter().map(|s| sigmoid(s[c])).collect();
            let grad: Vec<f64> = (0..n).map(|i| f64::from(u8::from(labels[i] == c)) - p[i]).collect();
            let hess: Vec<f64> = p.iter().map(|q| q * (1.0 - q)).collect();
            let target = Target::Newton {
                grad: &grad,
                hess: &hess,
            };
            round.push(DecisionTree::fit(x, (0..n).collect(), &target, &tree_config, &mut rng)?);
        }
        for (i, s) in scores.iter_mut().enumerate() {
            for (c, tree) in round.iter().enumerate() {
                s[c] += config.lr * tree.predict_value(x.row(i));
            }
        }
        stages.push(round);
        train_loss.push(log_loss(&scores, labels));
    }
    Ok(GbtModel {
        stages,
        alphas: vec![config.lr; config.rounds],
        classes,
        features: x.shape()[1],
        train_loss,
    })
}

impl GbtModel {
    pub(crate) fn from_parts(
        stages: Vec<Vec<DecisionTree>>,
        alphas: Vec<f64>,
        classes: usize,
        features: usize,
    ) -> Result<Self> {
        if stages.is_empty() || stages.len() != alphas.len() || stages.iter().any(|r| r.len() != classes) {
            return Err(Error::InvalidArgument("inconsistent gbt stages".into()));
        }
        if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidArgument("gbt stage weights must be positive".into()));
        }
        Ok(Self {
            stages,
            alphas,
            classes,
            features,
            train_loss: Vec::new(),
        })
    }

    pub fn rounds(&self) -> usize {
        self.stages.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn stages(&self) -> &[Vec<DecisionTree>] {
        &self.stages
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    /// `α_m h_m(x)` per class for stage `m`.
    pub fn stage_contribution(&self, row: &[f64], m: usize) -> Vec<f64> {
        self.stages[m]
            .iter()
            .map(|t| self.alphas[m] * t.predict_value(row))
            .collect()
    }

    /// Class scores summed over the first `stages` rounds.
    pub fn partial_scores(&self, row: &[f64], stages: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.classes];
        for m in 0..stages.min(self.stages.len()) {
            s.iter_mut()
                .zip(self.stage_contribution(row, m))
                .for_each(|(a, b)| *a += b);
        }
        s
    }

    /// Class scores `Σ α_m h_m(x)` for every row.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let n = check_input("gbt_scores", x, self.features)?;
        let data: Vec<f64> = (0..n)
            .flat_map(|i| self.partial_scores(x.row(i), self.stages.len()))
            .collect();
        Ok(Tensor::new(vec![n, self.classes], data).expect("n ≥ 1"))
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut t = self.scores(x)?;
        for row in t.data_mut().chunks_exact_mut(self.classes) {
            softmax_in_place(row);
        }
        Ok(t)
    }
}
