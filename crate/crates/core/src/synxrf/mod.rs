//! Classical ensemble over latent vectors: a linear SVM, a random forest,
//! k-nearest neighbours and gradient-boosted trees, combined by averaging
//! their probability rows.

pub mod forest;
pub mod gbt;
pub mod knn;
pub mod svm;
pub mod tree;

use std::path::Path;

pub use forest::{rf_fit, ForestConfig, RandomForestModel};
pub use gbt::{gbt_fit, GbtConfig, GbtModel};
pub use knn::{knn_fit, KnnModel, DEFAULT_K};
pub use svm::{svm_fit, SvmConfig, SvmModel};
pub use tree::DecisionTree;

use crate::checkpoint::{Block, Checkpoint};
use crate::error::{Error, Result};
use crate::rng::derive;
use crate::tensor::Tensor;
use crate::vote;

pub const KIND: &str = "synxrf";
pub const MEMBERS: [&str; 4] = ["svm", "random_forest", "knn", "gbt"];

/// Checks a `[N,d]` query batch against the model width; returns `N`.
pub(crate) fn check_input(op: &'static str, x: &Tensor, features: usize) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[1] != features {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![x.shape().first().copied().unwrap_or(0), features],
            rhs: x.shape().to_vec(),
        });
    }
    Ok(x.shape()[0])
}

/// Checks a training set and returns the class count `max label + 1`
/// (at least 2).
pub(crate) fn check_training(op: &'static str, x: &Tensor, labels: &[usize]) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[0] != labels.len() {
        return Err(Error::Shape {
            op,
            detail: format!("features {:?} with {} labels", x.shape(), labels.len()),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!(" for {op}")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { op });
    }
    Ok((labels.iter().max().expect("nonempty") + 1).max(2))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Per-feature mean and deviation (1 for constant features), plus the
/// standardized copy of `x`.
pub(crate) fn standardizer(x: &Tensor) -> (Vec<f64>, Vec<f64>, Tensor) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut scale = vec![0.0; d];
    for i in 0..n {
        scale
            .iter_mut()
            .zip(x.row(i).iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2));
    }
    for s in &mut scale {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    }
    let mut xs = x.clone();
    for row in xs.data_mut().chunks_exact_mut(d) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) / scale[j];
        }
    }
    (mean, scale, xs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Voting {
    /// Mean of the member probability rows.
    #[default]
    Soft,
    /// Fraction of members whose argmax picks each class.
    Hard,
}

impl Voting {
    pub fn as_str(self) -> &'static str {
        match self {
            Voting::Soft => "soft",
            Voting::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Voting::Soft),
            "hard" => Ok(Voting::Hard),
            _ => Err(Error::Config(format!("voting must be `soft` or `hard`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynXrfConfig {
    pub svm: SvmConfig,
    pub forest: ForestConfig,
    pub k: usize,
    pub gbt: GbtConfig,
    pub voting: Voting,
}

impl Default for SynXrfConfig {
    fn default() -> Self {
        Self {
            svm: SvmConfig::default(),
            forest: ForestConfig::default(),
            k: DEFAULT_K,
            gbt: GbtConfig::default(),
            voting: Voting::Soft,
        }
    }
}

/// The four members; any may be absent until trained or loaded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynXrf {
    pub svm: Option<SvmModel>,
    pub forest: Option<RandomForestModel>,
    pub knn: Option<KnnModel>,
    pub gbt: Option<GbtModel>,
    pub voting: Voting,
}

pub fn fit_synxrf(x: &Tensor, labels: &[usize], config: &SynXrfConfig, seed: u64) -> Result<SynXrf> {
    let wrap = |m: &'static str| move |e| Error::member(m, e);
    Ok(SynXrf {
        svm: Some(svm_fit(x, labels, &config.svm).map_err(wrap("svm"))?),
        forest: Some(rf_fit(x, labels, &config.forest, derive(seed, "synxrf.forest")).map_err(wrap("random_forest"))?),
        knn: Some(knn_fit(x, labels, config.k).map_err(wrap("knn"))?),
        gbt: Some(gbt_fit(x, labels, &config.gbt).map_err(wrap("gbt"))?),
        voting: config.voting,
    })
}

/// Equal-weight vote over member probability rows.
pub fn combine(probas: &[Tensor], voting: Voting) -> Result<Tensor> {
    let refs: Vec<&Tensor> = probas.iter().collect();
    let w = vec![1.0; probas.len()];
    match voting {
        Voting::Soft => vote::soft_vote(&refs, &w),
        Voting::Hard => vote::hard_vote(&refs, &w),
    }
}

impl SynXrf {
    /// Probability rows of each member in [`MEMBERS`] order.
    pub fn member_probas(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let missing = |m: &str| Error::Untrained(m.to_string());
        let probas = vec![
            self.svm.as_ref().ok_or_else(|| missing("svm"))?.predict_proba(x)?,
            self.forest
                .as_ref()
                .ok_or_else(|| missing("random_forest"))?
                .predict_proba(x)?,
            self.knn.as_ref().ok_or_else(|| missing("knn"))?.predict_proba(x)?,
            self.gbt.as_ref().ok_or_else(|| missing("gbt"))?.predict_proba(x)?,
        ];
        if probas.iter().any(|p| p.shape() != probas[0].shape()) {
            return Err(Error::InvalidArgument("members disagree on the class count".into()));
        }
        Ok(probas)
    }

    /// Equal-weight vote over the four members.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        combine(&self.member_probas(x)?, self.voting)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut meta = vec![("voting".to_string(), self.voting.as_str().to_string())];
        let mut blocks = Vec::new();
        let vector = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).expect("nonempty");
        if let Some(m) = &self.svm {
            meta.push(("svm.lambda".into(), m.lambda().to_string()));
            meta.push(("svm.temperature".into(), m.temperature().to_string()));
            blocks.push(Block::new("svm.w", m.weights().clone()));
            blocks.push(Block::new("svm.b", vector(m.bias())));
            blocks.push(Block::new("svm.mean", vector(m.mean())));
            blocks.push(Block::new("svm.scale", vector(m.scale())));
        }
        if let Some(m) = &self.forest {
            meta.push(("rf.trees".into(), m.trees().len().to_string()));
            meta.push(("rf.classes".into(), m.classes().to_string()));
            meta.push(("rf.features".into(), m.features().to_string()));
            meta.push(("rf.max_features".into(), m.max_features().to_string()));
            // Seeds are u64; store them as text to keep every bit.
            let seeds: Vec<String> = m.tree_seeds().iter().map(u64::to_string).collect();
            meta.push(("rf.seeds".into(), seeds.join(",")));
            for (t, tree) in m.trees().iter().enumerate() {
                blocks.push(Block::new(format!("rf.tree{t}"), tree.to_table()));
            }
        }
        if let Some(m) = &self.knn {
            meta.push(("knn.k".into(), m.k().to_string()));
            meta.push(("knn.classes".into(), m.classes().to_string()));
            blocks.push(Block::new("knn.data", m.data().clone()));
            let labels: Vec<f64> = m.labels().iter().map(|&l| l as f64).collect();
            blocks.push(Block::new("knn.labels", vector(&labels)));
        }
        if let Some(m) = &self.gbt {
            meta.push(("gbt.rounds".into(), m.rounds().to_string()));
            meta.push(("gbt.classes".into(), m.classes().to_string()));
            meta.push(("gbt.features".into(), m.features().to_string()));
            blocks.push(Block::new("gbt.alpha", vector(m.alphas())));
            for (r, round) in m.stages().iter().enumerate() {
                for (c, tree) in round.iter().enumerate() {
                    blocks.push(Block::new(format!("gbt.r{r}.c{c}"), tree.to_table()));
                }
            }
        }
        Checkpoint::new(KIND, seed, 0, meta, blocks)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let mut out = SynXrf {
            voting: Voting::parse(ck.meta("voting").unwrap_or("soft"))?,
            ..SynXrf::default()
        };
        let vec_of = |name: &str| ck.block(name).map(|t| t.data().to_vec());
        if ck.block("svm.w").is_ok() {
            out.svm = Some(SvmModel::from_parts(
                ck.block("svm.w")?.clone(),
                vec_of("svm.b")?,
                vec_of("svm.mean")?,
                vec_of("svm.scale")?,
                ck.meta_parse("svm.lambda")?,
                ck.meta_parse("svm.temperature")?,
            )?);
        }
        if ck.meta("rf.trees").is_some() {
            let n: usize = ck.meta_parse("rf.trees")?;
            let features = ck.meta_parse("rf.features")?;
            let trees = (0..n)
                .map(|t| DecisionTree::from_table(ck.block(&format!("rf.tree{t}"))?, features))
                .collect::<Result<Vec<_>>>()?;
            let seeds = ck
                .meta("rf.seeds")
                .unwrap_or_default()
                .split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad tree seed `{s}`")))
                })
                .collect::<Result<Vec<u64>>>()?;
            out.forest = Some(RandomForestModel::from_parts(
                trees,
                seeds,
                ck.meta_parse("rf.classes")?,
                features,
                ck.meta_parse("rf.max_features")?,
            )?);
        }
        if ck.meta("knn.k").is_some() {
            let labels = vec_of("knn.labels")?
                .into_iter()
                .map(|v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::InvalidArgument(format!("bad knn label {v}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            out.knn = Some(KnnModel::new(
                ck.block("knn.data")?.clone(),
                labels,
                ck.meta_parse("knn.classes")?,
                ck.meta_parse("knn.k")?,
            )?);
        }
        if ck.meta("gbt.rounds").is_some() {
            let rounds: usize = ck.meta_parse("gbt.rounds")?;
            let classes: usize = ck.meta_parse("gbt.classes")?;
            let features = ck.meta_parse("gbt.features")?;
            let stages = (0..rounds)
                .map(|r| {
                    (0..classes)
                        .map(|c| DecisionTree::from_table(ck.block(&format!("gbt.r{r}.c{c}"))?, features))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            out.gbt = Some(GbtModel::from_parts(stages, vec_of("gbt.alpha")?, classes, features)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        self.to_checkpoint(seed).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
