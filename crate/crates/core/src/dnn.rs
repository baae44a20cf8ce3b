//! Fully connected classifier over latent vectors.
//!
//! Inputs are standardized with the training mean and deviation, then pass
//! through ReLU hidden layers (dropout after the first `dropout_layers`) and
//! a softmax output. Training uses Adam on cross-entropy with stratified
//! k-fold validation, and the delivered model is a retrain on all data.

use std::path::Path;

use crate::checkpoint::{Block, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{batches, Bound, Linear, ParamStore};
use crate::rng::{derive, seeded, Rng, SliceRandom};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::vote::argmax_rows;

pub const KIND: &str = "dnn";

#[derive(Clone, Debug, PartialEq)]
pub struct DnnConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Dropout follows this many leading hidden layers.
    pub dropout_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub folds: usize,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256, 128],
            dropout: 0.3,
            dropout_layers: 2,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            folds: 5,
        }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden.contains(&0) {
            return err("hidden widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return err("epochs and batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err("lr must be positive");
        }
        if self.folds == 1 {
            return err("folds must be 0 (no cross-validation) or at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DnnModel {
    config: DnnConfig,
    inputs: usize,
    classes: usize,
    params: ParamStore,
    layers: Vec<Linear>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    fold_accuracy: Vec<f64>,
    loss_history: Vec<f64>,
    seed: u64,
}

impl DnnModel {
    /// He-initialized hidden layers and identity standardization.
    pub fn new(config: DnnConfig, inputs: usize, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if inputs == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "need inputs ≥ 1 and classes ≥ 2, got {inputs} and {classes}"
            )));
        }
        let mut rng = seeded(derive(seed, "dnn.init"));
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut width = inputs;
        for (i, &h) in config.hidden.iter().enumerate() {
            layers.push(Linear::new(&mut params, &format!("fc{i}"), width, h, &mut rng));
            width = h;
        }
        layers.push(Linear::new(&mut params, "out", width, classes, &mut rng));
        Ok(Self {
            config,
            inputs,
            classes,
            params,
            layers,
            mean: vec![0.0; inputs],
            scale: vec![1.0; inputs],
            fold_accuracy: Vec::new(),
            loss_history: Vec::new(),
            seed,
        })
    }

    pub fn config(&self) -> &DnnConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Zeroes the output layer so every row of the output is uniform.
    pub fn zero_output_layer(&mut self) {
        let out = *self.layers.last().expect("output layer");
        self.params.get_mut(out.w).data_mut().fill(0.0);
        self.params.get_mut(out.b).data_mut().fill(0.0);
    }

    /// Validation accuracy of each cross-validation fold.
    pub fn fold_accuracy(&self) -> &[f64] {
        &self.fold_accuracy
    }

    /// Mean training cross-entropy of each epoch of the final fit.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "dnn_forward",
                lhs: vec![x.shape().first().copied().unwrap_or(0), self.inputs],
                rhs: x.shape().to_vec(),
            });
        }
        let mut t = x.clone();
        for row in t.data_mut().chunks_exact_mut(self.inputs) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(t)
    }

    fn forward_var(&self, tape: &Tape, p: &Bound, x: Var, training: bool, rng: &mut Rng) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i < last {
                h = tape.relu(h)?;
                if i < self.config.dropout_layers {
                    h = tape.dropout(h, self.config.dropout, training, rng)?;
                }
            }
        }
        tape.softmax(h, 1)
    }

    /// Probability rows `[N,C]`; dropout is active only when `training`.
    pub fn forward(&self, latents: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let x = self.standardize(latents)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out = self.forward_var(&tape, &p, tape.constant(x), training, rng)?;
        let probs = tape.value(out).clone();
        Ok(probs)
    }

    /// Evaluation-mode probabilities.
    pub fn predict_proba(&self, latents: &Tensor) -> Result<Tensor> {
        self.forward(latents, false, &mut seeded(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut blocks = self.params.to_blocks("");
        blocks.push(Block::new(
            "input.mean",
            Tensor::new(vec![self.inputs], self.mean.clone()).expect("inputs ≥ 1"),
        ));
        blocks.push(Block::new(
            "input.scale",
            Tensor::new(vec![self.inputs], self.scale.clone()).expect("inputs ≥ 1"),
        ));
        if !self.fold_accuracy.is_empty() {
            blocks.push(Block::new(
                "fold_accuracy",
                Tensor::new(vec![self.fold_accuracy.len()], self.fold_accuracy.clone()).expect("nonempty"),
            ));
        }
        if !self.loss_history.is_empty() {
            blocks.push(Block::new(
                "loss_history",
                Tensor::new(vec![self.loss_history.len()], self.loss_history.clone()).expect("nonempty"),
            ));
        }
        let hidden: Vec<String> = self.config.hidden.iter().map(usize::to_string).collect();
        let meta = vec![
            ("inputs".into(), self.inputs.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("hidden".into(), hidden.join(",")),
            ("dropout".into(), self.config.dropout.to_string()),
            ("dropout_layers".into(), self.config.dropout_layers.to_string()),
            ("epochs".into(), self.config.epochs.to_string()),
            ("batch_size".into(), self.config.batch_size.to_string()),
            ("lr".into(), self.config.lr.to_string()),
            ("folds".into(), self.config.folds.to_string()),
        ];
        Checkpoint::new(KIND, self.seed, self.config.epochs as u32, meta, blocks)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let hidden_text = ck.meta("hidden").unwrap_or_default();
        let hidden = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text
                .split(',')
                .map(|w| {
                    w.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad width `{w}`")))
                })
                .collect::<Result<Vec<usize>>>()?
        };
        let config = DnnConfig {
            hidden,
            dropout: ck.meta_parse("dropout")?,
            dropout_layers: ck.meta_parse("dropout_layers")?,
            epochs: ck.meta_parse("epochs")?,
            batch_size: ck.meta_parse("batch_size")?,
            lr: ck.meta_parse("lr")?,
            folds: ck.meta_parse("folds")?,
        };
        let mut m = Self::new(config, ck.meta_parse("inputs")?, ck.meta_parse("classes")?, ck.seed)?;
        m.params.load_blocks("", &ck.blocks)?;
        m.mean = ck.block("input.mean")?.data().to_vec();
        m.scale = ck.block("input.scale")?.data().to_vec();
        m.fold_accuracy = ck.block("fold_accuracy").map(|t| t.data().to_vec()).unwrap_or_default();
        m.loss_history = ck.block("loss_history").map(|t| t.data().to_vec()).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), d], data).expect("nonempty selection")
}

/// Per-feature mean and deviation; constant features get scale 1.
fn moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        var.iter_mut()
            .zip(x.row(i).iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn fit(config: &DnnConfig, x: &Tensor, labels: &[usize], classes: usize, seed: u64, stage: &str) -> Result<DnnModel> {
    let mut model = DnnModel::new(config.clone(), x.shape()[1], classes, seed)?;
    let (mean, scale) = moments(x);
    model.mean = mean;
    model.scale = scale;
    let xs = model.standardize(x)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr))?;
    let mut rng = seeded(derive(seed, stage));
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for batch in batches(labels.len(), config.batch_size, &mut rng) {
            let tape = Tape::new();
            let p = model.params.bind(&tape, true);
            let xb = tape.constant(rows(&xs, &batch));
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let probs = model.forward_var(&tape, &p, xb, true, &mut rng)?;
            let loss = tape.cross_entropy(probs, &yb)?;
            total += tape.value(loss).item() * batch.len() as f64;
            model.params.step(&tape, &p, loss, &mut adam)?;
        }
        model.loss_history.push(total / labels.len() as f64);
    }
    Ok(model)
}

/// Assigns every sample to one of `k` folds so that each fold holds
/// `floor` or `ceil` of `n_c / k` samples of every class `c`. Returns the
/// fold index of each sample.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::Config(format!(
                "class {c} has {} samples, fewer than {k} folds; use at most {} folds",
                members.len(),
                members.len()
            )));
        }
    }
    let mut rng = seeded(derive(seed, "dnn.folds"));
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

/// Stratified k-fold validation followed by a fit on all data. Folds are
/// independent and train concurrently.
pub fn train_dnn(config: &DnnConfig, latents: &Tensor, labels: &[usize], seed: u64) -> Result<DnnModel> {
    config.validate()?;
    if latents.shape().len() != 2 || latents.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            op: "train_dnn",
            detail: format!("latents {:?} with {} labels", latents.shape(), labels.len()),
        });
    }
    let classes = (labels.iter().max().expect("nonempty") + 1).max(2);
    let mut fold_accuracy = Vec::new();
    if config.folds >= 2 {
        let fold = stratified_folds(labels, config.folds, seed)?;
        let jobs: Vec<usize> = (0..config.folds).collect();
        let results = crate::par::map(&jobs, |&f| -> Result<f64> {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
            let val: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
            let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let m = fit(
                config,
                &rows(latents, &train),
                &y,
                classes,
                seed,
                &format!("dnn.fold{f}"),
            )?;
            let pred = argmax_rows(&m.predict_proba(&rows(latents, &val))?);
            let hits = pred.iter().zip(&val).filter(|(p, &i)| **p == labels[i]).count();
            Ok(hits as f64 / val.len() as f64)
        });
        fold_accuracy = results.into_iter().collect::<Result<_>>()?;
    }
    let mut model = fit(config, latents, labels, classes, seed, "dnn.final")?;
    model.fold_accuracy = fold_accuracy;
    Ok(model)
}

/// CSV `fold,accuracy` with one row per fold, numbered from 1.
pub fn write_cv_report(model: &DnnModel, path: &Path) -> Result<()> {
    let mut out = String::from("fold,accuracy\n");
    for (f, a) in model.fold_accuracy.iter().enumerate() {
        out.push_str(&format!("{},{a}\n", f + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
