//! Attention-refined residual image classifier.
//!
//! Spatial attention gates every pixel with
//! `σ(conv7x7([max_c F; avg_c F]))`. Channel attention gates every channel
//! with `σ(W₂ ReLU(W₁ avgpool(F)))`. The refinement applies spatial
//! attention first and computes channel attention on the spatially refined
//! map: `F' = M_c(M_s F) · (M_s F)`. The module sits once, on the output
//! of the last residual stage, before global pooling and the linear head.

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::{Block, Checkpoint};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{batches, mean_of, Bound, Conv, Linear, ParamStore, ResidualBlock};
use crate::rng::{derive, seeded, Rng};
use crate::tensor::{Adam, AdamConfig, PoolKind, Tape, Tensor, Var};
use crate::vote::argmax;

pub const KIND: &str = "cbam";
pub const SPATIAL_KERNEL: usize = 7;
pub const SPATIAL_PAD: usize = 3;

/// Which attention runs first inside [`Cbam::refine_var`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionOrder {
    SpatialFirst,
    ChannelFirst,
}

/// Attention parameters; the tensors live in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub struct Cbam {
    pub spatial: Conv,
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl Cbam {
    /// `channels → max(1, channels / reduction) → channels` bottleneck.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize, rng: &mut Rng) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        Self {
            spatial: Conv::new(
                store,
                &format!("{name}.spatial"),
                2,
                1,
                SPATIAL_KERNEL,
                1,
                SPATIAL_PAD,
                rng,
            ),
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels, rng),
            channels,
        }
    }

    /// Spatial gate `[1,H,W]` of a `[C,H,W]` map.
    pub fn spatial_map_var(&self, tape: &Tape, p: &Bound, f: Var) -> Result<Var> {
        let max = tape.channel_pool(f, PoolKind::Max)?;
        let avg = tape.channel_pool(f, PoolKind::Avg)?;
        let pooled = tape.concat(&[max, avg], 0)?;
        tape.sigmoid(self.spatial.forward(tape, p, pooled)?)
    }

    /// Channel gate `[C,1,1]` of a `[C,H,W]` map.
    pub fn channel_map_var(&self, tape: &Tape, p: &Bound, f: Var) -> Result<Var> {
        let gap = tape.global_pool(f, PoolKind::Avg)?;
        let row = tape.reshape(gap, &[1, self.channels])?;
        let h = tape.relu(self.fc1.forward(tape, p, row)?)?;
        let g = tape.sigmoid(self.fc2.forward(tape, p, h)?)?;
        tape.reshape(g, &[self.channels, 1, 1])
    }

    pub fn refine_var(&self, tape: &Tape, p: &Bound, f: Var, order: AttentionOrder) -> Result<Var> {
        match order {
            AttentionOrder::SpatialFirst => {
                let s = tape.mul(self.spatial_map_var(tape, p, f)?, f)?;
                tape.mul(self.channel_map_var(tape, p, s)?, s)
            }
            AttentionOrder::ChannelFirst => {
                let c = tape.mul(self.channel_map_var(tape, p, f)?, f)?;
                tape.mul(self.spatial_map_var(tape, p, c)?, c)
            }
        }
    }
}

/// A standalone attention module with its own parameters.
#[derive(Clone, Debug)]
pub struct CbamModule {
    pub params: ParamStore,
    pub cbam: Cbam,
}

impl CbamModule {
    pub fn new(channels: usize, reduction: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("attention needs at least one channel".into()));
        }
        let mut params = ParamStore::new();
        let cbam = Cbam::new(&mut params, "cbam", channels, reduction, &mut seeded(seed));
        Ok(Self { params, cbam })
    }

    fn check(&self, f: &Tensor) -> Result<()> {
        if f.shape().len() != 3 || f.shape()[0] != self.cbam.channels || f.shape()[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "cbam",
                lhs: vec![self.cbam.channels, 0, 0],
                rhs: f.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn eval(&self, f: &Tensor, build: impl FnOnce(&Tape, &Bound, Var) -> Result<Var>) -> Result<Tensor> {
        self.check(f)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out = build(&tape, &p, tape.constant(f.clone()))?;
        let t = tape.value(out).clone();
        Ok(t)
    }

    /// `M_s` of shape `[1,H,W]`.
    pub fn spatial_map(&self, f: &Tensor) -> Result<Tensor> {
        self.eval(f, |t, p, x| self.cbam.spatial_map_var(t, p, x))
    }

    /// `M_s · F`.
    pub fn spatial_attention(&self, f: &Tensor) -> Result<Tensor> {
        self.eval(f, |t, p, x| t.mul(self.cbam.spatial_map_var(t, p, x)?, x))
    }

    /// `M_c` as a length-C vector.
    pub fn channel_attention(&self, f: &Tensor) -> Result<Vec<f64>> {
        Ok(self.eval(f, |t, p, x| self.cbam.channel_map_var(t, p, x))?.into_data())
    }

    /// Spatial-first refinement.
    pub fn refine(&self, f: &Tensor) -> Result<Tensor> {
        self.refine_with(f, AttentionOrder::SpatialFirst)
    }

    pub fn refine_with(&self, f: &Tensor, order: AttentionOrder) -> Result<Tensor> {
        self.eval(f, |t, p, x| self.cbam.refine_var(t, p, x, order))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Stem conv then residual stages at the configured widths.
    Mini,
    /// 2-2-2-2 blocks at widths 64-128-256-512 behind a conv + max-pool stem.
    ResNet18,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Mini => "mini",
            Layout::ResNet18 => "resnet18",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(Layout::Mini),
            "resnet18" => Ok(Layout::ResNet18),
            _ => Err(Error::Config(format!("layout must be `mini` or `resnet18`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbamConfig {
    pub side: usize,
    pub layout: Layout,
    /// Stage widths for [`Layout::Mini`].
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub reduction: usize,
    /// `false` replaces the attention refinement with the identity.
    pub attention: bool,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for CbamConfig {
    fn default() -> Self {
        Self {
            side: 32,
            layout: Layout::Mini,
            widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            reduction: 4,
            attention: true,
            epochs: 30,
            patience: 8,
            batch_size: 16,
            lr: 1e-3,
        }
    }
}

impl CbamConfig {
    pub fn stage_widths(&self) -> Vec<usize> {
        match self.layout {
            Layout::Mini => self.widths.clone(),
            Layout::ResNet18 => vec![64, 128, 256, 512],
        }
    }

    /// Total downsampling factor of stem and stages.
    fn reduction_factor(&self) -> usize {
        let stem = match self.layout {
            Layout::Mini => 2,
            Layout::ResNet18 => 4,
        };
        stem << (self.stage_widths().len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let widths = self.stage_widths();
        if widths.is_empty() || widths.contains(&0) {
            return err("cbam needs at least one stage of positive width".into());
        }
        if self.blocks_per_stage == 0 || self.reduction == 0 {
            return err("blocks_per_stage and reduction must be at least 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return err("epochs, batch_size and patience must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err(format!("cbam lr must be positive, got {}", self.lr));
        }
        let f = self.reduction_factor();
        if self.side == 0 || !self.side.is_multiple_of(f) {
            return err(format!(
                "side {} must be a positive multiple of {f} for this layout",
                self.side
            ));
        }
        Ok(())
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        vec![
            ("side".into(), self.side.to_string()),
            ("layout".into(), self.layout.as_str().into()),
            ("widths".into(), widths.join(",")),
            ("blocks_per_stage".into(), self.blocks_per_stage.to_string()),
            ("reduction".into(), self.reduction.to_string()),
            ("attention".into(), self.attention.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.to_string()),
        ]
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let widths = ck
            .meta("widths")
            .unwrap_or_default()
            .split(',')
            .map(|w| {
                w.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad width `{w}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(Self {
            side: ck.meta_parse("side")?,
            layout: Layout::parse(ck.meta("layout").unwrap_or("mini"))?,
            widths,
            blocks_per_stage: ck.meta_parse("blocks_per_stage")?,
            reduction: ck.meta_parse("reduction")?,
            attention: ck.meta_parse("attention")?,
            epochs: ck.meta_parse("epochs")?,
            patience: ck.meta_parse("patience")?,
            batch_size: ck.meta_parse("batch_size")?,
            lr: ck.meta_parse("lr")?,
        })
    }
}

/// Training record of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct CbamBackbone {
    config: CbamConfig,
    classes: usize,
    params: ParamStore,
    stem: Conv,
    blocks: Vec<ResidualBlock>,
    cbam: Cbam,
    head: Linear,
    history: Vec<EpochStats>,
    best_epoch: usize,
    seed: u64,
}

impl CbamBackbone {
    pub fn new(config: CbamConfig, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let mut rng = seeded(derive(seed, "cbam.init"));
        let mut params = ParamStore::new();
        let widths = config.stage_widths();
        let stem = Conv::new(&mut params, "stem", 3, widths[0], 4, 2, 1, &mut rng);
        let mut blocks = Vec::new();
        let mut c_in = widths[0];
        for (s, &w) in widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let down = s > 0 && b == 0;
                blocks.push(ResidualBlock::new(
                    &mut params,
                    &format!("stage{s}.block{b}"),
                    c_in,
                    w,
                    down,
                    &mut rng,
                ));
                c_in = w;
            }
        }
        let cbam = Cbam::new(&mut params, "cbam", c_in, config.reduction, &mut rng);
        let head = Linear::new(&mut params, "head", c_in, classes, &mut rng);
        Ok(Self {
            config,
            classes,
            params,
            stem,
            blocks,
            cbam,
            head,
            history: Vec::new(),
            best_epoch: 0,
            seed,
        })
    }

    pub fn config(&self) -> &CbamConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    /// Epoch whose parameters the model holds (0 if untrained).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.history
            .iter()
            .find(|h| h.epoch == self.best_epoch)
            .map(|h| h.val_accuracy)
    }

    fn check_image(&self, img: &Tensor) -> Result<()> {
        let s = self.config.side;
        if img.shape() != [3, s, s] {
            return Err(Error::ShapeMismatch {
                op: "cbam_forward",
                lhs: vec![3, s, s],
                rhs: img.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Final feature map `[C,h,w]` before attention.
    fn features_var(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        // Pixels in [0,1] map to [-1,1]; without normalization layers an
        // all-positive input leaves the stem features nearly class-blind.
        let x = tape.add(tape.scale(x, 2.0)?, tape.constant(Tensor::full(&[1, 1, 1], -1.0)))?;
        let mut h = tape.relu(self.stem.forward(tape, p, x)?)?;
        if self.config.layout == Layout::ResNet18 {
            h = tape.pool(h, PoolKind::Max, 2, 2)?;
        }
        for b in &self.blocks {
            h = b.forward(tape, p, h)?;
        }
        Ok(h)
    }

    fn forward_var(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let f = self.features_var(tape, p, x)?;
        let f = if self.config.attention {
            self.cbam.refine_var(tape, p, f, AttentionOrder::SpatialFirst)?
        } else {
            f
        };
        let pooled = tape.global_pool(f, PoolKind::Avg)?;
        let row = tape.reshape(pooled, &[1, self.cbam.channels])?;
        tape.softmax(self.head.forward(tape, p, row)?, 1)
    }

    /// Class probabilities of one image.
    pub fn predict_one(&self, img: &Tensor) -> Result<Vec<f64>> {
        self.check_image(img)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out = self.forward_var(&tape, &p, tape.constant(img.clone()))?;
        let row = tape.value(out).data().to_vec();
        Ok(row)
    }

    /// Probability rows `[N,C]`; images are scored concurrently.
    pub fn predict_proba(&self, images: &[&Tensor]) -> Result<Tensor> {
        if images.is_empty() {
            return Err(Error::EmptyDataset(" for cbam prediction".into()));
        }
        let rows = crate::par::map(images, |img| self.predict_one(img));
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Tensor::new(vec![images.len(), self.classes], rows.concat())
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        ds.require_nonempty("cbam evaluation set is empty")?;
        let p = self.predict_proba(&ds.images())?;
        let hits = ds
            .labels()
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(p.row(i)) == y)
            .count();
        Ok(hits as f64 / ds.len() as f64)
    }

    /// Spatial attention map `[1,h,w]` on the final feature map of one
    /// image; `None` when attention is disabled.
    pub fn attention_map(&self, img: &Tensor) -> Result<Option<Tensor>> {
        self.check_image(img)?;
        if !self.config.attention {
            return Ok(None);
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let f = self.features_var(&tape, &p, tape.constant(img.clone()))?;
        let m = self.cbam.spatial_map_var(&tape, &p, f)?;
        let map = tape.value(m).clone();
        Ok(Some(map))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut blocks = self.params.to_blocks("");
        if !self.history.is_empty() {
            let data = self
                .history
                .iter()
                .flat_map(|h| [h.epoch as f64, h.train_loss, h.val_accuracy])
                .collect();
            blocks.push(Block::new(
                "history",
                Tensor::new(vec![self.history.len(), 3], data).expect("nonempty"),
            ));
        }
        let mut meta = self.config.to_meta();
        meta.push(("classes".into(), self.classes.to_string()));
        meta.push(("best_epoch".into(), self.best_epoch.to_string()));
        Checkpoint::new(KIND, self.seed, self.history.len() as u32, meta, blocks)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let config = CbamConfig::from_checkpoint(ck)?;
        let mut m = Self::new(config, ck.meta_parse("classes")?, ck.seed)?;
        m.params.load_blocks("", &ck.blocks)?;
        m.best_epoch = ck.meta_parse("best_epoch")?;
        if let Ok(h) = ck.block("history") {
            m.history = (0..h.shape()[0])
                .map(|i| {
                    let r = h.row(i);
                    EpochStats {
                        epoch: r[0] as usize,
                        train_loss: r[1],
                        val_accuracy: r[2],
                    }
                })
                .collect();
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Adam on mean cross-entropy. Keeps the parameters of the epoch with the
/// highest validation accuracy (earliest on ties) and stops after
/// `patience` epochs without a new best or once validation is perfect.
pub fn train_cbam(
    config: &CbamConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
    seed: u64,
) -> Result<CbamBackbone> {
    train.require_nonempty("cbam training set is empty")?;
    val.require_nonempty("cbam validation set is empty")?;
    let classes = (train.labels().into_iter().max().expect("nonempty") + 1).max(2);
    if let Some(&y) = val.labels().iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label: y, classes });
    }
    let mut model = CbamBackbone::new(config.clone(), classes, seed)?;
    for r in train.records().iter().chain(val.records()) {
        model.check_image(r.pixels())?;
    }
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr))?;
    let mut rng = seeded(derive(seed, "cbam.batches"));
    let images = train.images();
    let labels = train.labels();
    let mut best = (f64::NEG_INFINITY, model.params.clone(), 0);
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let mut sum = 0.0;
        for batch in batches(images.len(), config.batch_size, &mut rng) {
            let tape = Tape::new();
            let p = model.params.bind(&tape, true);
            let terms = batch
                .iter()
                .map(|&i| {
                    let probs = model.forward_var(&tape, &p, tape.constant(images[i].clone()))?;
                    tape.cross_entropy(probs, &[labels[i]])
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = mean_of(&tape, &terms)?;
            sum += tape.value(loss).item() * batch.len() as f64;
            model.params.step(&tape, &p, loss, &mut adam)?;
        }
        let val_accuracy = model.accuracy(val)?;
        model.history.push(EpochStats {
            epoch,
            train_loss: sum / images.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best.0 {
            best = (val_accuracy, model.params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience || val_accuracy >= 1.0 {
            break;
        }
    }
    model.params = best.1;
    model.best_epoch = best.2;
    Ok(model)
}

/// 8-bit binary PGM of a `[1,h,w]` map with values in `[0,1]`.
pub fn write_attention_pgm(map: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = map_dims(map)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// CSV with one row of comma-separated values per map row.
pub fn write_attention_csv(map: &Tensor, path: &Path) -> Result<()> {
    let (_, w) = map_dims(map)?;
    let mut out = String::new();
    for row in map.data().chunks_exact(w) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn map_dims(map: &Tensor) -> Result<(usize, usize)> {
    match map.shape() {
        &[1, h, w] => Ok((h, w)),
        s => Err(Error::Shape {
            op: "attention export",
            detail: format!("expected [1,H,W], got {s:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(c: usize, h: usize, seed: u64) -> Tensor {
        Tensor::randn(&[c, h, h], 1.0, &mut seeded(seed))
    }

    #[test]
    fn constant_input_gives_constant_spatial_gate() {
        let m = CbamModule::new(3, 4, 1).unwrap();
        let f = Tensor::full(&[3, 9, 9], 0.7);
        let gate = m.spatial_map(&f).unwrap();
        // Zero padding makes the border differ; the interior is constant.
        let inner: Vec<f64> = (3..6)
            .flat_map(|y| (3..6).map(move |x| (y, x)))
            .map(|(y, x)| gate.data()[y * 9 + x])
            .collect();
        assert!(inner.iter().all(|v| (v - inner[0]).abs() < 1e-15));
        let out = m.spatial_attention(&f).unwrap();
        assert_eq!(out.shape(), f.shape());
    }

    #[test]
    fn zero_second_layer_gives_half() {
        let mut m = CbamModule::new(5, 2, 1).unwrap();
        m.params.get_mut(m.cbam.fc2.w).data_mut().fill(0.0);
        let g = m.channel_attention(&random_map(5, 4, 2)).unwrap();
        assert_eq!(g, vec![0.5; 5]);
    }

    #[test]
    fn one_by_one_maps_pool_to_themselves() {
        let m = CbamModule::new(4, 2, 3).unwrap();
        let f = random_map(4, 1, 4);
        let g = m.channel_attention(&f).unwrap();
        // Direct evaluation of the bottleneck on the raw channel values.
        let (w1, b1) = (m.params.get(m.cbam.fc1.w), m.params.get(m.cbam.fc1.b));
        let (w2, b2) = (m.params.get(m.cbam.fc2.w), m.params.get(m.cbam.fc2.b));
        let hidden: Vec<f64> = (0..2)
            .map(|j| ((0..4).map(|i| f.data()[i] * w1.data()[i * 2 + j]).sum::<f64>() + b1.data()[j]).max(0.0))
            .collect();
        for (k, gk) in g.iter().enumerate() {
            let z = (0..2).map(|j| hidden[j] * w2.data()[j * 4 + k]).sum::<f64>() + b2.data()[k];
            assert!((gk - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
            assert!(*gk > 0.0 && *gk < 1.0);
        }
    }

    #[test]
    fn refine_contracts_and_saturates() {
        let mut m = CbamModule::new(4, 2, 5).unwrap();
        let f = random_map(4, 6, 6);
        let out = m.refine(&f).unwrap();
        assert_eq!(out.shape(), f.shape());
        assert!(out.data().iter().zip(f.data()).all(|(a, b)| a.abs() <= b.abs()));
        m.params.get_mut(m.cbam.spatial.b).data_mut().fill(50.0);
        m.params.get_mut(m.cbam.fc2.b).data_mut().fill(50.0);
        let out = m.refine(&f).unwrap();
        assert!(out.data().iter().zip(f.data()).all(|(a, b)| (a - b).abs() < 1e-3));
    }

    #[test]
    fn rejects_wrong_channels() {
        let m = CbamModule::new(3, 1, 0).unwrap();
        assert!(m.refine(&random_map(2, 4, 0)).is_err());
        assert!(CbamModule::new(0, 1, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CbamConfig::default().validate().is_ok());
        assert!(CbamConfig {
            side: 30,
            ..CbamConfig::default()
        }
        .validate()
        .is_err());
        let full = CbamConfig {
            layout: Layout::ResNet18,
            side: 64,
            ..CbamConfig::default()
        };
        assert!(full.validate().is_ok());
        assert!(CbamConfig { side: 48, ..full }.validate().is_err());
    }

    #[test]
    fn resnet18_layout_has_eight_blocks() {
        let config = CbamConfig {
            layout: Layout::ResNet18,
            side: 32,
            ..CbamConfig::default()
        };
        let m = CbamBackbone::new(config, 3, 0).unwrap();
        assert_eq!(m.blocks.len(), 8);
        let p = m.predict_one(&Tensor::full(&[3, 32, 32], 0.5)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
