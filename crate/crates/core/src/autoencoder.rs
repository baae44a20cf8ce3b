//! Convolutional autoencoder: latent features and reconstructions.
//!
//! The encoder is a stack of stride-2 stages, each a 4×4 downsampling conv
//! followed by residual blocks, then a linear map to the latent vector. The
//! decoder maps the latent back to the last feature shape and upsamples with
//! 4×4 stride-2 transposed convs, ending in a sigmoid.

use std::path::Path;

use crate::checkpoint::{Block, Checkpoint};
use crate::data::{ImageRecord, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::{batches, mean_of, Bound, Conv, ConvTranspose, Linear, ParamStore, ResidualBlock};
use crate::rng::{derive, seeded, Rng};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};

pub const KIND: &str = "autoencoder";

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub side: usize,
    /// Channel width of each stride-2 stage.
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub latent_dim: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement of at least `min_delta`
    /// before training stops.
    pub patience: usize,
    pub min_delta: f64,
    /// Adam learning rate. Zero freezes the weights, which still runs the
    /// epoch loop and early stopping.
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            side: 224,
            widths: vec![32, 64, 128, 256, 512],
            blocks_per_stage: 1,
            latent_dim: 1024,
            max_epochs: 40,
            patience: 5,
            min_delta: 1e-5,
            lr: 1e-3,
            batch_size: 32,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return err("autoencoder widths must be nonempty and positive".into());
        }
        let stages = self.widths.len() as u32;
        if self.side == 0 || !self.side.is_multiple_of(1 << stages) {
            return err(format!(
                "side {} must be a positive multiple of 2^{stages} for {stages} stride-2 stages",
                self.side
            ));
        }
        if self.latent_dim == 0 {
            return err("latent_dim must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return err("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return err("patience must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return err(format!("lr must be finite and nonnegative, got {}", self.lr));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return err("min_delta must be finite and nonnegative".into());
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        Ok(())
    }

    /// `[C,H,W]` of the last encoder feature map.
    pub fn feature_shape(&self) -> [usize; 3] {
        let s = self.side >> self.widths.len();
        [*self.widths.last().expect("validated"), s, s]
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        vec![
            ("side".into(), self.side.to_string()),
            ("widths".into(), widths.join(",")),
            ("blocks_per_stage".into(), self.blocks_per_stage.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("min_delta".into(), self.min_delta.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
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
            widths,
            blocks_per_stage: ck.meta_parse("blocks_per_stage")?,
            latent_dim: ck.meta_parse("latent_dim")?,
            max_epochs: ck.meta_parse("max_epochs")?,
            patience: ck.meta_parse("patience")?,
            min_delta: ck.meta_parse("min_delta")?,
            lr: ck.meta_parse("lr")?,
            batch_size: ck.meta_parse("batch_size")?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Clone, Debug)]
struct Stage {
    down: Conv,
    blocks: Vec<ResidualBlock>,
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    config: AutoencoderConfig,
    params: ParamStore,
    stages: Vec<Stage>,
    to_latent: Linear,
    from_latent: Linear,
    up: Vec<ConvTranspose>,
    history: Vec<EpochLoss>,
    best_epoch: usize,
    seed: u64,
}

impl Autoencoder {
    /// Freshly initialized weights.
    pub fn new(config: AutoencoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive(seed, "autoencoder.init"));
        let mut params = ParamStore::new();
        let mut stages = Vec::new();
        let mut c_in = 3;
        for (i, &w) in config.widths.iter().enumerate() {
            let down = Conv::new(&mut params, &format!("enc{i}.down"), c_in, w, 4, 2, 1, &mut rng);
            let blocks = (0..config.blocks_per_stage)
                .map(|b| ResidualBlock::new(&mut params, &format!("enc{i}.res{b}"), w, w, false, &mut rng))
                .collect();
            stages.push(Stage { down, blocks });
            c_in = w;
        }
        let flat: usize = config.feature_shape().iter().product();
        let to_latent = Linear::new(&mut params, "to_latent", flat, config.latent_dim, &mut rng);
        let from_latent = Linear::new(&mut params, "from_latent", config.latent_dim, flat, &mut rng);
        let mut up = Vec::new();
        for i in (0..config.widths.len()).rev() {
            let c_out = if i == 0 { 3 } else { config.widths[i - 1] };
            up.push(ConvTranspose::new(
                &mut params,
                &format!("dec{i}.up"),
                config.widths[i],
                c_out,
                4,
                2,
                1,
                &mut rng,
            ));
        }
        Ok(Self {
            config,
            params,
            stages,
            to_latent,
            from_latent,
            up,
            history: Vec::new(),
            best_epoch: 0,
            seed,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    /// Epoch whose parameters were kept; 0 when untrained.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_image(&self, img: &Tensor) -> Result<()> {
        let s = self.config.side;
        if img.shape() != [3, s, s] {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: vec![3, s, s],
                rhs: img.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn encode_var(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for stage in &self.stages {
            h = tape.relu(stage.down.forward(tape, p, h)?)?;
            for b in &stage.blocks {
                h = b.forward(tape, p, h)?;
            }
        }
        let flat = tape.reshape(h, &[1, self.config.feature_shape().iter().product()])?;
        self.to_latent.forward(tape, p, flat)
    }

    fn decode_var(&self, tape: &Tape, p: &Bound, z: Var) -> Result<Var> {
        let h = tape.relu(self.from_latent.forward(tape, p, z)?)?;
        let mut h = tape.reshape(h, &self.config.feature_shape())?;
        for (i, layer) in self.up.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            h = if i + 1 == self.up.len() {
                tape.sigmoid(h)?
            } else {
                tape.relu(h)?
            };
        }
        Ok(h)
    }

    /// Latent vector of one image.
    pub fn encode(&self, img: &Tensor) -> Result<Vec<f64>> {
        self.check_image(img)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let z = self.encode_var(&tape, &p, tape.constant(img.clone()))?;
        let out = tape.value(z).data().to_vec();
        Ok(out)
    }

    /// Image `[3,side,side]` with values in `(0,1)`.
    pub fn decode(&self, z: &[f64]) -> Result<Tensor> {
        if z.len() != self.config.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: vec![self.config.latent_dim],
                rhs: vec![z.len()],
            });
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let zv = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let out = self.decode_var(&tape, &p, zv)?;
        let img = tape.value(out).clone();
        Ok(img)
    }

    pub fn reconstruct(&self, img: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(img)?)
    }

    fn batch_loss(&self, tape: &Tape, p: &Bound, images: &[&Tensor]) -> Result<Var> {
        let terms = images
            .iter()
            .map(|img| {
                let x = tape.constant((*img).clone());
                let z = self.encode_var(tape, p, x)?;
                let y = self.decode_var(tape, p, z)?;
                tape.mse_loss(y, x)
            })
            .collect::<Result<Vec<_>>>()?;
        mean_of(tape, &terms)
    }

    /// Mean per-image reconstruction MSE.
    pub fn reconstruction_loss(&self, ds: &LabeledDataset) -> Result<f64> {
        ds.require_nonempty("reconstruction loss of an empty dataset")?;
        let losses = crate::par::map(ds.records(), |r| -> Result<f64> {
            self.check_image(r.pixels())?;
            let tape = Tape::new();
            let p = self.params.bind(&tape, false);
            let l = self.batch_loss(&tape, &p, &[r.pixels()])?;
            let v = tape.value(l).item();
            Ok(v)
        });
        let total = losses.into_iter().sum::<Result<f64>>()?;
        Ok(total / ds.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut blocks = self.params.to_blocks("");
        if !self.history.is_empty() {
            let rows: Vec<f64> = self
                .history
                .iter()
                .flat_map(|h| [h.epoch as f64, h.train, h.val])
                .collect();
            blocks.push(Block::new(
                "history",
                Tensor::new(vec![self.history.len(), 3], rows).expect("nonempty history"),
            ));
        }
        let mut meta = self.config.to_meta();
        meta.push(("best_epoch".into(), self.best_epoch.to_string()));
        Checkpoint::new(KIND, self.seed, self.history.len() as u32, meta, blocks)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let config = AutoencoderConfig::from_checkpoint(ck)?;
        let mut model = Self::new(config, ck.seed)?;
        model.params.load_blocks("", &ck.blocks)?;
        model.best_epoch = ck.meta_parse("best_epoch")?;
        if let Ok(h) = ck.block("history") {
            model.history = (0..h.shape()[0])
                .map(|i| {
                    let r = h.row(i);
                    EpochLoss {
                        epoch: r[0] as usize,
                        train: r[1],
                        val: r[2],
                    }
                })
                .collect();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Trains with Adam on per-image MSE, keeping the parameters of the epoch
/// with the lowest validation loss. Training stops after `max_epochs` or
/// once `patience` epochs in a row fail to beat the last reference loss by
/// `min_delta`.
pub fn train_autoencoder(
    config: &AutoencoderConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
    seed: u64,
) -> Result<Autoencoder> {
    train.require_nonempty("autoencoder training set is empty")?;
    val.require_nonempty("autoencoder validation set is empty")?;
    let mut model = Autoencoder::new(config.clone(), seed)?;
    for r in train.records().iter().chain(val.records()) {
        model.check_image(r.pixels())?;
    }
    let mut adam = if config.lr > 0.0 {
        Some(Adam::new(AdamConfig::with_lr(config.lr))?)
    } else {
        None
    };
    let mut rng = seeded(derive(seed, "autoencoder.batches"));
    let images = train.images();
    let mut best = (f64::INFINITY, model.params.clone(), 0);
    let (mut reference, mut stale) = (f64::INFINITY, 0);
    for epoch in 1..=config.max_epochs {
        let mut sum = 0.0;
        for batch in batches(images.len(), config.batch_size, &mut rng) {
            let tape = Tape::new();
            let p = model.params.bind(&tape, adam.is_some());
            let imgs: Vec<&Tensor> = batch.iter().map(|&i| images[i]).collect();
            let loss = model.batch_loss(&tape, &p, &imgs)?;
            sum += tape.value(loss).item() * batch.len() as f64;
            if let Some(adam) = adam.as_mut() {
                model.params.step(&tape, &p, loss, adam)?;
            }
        }
        let val_loss = model.reconstruction_loss(val)?;
        model.history.push(EpochLoss {
            epoch,
            train: sum / images.len() as f64,
            val: val_loss,
        });
        // Any improvement is kept; only one of at least `min_delta` resets
        // the patience counter.
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), epoch);
        }
        if val_loss < reference - config.min_delta {
            reference = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.params = best.1;
    model.best_epoch = best.2;
    Ok(model)
}

/// Latent rows with their labels and source ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    /// `[N, latent_dim]`.
    pub data: Tensor,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl Latents {
    pub fn new(data: Tensor, labels: Vec<usize>, ids: Vec<String>) -> Result<Self> {
        if data.shape().len() != 2 || data.shape()[0] != labels.len() || ids.len() != labels.len() {
            return Err(Error::Shape {
                op: "latents",
                detail: format!(
                    "{:?} rows with {} labels and {} ids",
                    data.shape(),
                    labels.len(),
                    ids.len()
                ),
            });
        }
        Ok(Self { data, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    /// CSV with header `label,z0,...,z{d-1}`. Values use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            out.push_str(&format!(",z{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads [`Latents::write_csv`] output. Ids become the row numbers.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "latent csv", "empty file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        let dim = cols.len().saturating_sub(1);
        if cols.first() != Some(&"label")
            || dim == 0
            || cols[1..].iter().enumerate().any(|(j, c)| *c != format!("z{j}"))
        {
            return Err(Error::format(path, "latent csv", "header must be `label,z0,...`"));
        }
        let (mut labels, mut data) = (Vec::new(), Vec::new());
        for (n, line) in lines.filter(|l| !l.is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::format(
                    path,
                    "latent csv",
                    format!("row {} has {} fields", n + 1, fields.len()),
                ));
            }
            let bad = |f: &str| Error::format(path, "latent csv", format!("row {}: bad number `{f}`", n + 1));
            labels.push(fields[0].parse().map_err(|_| bad(fields[0]))?);
            for f in &fields[1..] {
                data.push(f.parse::<f64>().map_err(|_| bad(f))?);
            }
        }
        if labels.is_empty() {
            return Err(Error::format(path, "latent csv", "no rows"));
        }
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::new(Tensor::new(vec![labels.len(), dim], data)?, labels, ids)
    }

    /// Binary layout, all little-endian: magic `CAVELAT1`, `u64` rows,
    /// `u64` dim, rows × `u32` label, then rows × dim `f64` values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(24 + self.len() * (4 + 8 * self.dim()));
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for v in self.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |d: &str| Error::format(path, "latent binary", d);
        if bytes.len() < 24 || &bytes[..8] != LATENT_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
        let (rows, dim) = (word(8), word(16));
        let need = rows
            .checked_mul(4 + 8 * dim)
            .and_then(|b| b.checked_add(24))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != need || rows == 0 || dim == 0 {
            return Err(bad("size does not match header"));
        }
        let labels: Vec<usize> = bytes[24..24 + 4 * rows]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let data = bytes[24 + 4 * rows..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let ids = (0..rows).map(|i| i.to_string()).collect();
        Self::new(Tensor::new(vec![rows, dim], data)?, labels, ids)
    }
}

const LATENT_MAGIC: &[u8; 8] = b"CAVELAT1";

/// Encodes every record, in dataset order.
pub fn extract_latents(model: &Autoencoder, ds: &LabeledDataset) -> Result<Latents> {
    ds.require_nonempty("no records to encode")?;
    let rows = crate::par::map(ds.records(), |r| model.encode(r.pixels()));
    let mut data = Vec::with_capacity(ds.len() * model.latent_dim());
    for r in rows {
        data.extend(r?);
    }
    Latents::new(
        Tensor::new(vec![ds.len(), model.latent_dim()], data)?,
        ds.labels(),
        ds.records().iter().map(|r| r.source_id().to_string()).collect(),
    )
}

/// Appends reconstructions of `floor(fraction · N)` records drawn without
/// replacement. Reconstructions follow the dataset order of their sources
/// and carry ids `<source id>_rec`.
pub fn merge_reconstructions(
    model: &Autoencoder,
    ds: &LabeledDataset,
    fraction: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "merge fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let k = (fraction * ds.len() as f64).floor() as usize;
    let mut picked = rand::seq::index::sample(rng, ds.len(), k).into_vec();
    picked.sort_unstable();
    let sources: Vec<&ImageRecord> = picked.iter().map(|&i| &ds.records()[i]).collect();
    let recon = crate::par::map(&sources, |r| model.reconstruct(r.pixels()));
    let mut out = ds.clone();
    for (src, img) in sources.into_iter().zip(recon) {
        out.push(src.derive(img?, Provenance::Reconstructed, format!("{}_rec", src.source_id()))?)?;
    }
    Ok(out)
}
