//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment. Every key has a default and
//! unknown keys are rejected. Command-line `--key value` pairs override the
//! file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autoencoder::AutoencoderConfig;
use crate::cbam::{CbamConfig, Layout};
use crate::dnn::DnnConfig;
use crate::error::{Error, Result};
use crate::fusion::PipelineConfig;
use crate::synxrf::{ForestConfig, GbtConfig, SvmConfig, SynXrfConfig, Voting};

/// Environment variable naming the output root when `out` is not set.
pub const OUT_ENV: &str = "CAVENET_OUT";

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "",
        "64-bit seed; required by every command that draws random numbers",
    ),
    (
        "out",
        "",
        "output directory (default: $CAVENET_OUT, else `cavenet-out`)",
    ),
    (
        "data_dir",
        "",
        "class-per-folder image tree to ingest; empty generates a synthetic corpus",
    ),
    ("classes", "4", "synthetic class count (1..=10)"),
    (
        "per_class",
        "100",
        "synthetic images per class, one value or a comma list per class",
    ),
    ("side", "32", "image side in pixels"),
    (
        "floor",
        "0",
        "augment every training class up to this count; 0 uses the largest class",
    ),
    ("val_fraction", "0.2", "per-class share held out for validation"),
    ("ae.widths", "16,32", "autoencoder stage widths"),
    ("ae.blocks", "1", "residual blocks per autoencoder stage"),
    ("ae.latent_dim", "64", "latent vector length"),
    ("ae.epochs", "10", "autoencoder epoch limit"),
    ("ae.patience", "5", "epochs without improvement before early stopping"),
    (
        "ae.min_delta",
        "1e-5",
        "smallest validation-loss drop that counts as improvement",
    ),
    ("ae.lr", "0.002", "autoencoder learning rate; 0 freezes the weights"),
    ("ae.batch_size", "16", "autoencoder mini-batch size"),
    (
        "merge_fraction",
        "0.05",
        "share of training images whose reconstructions join the training set",
    ),
    (
        "latent_source",
        "train",
        "`train`, or `val` to fit latent models on validation latents",
    ),
    ("dnn.hidden", "512,256,128", "hidden layer widths"),
    ("dnn.dropout", "0.3", "dropout rate"),
    ("dnn.dropout_layers", "2", "leading hidden layers followed by dropout"),
    ("dnn.epochs", "50", "epochs per fit"),
    ("dnn.batch_size", "32", "mini-batch size"),
    ("dnn.lr", "0.001", "Adam learning rate"),
    ("dnn.folds", "5", "cross-validation folds; 0 skips cross-validation"),
    ("svm.lambda", "0.001", "L2 weight of the SVM objective"),
    ("svm.epochs", "500", "full-batch subgradient steps"),
    ("svm.step", "1", "initial subgradient step"),
    ("svm.temperature", "1", "softmax temperature over SVM margins"),
    ("rf.trees", "100", "trees in the random forest"),
    ("rf.max_depth", "0", "tree depth limit; 0 is unlimited"),
    ("rf.min_samples_leaf", "1", "smallest leaf"),
    ("rf.max_features", "0", "features per split; 0 uses round(sqrt(d))"),
    ("knn.k", "7", "neighbours per vote"),
    ("gbt.rounds", "100", "boosting rounds"),
    ("gbt.lr", "0.1", "shrinkage per round"),
    ("gbt.max_depth", "3", "regression tree depth"),
    ("voting", "soft", "ensemble voting, `soft` or `hard`"),
    (
        "cbam.layout",
        "mini",
        "`mini`, or `resnet18` for the 18-layer block layout",
    ),
    ("cbam.widths", "16,32,64", "stage widths of the mini layout"),
    ("cbam.blocks", "2", "residual blocks per stage"),
    ("cbam.reduction", "4", "channel-attention reduction ratio"),
    ("cbam.attention", "true", "`false` disables the attention refinement"),
    ("cbam.epochs", "30", "epoch limit"),
    (
        "cbam.patience",
        "8",
        "epochs without a new best validation accuracy before stopping",
    ),
    ("cbam.batch_size", "16", "mini-batch size"),
    ("cbam.lr", "0.001", "Adam learning rate"),
    (
        "cbam.attention_maps",
        "0",
        "validation images whose attention maps are exported",
    ),
    ("weights", "1,1,1", "fusion weights for cbam, dnn and synxrf"),
    (
        "input",
        "",
        "dataset directory for `predict` (default: the validation split)",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key `{key}`")))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        known(key)?;
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs.
    pub fn apply_args(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{flag}`")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k, v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("`--{key}` needs a value")))?;
                    (key, v.clone())
                }
            };
            self.set(key, &value)?;
        }
        Ok(())
    }

    /// Defaults, then the file named by `--config` (if any), then every other
    /// `--key value` pair in order.
    pub fn from_args(args: &[String]) -> Result<Self> {
        let mut rest = Vec::with_capacity(args.len());
        let mut file = None;
        let mut it = args.iter();
        while let Some(a) = it.next() {
            if a == "--config" {
                file = Some(
                    it.next()
                        .ok_or_else(|| Error::Config("`--config` needs a path".into()))?
                        .as_str(),
                );
            } else if let Some(p) = a.strip_prefix("--config=") {
                file = Some(p);
            } else {
                rest.push(a.clone());
            }
        }
        let mut cfg = match file {
            Some(p) => Self::load(Path::new(p))?,
            None => Self::default(),
        };
        cfg.apply_args(&rest)?;
        Ok(cfg)
    }

    /// Canonical text form, one key per line in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}` = `{v}` is not a valid {}", std::any::type_name::<T>())))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key)
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: bad list entry `{s}`")))
            })
            .collect()
    }

    pub fn seed(&self) -> Option<u64> {
        self.get("seed").parse().ok()
    }

    pub fn require_seed(&self) -> Result<u64> {
        match self.get("seed") {
            "" => Err(Error::Config("`seed` is required for this command".into())),
            _ => self.parsed("seed"),
        }
    }

    /// `out`, else `$CAVENET_OUT`, else `cavenet-out`.
    pub fn out_dir(&self) -> PathBuf {
        match self.get("out") {
            "" => std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("cavenet-out"), PathBuf::from),
            v => PathBuf::from(v),
        }
    }

    /// Per-class synthetic counts.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let per: Vec<usize> = self.list("per_class")?;
        let classes = self.usize("classes")?;
        match per.len() {
            1 => Ok(vec![per[0]; classes]),
            n if n >= 1 => Ok(per),
            _ => Err(Error::Config("`per_class` is empty".into())),
        }
    }

    pub fn autoencoder(&self) -> Result<AutoencoderConfig> {
        let c = AutoencoderConfig {
            side: self.usize("side")?,
            widths: self.list("ae.widths")?,
            blocks_per_stage: self.usize("ae.blocks")?,
            latent_dim: self.usize("ae.latent_dim")?,
            max_epochs: self.usize("ae.epochs")?,
            patience: self.usize("ae.patience")?,
            min_delta: self.f64("ae.min_delta")?,
            lr: self.f64("ae.lr")?,
            batch_size: self.usize("ae.batch_size")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dnn(&self) -> Result<DnnConfig> {
        let c = DnnConfig {
            hidden: self.list("dnn.hidden")?,
            dropout: self.f64("dnn.dropout")?,
            dropout_layers: self.usize("dnn.dropout_layers")?,
            epochs: self.usize("dnn.epochs")?,
            batch_size: self.usize("dnn.batch_size")?,
            lr: self.f64("dnn.lr")?,
            folds: self.usize("dnn.folds")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synxrf(&self) -> Result<SynXrfConfig> {
        let nonzero = |v: usize| (v > 0).then_some(v);
        let c = SynXrfConfig {
            svm: SvmConfig {
                lambda: self.f64("svm.lambda")?,
                epochs: self.usize("svm.epochs")?,
                step: self.f64("svm.step")?,
                temperature: self.f64("svm.temperature")?,
            },
            forest: ForestConfig {
                trees: self.usize("rf.trees")?,
                max_depth: nonzero(self.usize("rf.max_depth")?),
                min_samples_leaf: self.usize("rf.min_samples_leaf")?,
                max_features: nonzero(self.usize("rf.max_features")?),
                bootstrap: true,
            },
            k: self.usize("knn.k")?,
            gbt: GbtConfig {
                rounds: self.usize("gbt.rounds")?,
                lr: self.f64("gbt.lr")?,
                max_depth: self.usize("gbt.max_depth")?,
                min_samples_leaf: 1,
            },
            voting: Voting::parse(self.get("voting"))?,
        };
        c.svm.validate()?;
        c.forest.validate()?;
        c.gbt.validate()?;
        if c.k == 0 {
            return Err(Error::Config("`knn.k` must be at least 1".into()));
        }
        Ok(c)
    }

    pub fn cbam(&self) -> Result<CbamConfig> {
        let c = CbamConfig {
            side: self.usize("side")?,
            layout: Layout::parse(self.get("cbam.layout"))?,
            widths: self.list("cbam.widths")?,
            blocks_per_stage: self.usize("cbam.blocks")?,
            reduction: self.usize("cbam.reduction")?,
            attention: self.bool("cbam.attention")?,
            epochs: self.usize("cbam.epochs")?,
            patience: self.usize("cbam.patience")?,
            batch_size: self.usize("cbam.batch_size")?,
            lr: self.f64("cbam.lr")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn weights(&self) -> Result<[f64; 3]> {
        let w: Vec<f64> = self.list("weights")?;
        let w: [f64; 3] = w
            .try_into()
            .map_err(|w: Vec<f64>| Error::Config(format!("`weights` needs 3 values, got {}", w.len())))?;
        crate::vote::check_weights(&w, 3)?;
        Ok(w)
    }

    pub fn merge_fraction(&self) -> Result<f64> {
        let f = self.f64("merge_fraction")?;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("`merge_fraction` must lie in [0, 1], got {f}")));
        }
        Ok(f)
    }

    /// Whether latent models train on validation latents.
    pub fn latents_from_val(&self) -> Result<bool> {
        match self.get("latent_source") {
            "train" => Ok(false),
            "val" => Ok(true),
            v => Err(Error::Config(format!(
                "`latent_source` must be `train` or `val`, got `{v}`"
            ))),
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            autoencoder: self.autoencoder()?,
            dnn: self.dnn()?,
            synxrf: self.synxrf()?,
            cbam: self.cbam()?,
            weights: Some(self.weights()?),
            merge_fraction: self.merge_fraction()?,
        })
    }
}

/// Table of keys, defaults and descriptions for help output.
pub fn describe_keys() -> String {
    let mut out = String::new();
    for (k, v, d) in KEYS {
        let shown = if v.is_empty() { "-" } else { v };
        let _ = writeln!(out, "  {k:<20} {shown:<12} {d}");
    }
    out
}
