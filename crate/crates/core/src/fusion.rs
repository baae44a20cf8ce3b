//! Three-way soft vote over the attention backbone (raw images), the dense
//! classifier and the classical ensemble (both on autoencoder latents).

use std::fmt::Write as _;
use std::path::Path;
use std::thread;

use crate::autoencoder::{
    extract_latents, merge_reconstructions, train_autoencoder, Autoencoder, AutoencoderConfig, Latents,
};
use crate::cbam::{train_cbam, CbamBackbone, CbamConfig};
use crate::data::LabeledDataset;
use crate::dnn::{train_dnn, DnnConfig, DnnModel};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::rng::{derive, seeded};
use crate::synxrf::{fit_synxrf, SynXrf, SynXrfConfig};
use crate::tensor::Tensor;
use crate::vote::{self, argmax_rows};

/// Member names in vote order, followed by the fused model.
pub const MODEL_NAMES: [&str; 4] = ["cbam", "dnn", "synxrf", "cavenet"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// One thread per member.
    Parallel,
}

#[derive(Clone, Debug)]
pub struct CaveNet {
    pub autoencoder: Autoencoder,
    pub cbam: Option<CbamBackbone>,
    pub dnn: Option<DnnModel>,
    pub synxrf: Option<SynXrf>,
    weights: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Fused rows `[N,C]`.
    pub probs: Tensor,
    /// Row argmax, lowest class on ties.
    pub labels: Vec<usize>,
    /// Member rows in [`MODEL_NAMES`] order.
    pub members: [Tensor; 3],
}

impl CaveNet {
    pub fn new(
        autoencoder: Autoencoder,
        cbam: Option<CbamBackbone>,
        dnn: Option<DnnModel>,
        synxrf: Option<SynXrf>,
        weights: [f64; 3],
    ) -> Result<Self> {
        vote::check_weights(&weights, 3)?;
        Ok(Self {
            autoencoder,
            cbam,
            dnn,
            synxrf,
            weights,
        })
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn set_weights(&mut self, weights: [f64; 3]) -> Result<()> {
        vote::check_weights(&weights, 3)?;
        self.weights = weights;
        Ok(())
    }

    fn members(&self) -> Result<(&CbamBackbone, &DnnModel, &SynXrf)> {
        let missing = |m: &str| Error::Untrained(m.to_string());
        Ok((
            self.cbam.as_ref().ok_or_else(|| missing("cbam"))?,
            self.dnn.as_ref().ok_or_else(|| missing("dnn"))?,
            self.synxrf.as_ref().ok_or_else(|| missing("synxrf"))?,
        ))
    }

    fn latents(&self, images: &[&Tensor]) -> Result<Tensor> {
        let rows = crate::par::map(images, |img| self.autoencoder.encode(img));
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Tensor::new(vec![images.len(), self.autoencoder.latent_dim()], rows.concat())
    }

    /// Member rows for a batch of `[3,side,side]` images. Every member is a
    /// pure function of its inputs, so both modes give identical bits.
    pub fn member_probas(&self, images: &[&Tensor], mode: Execution) -> Result<[Tensor; 3]> {
        if images.is_empty() {
            return Err(Error::EmptyDataset(" for fused prediction".into()));
        }
        let (cbam, dnn, synxrf) = self.members()?;
        let tag = |m: &'static str| move |e| Error::member(m, e);
        let (a, b, c) = match mode {
            Execution::Sequential => {
                let a = cbam.predict_proba(images).map_err(tag("cbam"));
                let z = self.latents(images)?;
                let b = dnn.predict_proba(&z).map_err(tag("dnn"));
                let c = synxrf.predict_proba(&z).map_err(tag("synxrf"));
                (a, b, c)
            }
            Execution::Parallel => thread::scope(|s| -> Result<_> {
                let ha = s.spawn(|| cbam.predict_proba(images).map_err(tag("cbam")));
                let z = self.latents(images)?;
                let (b, c) = thread::scope(|inner| {
                    let hc = inner.spawn(|| synxrf.predict_proba(&z).map_err(tag("synxrf")));
                    let b = dnn.predict_proba(&z).map_err(tag("dnn"));
                    (b, hc.join().expect("synxrf worker panicked"))
                });
                Ok((ha.join().expect("cbam worker panicked"), b, c))
            })?,
        };
        let out = [a?, b?, c?];
        if out.iter().any(|t| t.shape() != out[0].shape()) {
            return Err(Error::InvalidArgument(format!(
                "members disagree on the class count: {:?}, {:?}, {:?}",
                out[0].shape(),
                out[1].shape(),
                out[2].shape()
            )));
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[&Tensor], mode: Execution) -> Result<Prediction> {
        let members = self.member_probas(images, mode)?;
        let probs = fuse(&members, &self.weights)?;
        Ok(Prediction {
            labels: argmax_rows(&probs),
            probs,
            members,
        })
    }
}

/// Weighted mean of member rows.
pub fn fuse(members: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = members.iter().collect();
    vote::soft_vote(&refs, weights)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub autoencoder: AutoencoderConfig,
    pub dnn: DnnConfig,
    pub synxrf: SynXrfConfig,
    pub cbam: CbamConfig,
    pub weights: Option<[f64; 3]>,
    /// Share of training images whose reconstructions join the training set.
    pub merge_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            autoencoder: AutoencoderConfig::default(),
            dnn: DnnConfig::default(),
            synxrf: SynXrfConfig::default(),
            cbam: CbamConfig::default(),
            weights: None,
            merge_fraction: 0.05,
        }
    }
}

/// Trained network, validation latents and validation reports (members in
/// order, then the fusion).
#[derive(Debug)]
pub struct TrainedPipeline {
    pub net: CaveNet,
    pub train_latents: Latents,
    pub val_latents: Latents,
    pub reports: Vec<MetricsReport>,
}

/// Autoencoder first, then reconstructions merged into the training set,
/// then the three members concurrently on their own threads. Failures name
/// the member.
pub fn train_all(
    config: &PipelineConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
    seed: u64,
) -> Result<TrainedPipeline> {
    let ae = train_autoencoder(&config.autoencoder, train, val, derive(seed, "autoencoder"))
        .map_err(|e| Error::member("autoencoder", e))?;
    let merged = merge_reconstructions(&ae, train, config.merge_fraction, &mut seeded(derive(seed, "merge")))?;
    let train = &merged;
    let train_latents = extract_latents(&ae, train)?;
    let val_latents = extract_latents(&ae, val)?;
    let (cbam, dnn, synxrf) = thread::scope(|s| {
        let hc = s.spawn(|| train_cbam(&config.cbam, train, val, derive(seed, "cbam")));
        let hs = s.spawn(|| {
            fit_synxrf(
                &train_latents.data,
                &train_latents.labels,
                &config.synxrf,
                derive(seed, "synxrf"),
            )
        });
        let d = train_dnn(
            &config.dnn,
            &train_latents.data,
            &train_latents.labels,
            derive(seed, "dnn"),
        );
        (
            hc.join().expect("cbam worker panicked"),
            d,
            hs.join().expect("synxrf worker panicked"),
        )
    });
    let cbam = cbam.map_err(|e| Error::member("cbam", e))?;
    let dnn = dnn.map_err(|e| Error::member("dnn", e))?;
    let synxrf = synxrf.map_err(|e| Error::member("synxrf", e))?;
    let net = CaveNet::new(
        ae,
        Some(cbam),
        Some(dnn),
        Some(synxrf),
        config.weights.unwrap_or([1.0; 3]),
    )?;
    let pred = net.predict(&val.images(), Execution::Parallel)?;
    let labels = val.labels();
    let mut reports = Vec::with_capacity(4);
    for (name, probs) in MODEL_NAMES.iter().zip(pred.members.iter().chain([&pred.probs])) {
        reports.push(evaluate(name, probs, &labels)?);
    }
    Ok(TrainedPipeline {
        net,
        train_latents,
        val_latents,
        reports,
    })
}

/// CSV `id,predicted_class,p0..` with one row per image; the predicted
/// class is the row argmax.
pub fn predictions_csv(ids: &[String], probs: &Tensor) -> Result<String> {
    if probs.shape().len() != 2 || ids.len() != probs.shape()[0] {
        return Err(Error::InvalidArgument(format!(
            "{} ids for probability rows of shape {:?}",
            ids.len(),
            probs.shape()
        )));
    }
    let labels = argmax_rows(probs);
    let mut out = String::from("id,predicted_class");
    for j in 0..probs.shape()[1] {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        let _ = write!(out, "{id},{}", labels[i]);
        for v in probs.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_predictions(ids: &[String], probs: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, predictions_csv(ids, probs)?).map_err(|e| Error::io(path, e))
}

/// Parses a predictions CSV into ids, predicted classes and probability
/// rows.
pub fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<usize>, Tensor)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: String| Error::format(path, "predictions", d);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let c = header.split(',').count().saturating_sub(2);
    let (mut ids, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for line in lines.filter(|l| !l.is_empty()) {
        // Ids may contain commas only if the producer allowed them; split
        // from the right so the numeric tail is unambiguous.
        let cells: Vec<&str> = line.rsplitn(c + 2, ',').collect();
        if cells.len() != c + 2 {
            return Err(bad(format!("expected {} columns in `{line}`", c + 2)));
        }
        ids.push(cells[c + 1].to_string());
        labels.push(cells[c].parse().map_err(|_| bad(format!("bad class `{}`", cells[c])))?);
        for v in cells[..c].iter().rev() {
            rows.push(v.parse().map_err(|_| bad(format!("bad probability `{v}`")))?);
        }
    }
    if ids.is_empty() {
        return Err(bad("no rows".into()));
    }
    let probs = Tensor::new(vec![ids.len(), c], rows)?;
    Ok((ids, labels, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[[f64; 2]]) -> Vec<Tensor> {
        r.iter().map(|v| Tensor::from_rows(&[v.to_vec()]).unwrap()).collect()
    }

    #[test]
    fn tie_goes_to_class_zero() {
        let m = rows(&[[0.7, 0.3], [0.6, 0.4], [0.2, 0.8]]);
        let p = fuse(&m, &[1.0; 3]).unwrap();
        assert!((p.row(0)[0] - 0.5).abs() < 1e-12);
        assert_eq!(argmax_rows(&p), vec![0]);
    }

    #[test]
    fn confident_member_dominates_uniform_ones() {
        let m = rows(&[[0.5, 0.5], [0.1, 0.9], [0.5, 0.5]]);
        assert_eq!(argmax_rows(&fuse(&m, &[1.0; 3]).unwrap()), vec![1]);
    }

    #[test]
    fn unit_weight_reproduces_member() {
        let m = rows(&[[0.3, 0.7], [0.9, 0.1], [0.6, 0.4]]);
        assert_eq!(fuse(&m, &[1.0, 0.0, 0.0]).unwrap(), m[0]);
        assert!(fuse(&m, &[0.0; 3]).is_err());
        assert!(fuse(&m, &[1.0, -1.0, 1.0]).is_err());
    }
}
