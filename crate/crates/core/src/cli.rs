//! Pipeline stages behind the command-line tool. Every stage reads and
//! writes fixed artifact names under the output directory, so stages can be
//! rerun individually.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autoencoder::{extract_latents, merge_reconstructions, train_autoencoder, Autoencoder, Latents};
use crate::cbam::{train_cbam, write_attention_csv, write_attention_pgm, CbamBackbone};
use crate::config::RunConfig;
use crate::data::{
    balance_dataset, generate_synthetic_counts, ingest_directory, load_dataset_dir, read_manifest, stratified_split,
    write_dataset_dir, LabeledDataset, Provenance,
};
use crate::dnn::{train_dnn, write_cv_report, DnnModel};
use crate::error::{Error, Result};
use crate::fusion::{read_predictions, write_predictions, CaveNet, Execution, MODEL_NAMES};
use crate::metrics::{evaluate, export_heatmap, per_class_csv, read_report_csv, write_report_csv, REPORT_HEADER};
use crate::rng::{derive, seeded};
use crate::synxrf::{fit_synxrf, SynXrf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Balance,
    TrainAe,
    Extract,
    TrainDnn,
    TrainSynxrf,
    TrainCbam,
    Fuse,
    Predict,
    Evaluate,
    Report,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::GenData,
        Command::Balance,
        Command::TrainAe,
        Command::Extract,
        Command::TrainDnn,
        Command::TrainSynxrf,
        Command::TrainCbam,
        Command::Fuse,
        Command::Predict,
        Command::Evaluate,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Balance => "balance",
            Command::TrainAe => "train-ae",
            Command::Extract => "extract",
            Command::TrainDnn => "train-dnn",
            Command::TrainSynxrf => "train-synxrf",
            Command::TrainCbam => "train-cbam",
            Command::Fuse => "fuse",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Artifact layout under the output root.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.path("dataset")
    }
    pub fn train(&self) -> PathBuf {
        self.path("train")
    }
    pub fn val(&self) -> PathBuf {
        self.path("val")
    }
    pub fn autoencoder(&self) -> PathBuf {
        self.path("autoencoder.ckpt")
    }
    pub fn latents(&self) -> PathBuf {
        self.path("latents.csv")
    }
    pub fn val_latents(&self) -> PathBuf {
        self.path("latents_val.csv")
    }
    pub fn dnn(&self) -> PathBuf {
        self.path("dnn.ckpt")
    }
    pub fn synxrf(&self) -> PathBuf {
        self.path("synxrf.ckpt")
    }
    pub fn cbam(&self) -> PathBuf {
        self.path("cbam.ckpt")
    }
    pub fn predictions(&self, model: &str) -> PathBuf {
        self.path(&format!("predictions_{model}.csv"))
    }
    pub fn evaluation(&self, model: &str) -> PathBuf {
        self.path(&format!("eval_{model}.csv"))
    }
    pub fn report(&self) -> PathBuf {
        self.path("report.csv")
    }

    /// `path` if it exists, else an error naming the command that makes it.
    fn require(&self, path: PathBuf, producer: Command) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                path,
                producer: producer.name(),
            })
        }
    }

    fn dataset_dir(&self, dir: PathBuf, producer: Command) -> Result<LabeledDataset> {
        self.require(dir.join("manifest.csv"), producer)?;
        load_dataset_dir(&dir)
    }
}

fn create(root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))
}

fn wrote(log: &mut Vec<String>, path: &Path) {
    log.push(format!("wrote {}", path.display()));
}

/// Runs one stage and returns its progress lines.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<String>> {
    let art = Artifacts::new(cfg.out_dir());
    create(&art.root)?;
    let mut log = Vec::new();
    match cmd {
        Command::GenData => gen_data(cfg, &art, &mut log)?,
        Command::Balance => balance(cfg, &art, &mut log)?,
        Command::TrainAe => train_ae(cfg, &art, &mut log)?,
        Command::Extract => extract(cfg, &art, &mut log)?,
        Command::TrainDnn => train_dnn_cmd(cfg, &art, &mut log)?,
        Command::TrainSynxrf => train_synxrf_cmd(cfg, &art, &mut log)?,
        Command::TrainCbam => train_cbam_cmd(cfg, &art, &mut log)?,
        Command::Fuse => fuse(cfg, &art, &mut log)?,
        Command::Predict => predict(cfg, &art, &mut log)?,
        Command::Evaluate => evaluate_cmd(&art, &mut log)?,
        Command::Report => report(&art, &mut log)?,
    }
    Ok(log)
}

fn gen_data(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let side = cfg.usize("side")?;
    let ds = match cfg.get("data_dir") {
        "" => generate_synthetic_counts(&cfg.class_counts()?, side, derive(cfg.require_seed()?, "synthetic"))?,
        dir => ingest_directory(Path::new(dir), side)?,
    };
    write_dataset_dir(&ds, &art.dataset())?;
    log.push(format!(
        "{} images, class counts {:?}",
        ds.len(),
        &ds.counts()[..ds.num_classes()]
    ));
    wrote(log, &art.dataset());
    Ok(())
}

fn balance(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let ds = art.dataset_dir(art.dataset(), Command::GenData)?;
    let (train, val) = stratified_split(&ds, cfg.f64("val_fraction")?, derive(seed, "split"))?;
    let floor = match cfg.usize("floor")? {
        0 => train.counts().iter().copied().max().unwrap_or(0),
        f => f,
    };
    let train = balance_dataset(&train, floor, &mut seeded(derive(seed, "balance")))?;
    write_dataset_dir(&train, &art.train())?;
    write_dataset_dir(&val, &art.val())?;
    log.push(format!(
        "train {:?}, val {:?}",
        &train.counts()[..train.num_classes()],
        &val.counts()[..val.num_classes()]
    ));
    wrote(log, &art.train());
    wrote(log, &art.val());
    Ok(())
}

fn splits(art: &Artifacts) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((
        art.dataset_dir(art.train(), Command::Balance)?,
        art.dataset_dir(art.val(), Command::Balance)?,
    ))
}

fn train_ae(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let (train, val) = splits(art)?;
    let ae = train_autoencoder(&cfg.autoencoder()?, &train, &val, derive(seed, "autoencoder"))?;
    ae.save(&art.autoencoder())?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in ae.history() {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.train, e.val);
    }
    let hist = art.path("ae_history.csv");
    std::fs::write(&hist, csv).map_err(|e| Error::io(&hist, e))?;
    log.push(format!("best epoch {} of {}", ae.best_epoch(), ae.history().len()));
    wrote(log, &art.autoencoder());
    Ok(())
}

fn load_ae(art: &Artifacts) -> Result<Autoencoder> {
    Autoencoder::load(&art.require(art.autoencoder(), Command::TrainAe)?)
}

/// Training split with merged reconstructions. Depends only on the seed,
/// the split and the autoencoder, so later stages can rebuild it.
fn merged_train(cfg: &RunConfig, art: &Artifacts, ae: &Autoencoder) -> Result<LabeledDataset> {
    let seed = cfg.require_seed()?;
    let train = art.dataset_dir(art.train(), Command::Balance)?;
    merge_reconstructions(ae, &train, cfg.merge_fraction()?, &mut seeded(derive(seed, "merge")))
}

fn merged_count(ds: &LabeledDataset) -> usize {
    ds.records()
        .iter()
        .filter(|r| r.provenance() == Provenance::Reconstructed)
        .count()
}

fn extract(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let ae = load_ae(art)?;
    let train = merged_train(cfg, art, &ae)?;
    let val = art.dataset_dir(art.val(), Command::Balance)?;
    extract_latents(&ae, &train)?.write_csv(&art.latents())?;
    extract_latents(&ae, &val)?.write_csv(&art.val_latents())?;
    log.push(format!(
        "{} training latents, {} from reconstructions",
        train.len(),
        merged_count(&train)
    ));
    wrote(log, &art.latents());
    wrote(log, &art.val_latents());
    Ok(())
}

fn fit_latents(cfg: &RunConfig, art: &Artifacts) -> Result<Latents> {
    let path = if cfg.latents_from_val()? {
        art.val_latents()
    } else {
        art.latents()
    };
    Latents::read_csv(&art.require(path, Command::Extract)?)
}

fn train_dnn_cmd(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let z = fit_latents(cfg, art)?;
    let model = train_dnn(&cfg.dnn()?, &z.data, &z.labels, derive(seed, "dnn"))?;
    model.save(&art.dnn())?;
    let cv = art.path("dnn_cv.csv");
    write_cv_report(&model, &cv)?;
    if !model.fold_accuracy().is_empty() {
        let mean = model.fold_accuracy().iter().sum::<f64>() / model.fold_accuracy().len() as f64;
        log.push(format!("mean fold accuracy {mean:.4}"));
    }
    wrote(log, &art.dnn());
    wrote(log, &cv);
    Ok(())
}

fn train_synxrf_cmd(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let z = fit_latents(cfg, art)?;
    let model = fit_synxrf(&z.data, &z.labels, &cfg.synxrf()?, derive(seed, "synxrf"))?;
    model.save(&art.synxrf(), seed)?;
    wrote(log, &art.synxrf());
    Ok(())
}

fn train_cbam_cmd(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let ae = load_ae(art)?;
    let train = merged_train(cfg, art, &ae)?;
    let val = art.dataset_dir(art.val(), Command::Balance)?;
    let model = train_cbam(&cfg.cbam()?, &train, &val, derive(seed, "cbam"))?;
    model.save(&art.cbam())?;
    let mut csv = String::from("epoch,train_loss,val_accuracy\n");
    for e in model.history() {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.train_loss, e.val_accuracy);
    }
    let hist = art.path("cbam_history.csv");
    std::fs::write(&hist, csv).map_err(|e| Error::io(&hist, e))?;
    log.push(format!(
        "best epoch {} with validation accuracy {:.4}",
        model.best_epoch(),
        model.best_val_accuracy().unwrap_or(0.0)
    ));
    wrote(log, &art.cbam());
    let maps = cfg.usize("cbam.attention_maps")?;
    if maps > 0 {
        let dir = art.path("attention");
        create(&dir)?;
        for r in val.records().iter().take(maps) {
            if let Some(map) = model.attention_map(r.pixels())? {
                let stem = r.source_id().replace(['/', '\\'], "__");
                write_attention_pgm(&map, &dir.join(format!("{stem}.pgm")))?;
                write_attention_csv(&map, &dir.join(format!("{stem}.csv")))?;
            }
        }
        wrote(log, &dir);
    }
    Ok(())
}

/// The fused model from the checkpoints under the configured output
/// directory.
pub fn load_model(cfg: &RunConfig) -> Result<CaveNet> {
    load_net(cfg, &Artifacts::new(cfg.out_dir()))
}

fn load_net(cfg: &RunConfig, art: &Artifacts) -> Result<CaveNet> {
    let ae = load_ae(art)?;
    let cbam = CbamBackbone::load(&art.require(art.cbam(), Command::TrainCbam)?)?;
    let dnn = DnnModel::load(&art.require(art.dnn(), Command::TrainDnn)?)?;
    let synxrf = SynXrf::load(&art.require(art.synxrf(), Command::TrainSynxrf)?)?;
    CaveNet::new(ae, Some(cbam), Some(dnn), Some(synxrf), cfg.weights()?)
}

fn ids(ds: &LabeledDataset) -> Vec<String> {
    ds.records().iter().map(|r| r.source_id().to_string()).collect()
}

fn fuse(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let net = load_net(cfg, art)?;
    let val = art.dataset_dir(art.val(), Command::Balance)?;
    let pred = net.predict(&val.images(), Execution::Parallel)?;
    let ids = ids(&val);
    for (name, probs) in MODEL_NAMES.iter().zip(pred.members.iter().chain([&pred.probs])) {
        let path = art.predictions(name);
        write_predictions(&ids, probs, &path)?;
        wrote(log, &path);
    }
    Ok(())
}

fn predict(cfg: &RunConfig, art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let net = load_net(cfg, art)?;
    let ds = match cfg.get("input") {
        "" => art.dataset_dir(art.val(), Command::Balance)?,
        dir if Path::new(dir).join("manifest.csv").exists() => load_dataset_dir(Path::new(dir))?,
        dir => ingest_directory(Path::new(dir), cfg.usize("side")?)?,
    };
    let pred = net.predict(&ds.images(), Execution::Parallel)?;
    let path = art.path("predictions.csv");
    write_predictions(&ids(&ds), &pred.probs, &path)?;
    wrote(log, &path);
    Ok(())
}

/// Validation labels and ids from the split manifest, without decoding
/// images.
fn val_truth(art: &Artifacts) -> Result<(Vec<String>, Vec<usize>)> {
    let rows = read_manifest(&art.require(art.val().join("manifest.csv"), Command::Balance)?)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let stem = Path::new(&r.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, r.label.index())
        })
        .unzip())
}

fn evaluate_cmd(art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let (truth_ids, labels) = val_truth(art)?;
    let mut found = false;
    for name in MODEL_NAMES {
        let path = art.predictions(name);
        if !path.exists() {
            continue;
        }
        found = true;
        let (ids, _, probs) = read_predictions(&path)?;
        if ids != truth_ids {
            return Err(Error::format(
                &path,
                "predictions",
                "rows do not match the validation manifest",
            ));
        }
        let r = evaluate(name, &probs, &labels)?;
        let (ppm, cm) = (
            art.path(&format!("heatmap_{name}.ppm")),
            art.path(&format!("cm_{name}.csv")),
        );
        export_heatmap(&r.confusion, &ppm, &cm)?;
        let pc = art.path(&format!("per_class_{name}.csv"));
        std::fs::write(&pc, per_class_csv(&r)).map_err(|e| Error::io(&pc, e))?;
        write_report_csv(std::slice::from_ref(&r), &art.evaluation(name))?;
        log.push(format!(
            "{name}: accuracy {:.4}, balanced {:.4}, macro AUC {:.4}",
            r.accuracy, r.balanced_accuracy, r.auc.macro_auc
        ));
        for p in [&cm, &ppm, &pc] {
            wrote(log, p);
        }
    }
    if !found {
        return Err(Error::MissingArtifact {
            path: art.predictions("cavenet"),
            producer: Command::Fuse.name(),
        });
    }
    Ok(())
}

fn report(art: &Artifacts, log: &mut Vec<String>) -> Result<()> {
    let mut out = format!("{REPORT_HEADER}\n");
    let mut rows = 0;
    for name in MODEL_NAMES {
        let path = art.evaluation(name);
        if !path.exists() {
            continue;
        }
        for (model, values) in read_report_csv(&path)? {
            let cells: Vec<String> = values.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{model},{}", cells.join(","));
            log.push(format!(
                "{model:<8} {}",
                values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
            ));
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::MissingArtifact {
            path: art.evaluation("cavenet"),
            producer: Command::Evaluate.name(),
        });
    }
    let path = art.report();
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    wrote(log, &path);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::parse(c.name()).unwrap(), c);
        }
        assert!(Command::parse("train").is_err());
    }

    #[test]
    fn missing_artifact_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.set("out", dir.path().to_str().unwrap()).unwrap();
        cfg.set("seed", "1").unwrap();
        let e = run(Command::TrainAe, &cfg).unwrap_err();
        assert!(
            matches!(
                e,
                Error::MissingArtifact {
                    producer: "balance",
                    ..
                }
            ),
            "{e}"
        );
        let e = run(Command::Report, &cfg).unwrap_err();
        assert!(
            matches!(
                e,
                Error::MissingArtifact {
                    producer: "evaluate",
                    ..
                }
            ),
            "{e}"
        );
    }
}
