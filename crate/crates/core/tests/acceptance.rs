//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on
//! any failure. Built with `harness = false`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use cavenet::autoencoder::Autoencoder;
use cavenet::cbam::CbamBackbone;
use cavenet::cli::{run, Command};
use cavenet::config::RunConfig;
use cavenet::data::{balance_dataset, balanced_counts, generate_synthetic, stratified_split, LabeledDataset};
use cavenet::dnn::DnnModel;
use cavenet::fusion::{fuse, train_all, CaveNet, Execution};
use cavenet::metrics::{binary_auc, combined_metric};
use cavenet::rng::{derive, seeded};
use cavenet::synxrf::{combine, knn_fit, rf_fit, ForestConfig, SynXrf, Voting};
use cavenet::tensor::Tensor;
use cavenet::vote::argmax_rows;
use common::attention::ordering_report;
use common::fixtures::*;
use common::gradcheck::{cbam_refine_case, tensor_cases, worst_over, TOLERANCE};
use common::oracles;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn accuracy(p: &Tensor, y: &[usize]) -> f64 {
    argmax_rows(p).iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut cases = tensor_cases();
    cases.push(cbam_refine_case());
    let mut worst: (f64, String) = (0.0, String::new());
    for (k, case) in cases.iter().enumerate() {
        let err = worst_over(20, 100 + k as u64, &case.make, &*case.op);
        ensure(err <= TOLERANCE, format!("{}: relative error {err:.3e}", case.name))?;
        if err > worst.0 {
            worst = (err, case.name.to_string());
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), format!("took {took:.1?}"))?;
    Ok(format!(
        "{} ops x 20 instances, worst {:.2e} ({}), {took:.1?}",
        cases.len(),
        worst.0,
        worst.1
    ))
}

fn balanced_corpus() -> Check {
    ensure(
        balanced_counts(&CHALLENGE_TRAIN, CHALLENGE_FLOOR) == CHALLENGE_BALANCED,
        "planned counts differ",
    )?;
    let ds = tiny_dataset(&CHALLENGE_TRAIN, 4);
    let out = balance_dataset(&ds, CHALLENGE_FLOOR, &mut seeded(1)).map_err(|e| e.to_string())?;
    ensure(
        out.counts() == &CHALLENGE_BALANCED,
        format!("counts {:?}", out.counts()),
    )?;
    ensure(out.len() == CHALLENGE_BALANCED_TOTAL, format!("total {}", out.len()))?;
    Ok(format!("{} originals -> {} images", ds.len(), out.len()))
}

fn results_table() -> Check {
    let mut worst = 0.0f64;
    for (auc, acc, want) in RESULTS_ROWS {
        let got = combined_metric(auc, acc);
        worst = worst.max((got - want).abs());
        ensure(
            (got - want).abs() <= RESULTS_TOLERANCE,
            format!("({auc}, {acc}) -> {got}, expected {want}"),
        )?;
    }
    Ok(format!("{} rows, worst deviation {worst:.1e}", RESULTS_ROWS.len()))
}

fn oracle_agreement() -> Check {
    for k in [1, 3, 7] {
        let (store, labels) = random_store(200, 3, k as u64);
        let model = knn_fit(&Tensor::from_rows(&store).unwrap(), &labels, k).map_err(|e| e.to_string())?;
        let (queries, _) = random_store(100, 3, 100 + k as u64);
        let p = model.predict_proba(&Tensor::from_rows(&queries).unwrap()).unwrap();
        for (i, q) in queries.iter().enumerate() {
            ensure(
                model.neighbors(q) == oracles::knn_neighbors(&store, q, k),
                format!("knn k={k} query {i}"),
            )?;
            ensure(
                p.row(i) == oracles::knn_proba(&store, &labels, 4, q, k).as_slice(),
                format!("knn k={k} proba {i}"),
            )?;
        }
    }
    for seed in 0..50 {
        let (scores, positive) = binary_instance(20 + seed as usize, seed);
        let auc = binary_auc(&scores, &positive).ok_or("auc undefined")?;
        ensure(
            auc == oracles::auc_pairs(&scores, &positive),
            format!("auc instance {seed}"),
        )?;
    }
    for seed in 0..3 {
        let (x, y) = blobs(50, 3, 2.0, 4 + seed);
        let config = ForestConfig {
            trees: 10,
            ..ForestConfig::default()
        };
        let rf = rf_fit(&x, &y, &config, 9 + seed).map_err(|e| e.to_string())?;
        let p = rf.predict_proba(&x).unwrap();
        for i in 0..50 {
            let mut expect = [0.0; 3];
            for t in rf.trees() {
                let tab = t.to_table();
                let rows: Vec<Vec<f64>> = (0..tab.shape()[0]).map(|r| tab.row(r).to_vec()).collect();
                expect[oracles::table_vote(&rows, x.row(i))] += 1.0;
            }
            let expect: Vec<f64> = expect.iter().map(|v| v / 10.0).collect();
            ensure(p.row(i) == expect.as_slice(), format!("forest {seed} row {i}"))?;
        }
    }
    Ok("knn 3x100 queries, auc 50 instances, forest 3x50 rows".into())
}

fn voting_algebra() -> Check {
    let (members, ks) = vote_grid(4);
    let fused = combine(&members, Voting::Soft).map_err(|e| e.to_string())?;
    ensure(argmax_rows(&fused) == vote_oracle(&ks, &[1; 4]), "ensemble grid")?;
    let (members, ks) = vote_grid(3);
    for w in FUSION_WEIGHTS {
        let wf: Vec<f64> = w.iter().map(|&v| f64::from(v)).collect();
        let fused = fuse(&members, &wf).map_err(|e| e.to_string())?;
        ensure(
            argmax_rows(&fused) == vote_oracle(&ks, &w),
            format!("fusion grid {w:?}"),
        )?;
        let rev: Vec<Tensor> = members.iter().rev().cloned().collect();
        let wr: Vec<f64> = wf.iter().rev().copied().collect();
        ensure(
            fuse(&rev, &wr).unwrap() == fused,
            format!("member order changed bits under {w:?}"),
        )?;
    }
    Ok(format!("{} + 4x{} grid rows", 11usize.pow(4), 11usize.pow(3)))
}

fn learning() -> Check {
    let start = Instant::now();
    let seed = 2024;
    let mut cfg = RunConfig::default();
    cfg.set("seed", &seed.to_string()).unwrap();
    let pipeline = cfg.pipeline().map_err(|e| e.to_string())?;
    let ds = generate_synthetic(4, 200, 32, derive(seed, "synthetic")).map_err(|e| e.to_string())?;
    let (train, val) = stratified_split(&ds, 0.2, derive(seed, "split")).map_err(|e| e.to_string())?;
    let out = train_all(&pipeline, &train, &val, seed).map_err(|e| e.to_string())?;

    let ae_loss = out.net.autoencoder.reconstruction_loss(&val).unwrap();
    let baseline = mean_image_mse(&train, &val);
    ensure(
        baseline >= 2.0 * ae_loss,
        format!("autoencoder {ae_loss:.4} vs mean-image {baseline:.4}"),
    )?;

    let cbam = out.net.cbam.as_ref().unwrap();
    let best = cbam
        .history()
        .iter()
        .take(30)
        .map(|h| h.val_accuracy)
        .fold(0.0, f64::max);
    ensure(best > 0.8, format!("cbam best accuracy {best:.3} in 30 epochs"))?;

    let dnn = out.reports[1].accuracy;
    ensure(dnn > 0.55, format!("dnn accuracy {dnn:.3}"))?;
    let labels = &out.val_latents.labels;
    let members = out
        .net
        .synxrf
        .as_ref()
        .unwrap()
        .member_probas(&out.val_latents.data)
        .unwrap();
    let mut member_acc = Vec::new();
    for (name, p) in ["svm", "rf", "knn", "gbt"].iter().zip(&members) {
        let acc = accuracy(p, labels);
        ensure(acc > 0.55, format!("{name} accuracy {acc:.3}"))?;
        member_acc.push(format!("{name} {acc:.3}"));
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(15 * 60), format!("took {took:.0?}"))?;
    Ok(format!(
        "ae {ae_loss:.4} vs {baseline:.4}, cbam {best:.3} at epoch {}, dnn {dnn:.3}, {}, {took:.0?}",
        cbam.best_epoch(),
        member_acc.join(", ")
    ))
}

/// Per-pixel MSE of predicting every validation image by the training mean.
fn mean_image_mse(train: &LabeledDataset, val: &LabeledDataset) -> f64 {
    let n = train.records()[0].pixels().len();
    let mut mean = vec![0.0; n];
    for r in train.records() {
        for (m, v) in mean.iter_mut().zip(r.pixels().data()) {
            *m += v / train.len() as f64;
        }
    }
    let total: f64 = val
        .records()
        .iter()
        .map(|r| {
            r.pixels()
                .data()
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m).powi(2))
                .sum::<f64>()
                / n as f64
        })
        .sum();
    total / val.len() as f64
}

const SMALL_RUN: &str = "seed = 31
classes = 3
per_class = 24
side = 32
ae.epochs = 2
dnn.hidden = 32,16
dnn.epochs = 8
dnn.folds = 2
svm.epochs = 100
rf.trees = 10
gbt.rounds = 8
cbam.widths = 8,16
cbam.blocks = 1
cbam.epochs = 2
";

fn end_to_end(out: &Path) -> Result<(), String> {
    let mut cfg = RunConfig::parse(SMALL_RUN).map_err(|e| e.to_string())?;
    cfg.set("out", out.to_str().unwrap()).unwrap();
    for cmd in Command::ALL {
        if cmd == Command::Predict {
            continue;
        }
        run(cmd, &cfg).map_err(|e| format!("{}: {e}", cmd.name()))?;
    }
    Ok(())
}

fn determinism() -> Check {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        end_to_end(d.path())?;
    }
    let mut compared = 0;
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n == "report.csv" || n.starts_with("heatmap_") || n.ends_with(".ckpt"))
        .collect();
    names.sort();
    for name in &names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, format!("{name} differs between runs"))?;
        compared += 1;
    }
    ensure(compared >= 9, format!("only {compared} artifacts compared"))?;

    let root = dirs[0].path();
    let load = || -> cavenet::Result<CaveNet> {
        CaveNet::new(
            Autoencoder::load(&root.join("autoencoder.ckpt"))?,
            Some(CbamBackbone::load(&root.join("cbam.ckpt"))?),
            Some(DnnModel::load(&root.join("dnn.ckpt"))?),
            Some(SynXrf::load(&root.join("synxrf.ckpt"))?),
            [1.0; 3],
        )
    };
    let net = load().map_err(|e| e.to_string())?;
    let val = cavenet::data::load_dataset_dir(&root.join("val")).unwrap();
    let imgs = val.images();
    let seq = net.predict(&imgs, Execution::Sequential).unwrap();
    let par = net.predict(&imgs, Execution::Parallel).unwrap();
    ensure(seq == par, "parallel and sequential fusion differ")?;
    Ok(format!(
        "{compared} artifacts identical across runs, fusion modes agree on {} images",
        val.len()
    ))
}

fn attention_order() -> Check {
    let (gap, spatial_first, channel_first) = ordering_report();
    ensure(gap > 0.05, format!("orders differ by only {gap:.3}"))?;
    ensure(
        spatial_first < 1e-12,
        format!("spatial-first oracle off by {spatial_first:.2e}"),
    )?;
    ensure(
        channel_first > 0.05,
        format!("matches channel-first within {channel_first:.3}"),
    )?;
    Ok(format!(
        "orders differ by {gap:.3}, implementation matches spatial-first to {spatial_first:.1e}"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradients", gradients),
        ("balanced-corpus", balanced_corpus),
        ("results-table", results_table),
        ("oracles", oracle_agreement),
        ("voting-algebra", voting_algebra),
        ("learning", learning),
        ("determinism", determinism),
        ("attention-order", attention_order),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
