//! Confusion matrices, per-class rates, one-vs-rest AUC and report export.
//!
//! A ratio with a zero denominator is reported as 0 and flagged undefined;
//! macro averages run over the defined values only.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vote::argmax_rows;

/// `counts[t * C + p]` samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![0; classes * classes];
    for (&t, &p) in truth.iter().zip(pred) {
        for label in [t, p] {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn support(&self, class: usize) -> u64 {
        self.row(class).iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// CSV of raw counts: a `true,p0..` header, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true");
        for p in 0..self.classes {
            let _ = write!(out, ",p{p}");
        }
        out.push('\n');
        for t in 0..self.classes {
            let _ = write!(out, "{t}");
            for v in self.row(t) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |d: String| Error::format(path, "confusion matrix", d);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let classes = header.split(',').count() - 1;
        let mut rows = Vec::with_capacity(classes);
        for (t, line) in lines.filter(|l| !l.is_empty()).enumerate() {
            let mut cells = line.split(',');
            if cells.next() != Some(t.to_string().as_str()) {
                return Err(bad(format!("row {t} is out of order")));
            }
            let row = cells
                .map(|c| c.parse().map_err(|_| bad(format!("bad count `{c}`"))))
                .collect::<Result<Vec<u64>>>()?;
            rows.push(row);
        }
        if rows.len() != classes {
            return Err(bad(format!("{} rows for {classes} columns", rows.len())));
        }
        Self::from_rows(&rows).map_err(|e| bad(e.to_string()))
    }
}

/// A rate whose denominator may be zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub defined: bool,
}

impl Ratio {
    pub fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 0.0,
                defined: false,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                defined: true,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
    pub sensitivity: Ratio,
    pub specificity: Ratio,
    pub precision: Ratio,
    pub f1: Ratio,
}

impl ClassMetrics {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let total = cm.total();
    (0..cm.classes())
        .map(|j| {
            let tp = cm.get(j, j);
            let fn_ = cm.support(j) - tp;
            let fp = cm.predicted(j) - tp;
            let tn = total - tp - fn_ - fp;
            let sensitivity = Ratio::of(tp, tp + fn_);
            let precision = Ratio::of(tp, tp + fp);
            // 2PR/(P+R) = 2TP/(2TP+FP+FN), defined whenever either side is.
            let f1 = Ratio::of(2 * tp, 2 * tp + fp + fn_);
            ClassMetrics {
                tp,
                fn_,
                fp,
                tn,
                sensitivity,
                specificity: Ratio::of(tn, tn + fp),
                precision,
                f1,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
}

fn mean_defined(values: impl Iterator<Item = Ratio>) -> f64 {
    let (sum, n) = values
        .filter(|r| r.defined)
        .fold((0.0, 0), |(s, n), r| (s + r.value, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn macro_metrics(per_class: &[ClassMetrics]) -> MacroMetrics {
    MacroMetrics {
        sensitivity: mean_defined(per_class.iter().map(|m| m.sensitivity)),
        specificity: mean_defined(per_class.iter().map(|m| m.specificity)),
        precision: mean_defined(per_class.iter().map(|m| m.precision)),
        f1: mean_defined(per_class.iter().map(|m| m.f1)),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::EmptyDataset(" in confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// Mean sensitivity over classes with nonzero support.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::EmptyDataset(" in confusion matrix".into()));
    }
    Ok(mean_defined(per_class_metrics(cm).iter().map(|m| m.sensitivity)))
}

/// Mann–Whitney AUC with midranks for ties; `None` without both a positive
/// and a negative.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucResult {
    /// Mean over the evaluable classes.
    pub macro_auc: f64,
    /// One-vs-rest AUC per class; `None` marks a skipped class.
    pub per_class: Vec<Option<f64>>,
}

pub fn macro_auc(probs: &Tensor, labels: &[usize]) -> Result<AucResult> {
    if probs.shape().len() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::Shape {
            op: "macro_auc",
            detail: format!("probabilities {:?} with {} labels", probs.shape(), labels.len()),
        });
    }
    let (n, c) = (labels.len(), probs.shape()[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|j| {
            let scores: Vec<f64> = (0..n).map(|i| probs.row(i)[j]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == j).collect();
            binary_auc(&scores, &positive)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has both positive and negative samples".into(),
        ));
    }
    Ok(AucResult {
        macro_auc: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

/// Mean of macro AUC and balanced accuracy.
pub fn combined_metric(auc: f64, balanced_accuracy: f64) -> f64 {
    (auc + balanced_accuracy) / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: MacroMetrics,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub auc: AucResult,
    pub combined: f64,
}

/// Full report for probability rows against true labels; predictions are
/// the row argmax.
pub fn evaluate(model: &str, probs: &Tensor, labels: &[usize]) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!(" for evaluating {model}")));
    }
    let auc = macro_auc(probs, labels)?;
    let cm = confusion(labels, &argmax_rows(probs), probs.shape()[1])?;
    let per_class = per_class_metrics(&cm);
    let balanced = balanced_accuracy(&cm)?;
    Ok(MetricsReport {
        model: model.to_string(),
        macro_avg: macro_metrics(&per_class),
        accuracy: accuracy(&cm)?,
        balanced_accuracy: balanced,
        combined: combined_metric(auc.macro_auc, balanced),
        auc,
        per_class,
        confusion: cm,
    })
}

pub const REPORT_HEADER: &str =
    "model,avg_acc,avg_specificity,avg_sensitivity,avg_f1,avg_precision,balanced_acc,macro_auc,combined";

/// One row per model. `avg_acc` is overall accuracy; the balanced figure
/// that enters the combined metric has its own column.
pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model,
            r.accuracy,
            r.macro_avg.specificity,
            r.macro_avg.sensitivity,
            r.macro_avg.f1,
            r.macro_avg.precision,
            r.balanced_accuracy,
            r.auc.macro_auc,
            r.combined
        );
    }
    out
}

pub fn write_report_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    std::fs::write(path, report_csv(reports)).map_err(|e| Error::io(path, e))
}

/// A parsed report row: model name and the numeric columns in header order.
pub type ReportRow = (String, Vec<f64>);

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: String| Error::format(path, "report", d);
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let mut cells = line.split(',');
            let model = cells.next().unwrap_or_default().to_string();
            let values = cells
                .map(|c| c.parse().map_err(|_| bad(format!("bad value `{c}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != REPORT_HEADER.split(',').count() - 1 {
                return Err(bad(format!("row `{model}` has {} values", values.len())));
            }
            Ok((model, values))
        })
        .collect()
}

/// Per-class table with undefined flags (`1` = the ratio had a zero
/// denominator).
pub fn per_class_csv(report: &MetricsReport) -> String {
    let mut out = String::from(
        "class,support,tp,fn,fp,tn,sensitivity,specificity,precision,f1,\
         sensitivity_undefined,specificity_undefined,precision_undefined,f1_undefined,auc\n",
    );
    for (j, m) in report.per_class.iter().enumerate() {
        let flag = |r: Ratio| u8::from(!r.defined);
        let auc = report.auc.per_class[j].map_or(String::new(), |a| a.to_string());
        let _ = writeln!(
            out,
            "{j},{},{},{},{},{},{},{},{},{},{},{},{},{},{auc}",
            m.support(),
            m.tp,
            m.fn_,
            m.fp,
            m.tn,
            m.sensitivity.value,
            m.specificity.value,
            m.precision.value,
            m.f1.value,
            flag(m.sensitivity),
            flag(m.specificity),
            flag(m.precision),
            flag(m.f1)
        );
    }
    out
}

/// Pixels per confusion-matrix cell in the heatmap.
pub const HEATMAP_CELL: usize = 16;

/// Row-normalized intensities in `[0,1]`; all-zero rows stay zero.
pub fn row_normalized(cm: &ConfusionMatrix) -> Vec<f64> {
    let c = cm.classes();
    let mut out = vec![0.0; c * c];
    for t in 0..c {
        let s = cm.support(t);
        if s > 0 {
            for p in 0..c {
                out[t * c + p] = cm.get(t, p) as f64 / s as f64;
            }
        }
    }
    out
}

/// Binary PPM of the row-normalized matrix, one grey square per cell
/// (true class down, predicted class across, brighter = larger share).
pub fn heatmap_ppm(cm: &ConfusionMatrix) -> Vec<u8> {
    let c = cm.classes();
    let side = c * HEATMAP_CELL;
    let norm = row_normalized(cm);
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let v = (norm[(y / HEATMAP_CELL) * c + x / HEATMAP_CELL] * 255.0).round() as u8;
            out.extend([v, v, v]);
        }
    }
    out
}

/// Writes `<stem>.ppm` and the raw-count `<stem>.csv`.
pub fn export_heatmap(cm: &ConfusionMatrix, ppm_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(ppm_path, heatmap_ppm(cm)).map_err(|e| Error::io(ppm_path, e))?;
    cm.write_csv(csv_path)
}
