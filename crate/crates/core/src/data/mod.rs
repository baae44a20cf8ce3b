//! Labeled image datasets: the class taxonomy, ingestion, synthetic corpora,
//! augmentation and class rebalancing.

mod augment;
mod balance;
mod image_io;
mod synthetic;

use std::fmt;
use std::io::Write;
use std::path::Path;

pub use augment::{apply_op, sample_pipeline, AugmentOp, Variant, BLUR_KERNEL, NOISE_SIGMA};
pub use balance::{balance_dataset, balanced_counts, stratified_split};
pub use image_io::{
    center_crop_square, ingest_directory, load_dataset_dir, read_image, read_ppm, resize_nearest, write_dataset_dir,
    write_ppm,
};
pub use synthetic::{generate_synthetic, generate_synthetic_counts};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 10;

/// Class names in index order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "Angioectasia",
    "Bleeding",
    "Erosion",
    "Erythema",
    "Foreign Body",
    "Lymphangiectasia",
    "Normal",
    "Polyp",
    "Ulcer",
    "Worms",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_CLASSES {
            Ok(Self(index as u8))
        } else {
            Err(Error::LabelOutOfRange {
                label: index,
                classes: NUM_CLASSES,
            })
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    /// Case-insensitive lookup that also accepts `_` or `-` for the space in
    /// "Foreign Body" and the singular "Worm".
    pub fn from_name(name: &str) -> Result<Self> {
        let key = normalize(name);
        if key == "worm" {
            return Ok(Self(9));
        }
        CLASS_NAMES
            .iter()
            .position(|n| normalize(n) == key)
            .map(|i| Self(i as u8))
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .flat_map(char::to_lowercase)
        .collect()
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    Augmented,
    Reconstructed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
            Provenance::Reconstructed => "reconstructed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Provenance::Original),
            "augmented" => Ok(Provenance::Augmented),
            "reconstructed" => Ok(Provenance::Reconstructed),
            other => Err(Error::InvalidArgument(format!("unknown provenance `{other}`"))),
        }
    }
}

/// One RGB image `[3,H,W]` with values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pixels: Tensor,
    label: ClassLabel,
    provenance: Provenance,
    source_id: String,
}

impl ImageRecord {
    /// Validates the layout and clamps pixels into `[0,1]`.
    pub fn new(
        pixels: Tensor,
        label: ClassLabel,
        provenance: Provenance,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if pixels.shape().len() != 3 || pixels.shape()[0] != 3 {
            return Err(Error::Shape {
                op: "image_record",
                detail: format!("expected [3,H,W], got {:?}", pixels.shape()),
            });
        }
        if !pixels.is_finite() {
            return Err(Error::NonFinite { op: "image_record" });
        }
        let mut pixels = pixels;
        pixels.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self {
            pixels,
            label,
            provenance,
            source_id: source_id.into(),
        })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn label(&self) -> ClassLabel {
        self.label
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// A new record derived from this one.
    pub fn derive(&self, pixels: Tensor, provenance: Provenance, source_id: impl Into<String>) -> Result<Self> {
        Self::new(pixels, self.label, provenance, source_id)
    }
}

/// Ordered records sharing one pixel size, with a class-count table that is
/// kept equal to the recount of the records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    records: Vec<ImageRecord>,
    counts: [usize; NUM_CLASSES],
}

impl LabeledDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<ImageRecord>) -> Result<Self> {
        let mut ds = Self::new();
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, record: ImageRecord) -> Result<()> {
        if let Some(first) = self.records.first() {
            if first.pixels.shape() != record.pixels.shape() {
                return Err(Error::ShapeMismatch {
                    op: "dataset_push",
                    lhs: first.pixels.shape().to_vec(),
                    rhs: record.pixels.shape().to_vec(),
                });
            }
        }
        self.counts[record.label.index()] += 1;
        self.records.push(record);
        Ok(())
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = ImageRecord>) -> Result<()> {
        for r in records {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> &[usize; NUM_CLASSES] {
        &self.counts
    }

    /// One past the highest label present; the class count models are sized by.
    pub fn num_classes(&self) -> usize {
        self.counts.iter().rposition(|&c| c > 0).map_or(0, |i| i + 1)
    }

    /// `(height, width)` shared by every record.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.records.first().map(|r| (r.height(), r.width()))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label.index()).collect()
    }

    pub fn images(&self) -> Vec<&Tensor> {
        self.records.iter().map(|r| &r.pixels).collect()
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut ds = Self::new();
        for &i in indices {
            let r = self.records[i].clone();
            ds.counts[r.label.index()] += 1;
            ds.records.push(r);
        }
        ds
    }

    pub fn require_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset(what.to_string()))
        } else {
            Ok(())
        }
    }

    /// CSV with columns `path,label,provenance`; `path` is the source id.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut out = String::from("path,label,provenance\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.source_id,
                r.label.name(),
                r.provenance.as_str()
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: ClassLabel,
    pub provenance: Provenance,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("path,label,provenance") {
        return Err(Error::format(
            path,
            "manifest",
            "missing `path,label,provenance` header",
        ));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            // The label may not contain commas, but the path might.
            let mut parts = line.rsplitn(3, ',');
            let (Some(prov), Some(label), Some(p)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::format(path, "manifest", format!("malformed row `{line}`")));
            };
            Ok(ManifestEntry {
                path: p.to_string(),
                label: ClassLabel::from_name(label)?,
                provenance: Provenance::parse(prov)?,
            })
        })
        .collect()
}
