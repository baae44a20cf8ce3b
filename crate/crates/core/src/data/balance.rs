//! Class rebalancing by augmentation, and stratified splitting.

use super::augment::{sample_pipeline, transform};
use super::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::rng::{fork, seeded, Rng, RngExt, SliceRandom};

/// Per-class counts after topping every class up to `floor`.
pub fn balanced_counts(counts: &[usize], floor: usize) -> Vec<usize> {
    counts.iter().map(|&c| c.max(floor)).collect()
}

/// Tops every class below `floor` up with augmented copies.
///
/// Originals are kept verbatim and in order. The copies for each class are
/// appended in class order; copy `j` of a class with `n` originals is made
/// from original `j mod n`, so every original is used once before any is
/// reused. Each copy runs its own random pipeline from a stream forked per
/// copy, which makes the output independent of evaluation order. Copy ids
/// are `<source id>_aug<round>`.
pub fn balance_dataset(ds: &LabeledDataset, floor: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    let classes = ds.num_classes();
    ds.require_nonempty("cannot balance an empty dataset")?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, r) in ds.records().iter().enumerate() {
        by_class[r.label().index()].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyDataset(format!(
            "class {} has no records to augment",
            super::CLASS_NAMES[c]
        )));
    }
    let base = rng.random::<u64>();
    let mut out = ds.clone();
    let mut copy = 0u64;
    for members in &by_class {
        let n = members.len();
        for j in 0..floor.saturating_sub(n) {
            let src = &ds.records()[members[j % n]];
            let mut r = fork(base, copy);
            copy += 1;
            let mut pixels = src.pixels().clone();
            for op in sample_pipeline(&mut r) {
                pixels = transform(&pixels, &op, &mut r)?;
            }
            out.push(src.derive(
                pixels,
                Provenance::Augmented,
                format!("{}_aug{}", src.source_id(), j / n),
            )?)?;
        }
    }
    Ok(out)
}

/// Splits each class so that `round(n · val_fraction)` of its records go to
/// validation, keeping at least one record of every class for training.
/// Both halves keep the original record order.
pub fn stratified_split(ds: &LabeledDataset, val_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut rng = seeded(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, r) in ds.records().iter().enumerate() {
        by_class[r.label().index()].push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let k = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_counts, ClassLabel, ImageRecord};
    use crate::tensor::Tensor;
    use std::collections::HashSet;

    #[test]
    fn tops_up_to_floor() {
        let ds = generate_synthetic_counts(&[5, 10, 20], 16, 1).unwrap();
        let out = balance_dataset(&ds, 10, &mut seeded(9)).unwrap();
        assert_eq!(out.counts()[..3], [10, 10, 20]);
        assert_eq!(&out.records()[..35], ds.records());
        let extra = &out.records()[35..];
        assert!(extra
            .iter()
            .all(|r| r.provenance() == Provenance::Augmented && r.label().index() == 0));
        let ids: HashSet<&str> = out.records().iter().map(|r| r.source_id()).collect();
        assert_eq!(ids.len(), out.len());
        assert_eq!(extra[0].source_id(), "c0_00000_aug0");
        assert_eq!(extra[4].source_id(), "c0_00004_aug0");
    }

    #[test]
    fn floor_zero_and_low_floor_are_identity() {
        let ds = generate_synthetic_counts(&[3, 4], 16, 2).unwrap();
        assert_eq!(balance_dataset(&ds, 0, &mut seeded(1)).unwrap(), ds);
        assert_eq!(balance_dataset(&ds, 3, &mut seeded(1)).unwrap(), ds);
    }

    #[test]
    fn round_robin_cycles_sources() {
        let ds = generate_synthetic_counts(&[2], 16, 3).unwrap();
        let out = balance_dataset(&ds, 7, &mut seeded(1)).unwrap();
        let ids: Vec<&str> = out.records()[2..].iter().map(|r| r.source_id()).collect();
        assert_eq!(
            ids,
            [
                "c0_00000_aug0",
                "c0_00001_aug0",
                "c0_00000_aug1",
                "c0_00001_aug1",
                "c0_00000_aug2"
            ]
        );
    }

    #[test]
    fn empty_class_is_an_error() {
        let mut ds = LabeledDataset::new();
        let px = Tensor::full(&[3, 4, 4], 0.5);
        ds.push(ImageRecord::new(px, ClassLabel::new(2).unwrap(), Provenance::Original, "a").unwrap())
            .unwrap();
        assert!(
            matches!(balance_dataset(&ds, 3, &mut seeded(0)), Err(Error::EmptyDataset(m)) if m.contains("Angioectasia"))
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = generate_synthetic_counts(&[2, 6], 16, 4).unwrap();
        let a = balance_dataset(&ds, 6, &mut seeded(5)).unwrap();
        let b = balance_dataset(&ds, 6, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_stratified() {
        let ds = generate_synthetic_counts(&[10, 5, 1], 16, 5).unwrap();
        let (train, val) = stratified_split(&ds, 0.2, 3).unwrap();
        assert_eq!(val.counts()[..3], [2, 1, 0]);
        assert_eq!(train.counts()[..3], [8, 4, 1]);
        let ids: HashSet<&str> = train
            .records()
            .iter()
            .chain(val.records())
            .map(|r| r.source_id())
            .collect();
        assert_eq!(ids.len(), 16);
        assert!(stratified_split(&ds, 1.0, 0).is_err());
    }
}
