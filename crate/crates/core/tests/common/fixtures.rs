//! Inputs shared by the integration suites and the acceptance runner.

use cavenet::data::{ClassLabel, ImageRecord, LabeledDataset, Provenance};
use cavenet::rng::{seeded, RngExt};
use cavenet::tensor::Tensor;

/// Training counts per class, alphabetical, from the challenge release.
pub const CHALLENGE_TRAIN: [usize; 10] = [1154, 834, 2694, 691, 792, 796, 28663, 1162, 663, 158];
pub const CHALLENGE_BALANCED: [usize; 10] = [7500, 7500, 7500, 7500, 7500, 7500, 28663, 7500, 7500, 7500];
pub const CHALLENGE_FLOOR: usize = 7500;
pub const CHALLENGE_BALANCED_TOTAL: usize = 96_163;

/// `(AUC, ACC, combined)` rows of the published comparison.
pub const RESULTS_ROWS: [(f64, f64, f64); 7] = [
    (0.5255, 0.1445, 0.3349),
    (0.5341, 0.1313, 0.3327),
    (0.5422, 0.1773, 0.3597),
    (0.5485, 0.1140, 0.3312),
    (0.5250, 0.1284, 0.3267),
    (0.5232, 0.1469, 0.33505),
    (0.7271482, 0.3359341, 0.5315),
];
pub const RESULTS_TOLERANCE: f64 = 5e-4;

/// Constant-valued images, `counts[c]` of class `c`.
pub fn tiny_dataset(counts: &[usize], side: usize) -> LabeledDataset {
    let mut ds = LabeledDataset::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let v = ((c * 7 + i) % 11) as f64 / 10.0;
            let img = Tensor::full(&[3, side, side], v);
            ds.push(
                ImageRecord::new(
                    img,
                    ClassLabel::new(c).unwrap(),
                    Provenance::Original,
                    format!("c{c}_{i}"),
                )
                .unwrap(),
            )
            .unwrap();
        }
    }
    ds
}

/// Scores on a coarse grid so ties are common.
pub fn binary_instance(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = seeded(seed);
    let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    positive[0] = true;
    positive[1] = false;
    let scores = positive
        .iter()
        .map(|&p| rng.random_range(0..8) as f64 / 8.0 + if p { 0.1 } else { 0.0 })
        .collect();
    (scores, positive)
}

/// Noisy points around `classes` centres on a circle of radius 3.
pub fn blobs(n: usize, classes: usize, spread: f64, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = seeded(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % classes;
        let angle = c as f64 * std::f64::consts::TAU / classes as f64;
        rows.push(vec![
            3.0 * angle.cos() + spread * rng.random_range(-1.0..1.0),
            3.0 * angle.sin() + spread * rng.random_range(-1.0..1.0),
        ]);
        labels.push(c);
    }
    (Tensor::from_rows(&rows).unwrap(), labels)
}

pub fn random_store(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seeded(seed);
    // Coarse grid values make exact distance ties common.
    let rows = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0..5) as f64).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..4)).collect();
    (rows, labels)
}

/// Every assignment of grid rows `(k/10, (10-k)/10)` to `members`, as one
/// `[11^members, 2]` tensor per member, plus the integer `k` per member.
pub fn vote_grid(members: usize) -> (Vec<Tensor>, Vec<Vec<u32>>) {
    let n = 11usize.pow(members as u32);
    let ks: Vec<Vec<u32>> = (0..n)
        .map(|mut i| {
            (0..members)
                .map(|_| {
                    let k = (i % 11) as u32;
                    i /= 11;
                    k
                })
                .collect()
        })
        .collect();
    let tensors = (0..members)
        .map(|m| {
            let data: Vec<f64> = ks
                .iter()
                .flat_map(|k| [f64::from(k[m]) / 10.0, f64::from(10 - k[m]) / 10.0])
                .collect();
            Tensor::new(vec![n, 2], data).unwrap()
        })
        .collect();
    (tensors, ks)
}

/// Integer oracle: class 0 wins when its weighted tally is at least class
/// 1's, so exact ties go to the lower class.
pub fn vote_oracle(ks: &[Vec<u32>], weights: &[u32]) -> Vec<usize> {
    ks.iter()
        .map(|k| {
            let zero: u32 = k.iter().zip(weights).map(|(k, w)| k * w).sum();
            let one: u32 = k.iter().zip(weights).map(|(k, w)| (10 - k) * w).sum();
            usize::from(zero < one)
        })
        .collect()
}

/// Weight vectors the fusion grid is checked under.
pub const FUSION_WEIGHTS: [[u32; 3]; 4] = [[1, 1, 1], [1, 2, 3], [5, 0, 2], [0, 0, 4]];
