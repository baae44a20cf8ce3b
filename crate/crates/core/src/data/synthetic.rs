//! Procedural stand-in corpus.
//!
//! Each class owns a spatial layout (a centred disk, a pair of disks, bars,
//! a ring, ...). Every image draws its own background and foreground colours
//! with a random polarity, a jittered position and scale, a smooth
//! background gradient and pixel noise. Because polarity and colour are
//! random, the class-mean images are nearly flat and the raw pixels carry
//! no linear class signal; the layout is only visible to spatial features.

use rand_distr::{Distribution, Normal};

use super::{ClassLabel, ImageRecord, LabeledDataset, Provenance, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{fork, Rng, RngExt};
use crate::tensor::Tensor;

const PIXEL_NOISE: f64 = 0.03;

/// Signed distance to the class layout in normalized units, positive inside.
/// `(u, v)` spans about `[-1, 1]²` across the image.
fn layout(class: usize, u: f64, v: f64) -> f64 {
    let disk = |cx: f64, cy: f64, r: f64| r - ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
    let bars = |t: f64| {
        let period = 0.6;
        0.14 - (t - period * (t / period).round()).abs()
    };
    match class {
        0 => disk(0.0, 0.0, 0.45),
        1 => disk(-0.45, 0.0, 0.27).max(disk(0.45, 0.0, 0.27)),
        2 => disk(0.0, -0.45, 0.27).max(disk(0.0, 0.45, 0.27)),
        3 => [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
            .iter()
            .map(|&(x, y)| disk(x, y, 0.22))
            .fold(f64::NEG_INFINITY, f64::max),
        4 => 0.11 - ((u * u + v * v).sqrt() - 0.5).abs(),
        5 => bars(v),
        6 => bars(u),
        7 => (0.15 - u.abs())
            .min(0.75 - v.abs())
            .max((0.15 - v.abs()).min(0.75 - u.abs())),
        8 => {
            let cell = 0.5;
            let (a, b) = (u / cell, v / cell);
            let parity = (a.floor() as i64 + b.floor() as i64).rem_euclid(2) == 0;
            let edge = (a - a.round()).abs().min((b - b.round()).abs()) * cell;
            if parity {
                edge
            } else {
                -edge
            }
        }
        _ => bars((u + v) * std::f64::consts::FRAC_1_SQRT_2),
    }
}

fn render(class: usize, side: usize, rng: &mut Rng) -> Tensor {
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let polarity = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let fg: [f64; 3] = std::array::from_fn(|c| (bg[c] + polarity * rng.random_range(0.25..0.45)).clamp(0.0, 1.0));
    let (gx, gy) = (rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));
    let (ox, oy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let scale = rng.random_range(0.85..1.15);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive sigma");

    let half = side as f64 / 2.0;
    let plane = side * side;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..side {
        for x in 0..side {
            let (px, py) = ((x as f64 + 0.5) / half - 1.0, (y as f64 + 0.5) / half - 1.0);
            let (u, v) = ((px - ox) / scale, (py - oy) / scale);
            // One-pixel anti-aliased edge.
            let m = (0.5 + layout(class, u, v) * scale * half).clamp(0.0, 1.0);
            for c in 0..3 {
                let back = bg[c] + gx * px + gy * py;
                data[c * plane + y * side + x] = back * (1.0 - m) + fg[c] * m + noise.sample(rng);
            }
        }
    }
    Tensor::new(vec![3, side, side], data).expect("valid shape")
}

/// `per_class` images for each of the first `classes` labels.
pub fn generate_synthetic(classes: usize, per_class: usize, side: usize, seed: u64) -> Result<LabeledDataset> {
    if classes == 0 || classes > NUM_CLASSES {
        return Err(Error::Config(format!(
            "classes must lie in 1..={NUM_CLASSES}, got {classes}"
        )));
    }
    generate_synthetic_counts(&vec![per_class; classes], side, seed)
}

/// `counts[c]` images of class `c`, grouped by class. Record `i` draws from
/// its own stream, so any prefix of a class is stable under changes to the
/// other counts.
pub fn generate_synthetic_counts(counts: &[usize], side: usize, seed: u64) -> Result<LabeledDataset> {
    if side < 16 {
        return Err(Error::Config(format!("synthetic side must be at least 16, got {side}")));
    }
    if counts.is_empty() || counts.len() > NUM_CLASSES {
        return Err(Error::Config(format!(
            "between 1 and {NUM_CLASSES} class counts required"
        )));
    }
    let mut ds = LabeledDataset::new();
    for (class, &n) in counts.iter().enumerate() {
        let label = ClassLabel::new(class)?;
        for i in 0..n {
            let mut rng = fork(seed, ((class as u64) << 32) | i as u64);
            let pixels = render(class, side, &mut rng);
            ds.push(ImageRecord::new(
                pixels,
                label,
                Provenance::Original,
                format!("c{class}_{i:05}"),
            )?)?;
        }
    }
    Ok(ds)
}
