//! The seven augmentation operators and random pipelines over them.
//!
//! Geometric operators map each output pixel back into the source image and
//! sample it bilinearly. Coordinates that fall outside the image are
//! reflected back in, so no constant-colour borders appear.

use rand_distr::{Distribution, Normal};

use super::{ImageRecord, Provenance};
use crate::error::{Error, Result};
use crate::rng::{Rng, RngExt, SliceRandom};
use crate::tensor::Tensor;

pub const ROTATE_MAX_DEG: f64 = 20.0;
pub const ZOOM_RANGE: (f64, f64) = (0.85, 1.15);
pub const SHEAR_MAX_DEG: f64 = 10.0;
pub const BLUR_KERNEL: usize = 5;
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.1, 1.0);
pub const NOISE_SIGMA: f64 = 0.05;
pub const CROP_RANGE: (f64, f64) = (0.85, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Flip,
    Rotate,
    Zoom,
    Shear,
    Blur,
    Noise,
    Crop,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Flip,
        Variant::Rotate,
        Variant::Zoom,
        Variant::Shear,
        Variant::Blur,
        Variant::Noise,
        Variant::Crop,
    ];

    /// Draws fresh parameters for this operator.
    pub fn sample(self, rng: &mut Rng) -> AugmentOp {
        match self {
            Variant::Flip => AugmentOp::Flip {
                horizontal: rng.random(),
                vertical: rng.random(),
            },
            Variant::Rotate => AugmentOp::Rotate {
                degrees: rng.random_range(-ROTATE_MAX_DEG..=ROTATE_MAX_DEG),
            },
            Variant::Zoom => AugmentOp::Zoom {
                scale: rng.random_range(ZOOM_RANGE.0..=ZOOM_RANGE.1),
            },
            Variant::Shear => AugmentOp::Shear {
                degrees: rng.random_range(-SHEAR_MAX_DEG..=SHEAR_MAX_DEG),
            },
            Variant::Blur => AugmentOp::Blur {
                sigma: rng.random_range(BLUR_SIGMA_RANGE.0..=BLUR_SIGMA_RANGE.1),
            },
            Variant::Noise => AugmentOp::Noise { sigma: NOISE_SIGMA },
            Variant::Crop => AugmentOp::Crop {
                area: rng.random_range(CROP_RANGE.0..=CROP_RANGE.1),
                offset_x: rng.random(),
                offset_y: rng.random(),
            },
        }
    }
}

/// One parameterized transformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    Flip {
        horizontal: bool,
        vertical: bool,
    },
    Rotate {
        degrees: f64,
    },
    Zoom {
        scale: f64,
    },
    Shear {
        degrees: f64,
    },
    /// Gaussian blur with a fixed 5-tap separable kernel.
    Blur {
        sigma: f64,
    },
    /// Additive zero-mean Gaussian noise.
    Noise {
        sigma: f64,
    },
    /// Keeps `area` of the image at a relative offset in `[0,1]²`, then
    /// resizes back to the original size.
    Crop {
        area: f64,
        offset_x: f64,
        offset_y: f64,
    },
}

impl AugmentOp {
    pub fn variant(&self) -> Variant {
        match self {
            AugmentOp::Flip { .. } => Variant::Flip,
            AugmentOp::Rotate { .. } => Variant::Rotate,
            AugmentOp::Zoom { .. } => Variant::Zoom,
            AugmentOp::Shear { .. } => Variant::Shear,
            AugmentOp::Blur { .. } => Variant::Blur,
            AugmentOp::Noise { .. } => Variant::Noise,
            AugmentOp::Crop { .. } => Variant::Crop,
        }
    }

    /// Whether the parameters lie in their declared ranges.
    pub fn in_range(&self) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        match *self {
            AugmentOp::Flip { .. } => true,
            AugmentOp::Rotate { degrees } => degrees.abs() <= ROTATE_MAX_DEG,
            AugmentOp::Zoom { scale } => within(scale, ZOOM_RANGE),
            AugmentOp::Shear { degrees } => degrees.abs() <= SHEAR_MAX_DEG,
            AugmentOp::Blur { sigma } => within(sigma, BLUR_SIGMA_RANGE),
            AugmentOp::Noise { sigma } => sigma == NOISE_SIGMA,
            AugmentOp::Crop {
                area,
                offset_x,
                offset_y,
            } => within(area, CROP_RANGE) && within(offset_x, (0.0, 1.0)) && within(offset_y, (0.0, 1.0)),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentOp::Flip { .. } => true,
            AugmentOp::Rotate { degrees } | AugmentOp::Shear { degrees } => degrees.is_finite(),
            AugmentOp::Zoom { scale } => scale.is_finite() && scale > 0.0,
            AugmentOp::Blur { sigma } => sigma.is_finite() && sigma > 0.0,
            AugmentOp::Noise { sigma } => sigma.is_finite() && sigma >= 0.0,
            AugmentOp::Crop {
                area,
                offset_x,
                offset_y,
            } => area > 0.0 && area <= 1.0 && (0.0..=1.0).contains(&offset_x) && (0.0..=1.0).contains(&offset_y),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid augmentation parameters {self:?}"
            )))
        }
    }
}

/// Two to four distinct operators in random order, each with fresh
/// parameters. Operators are applied in the returned order.
pub fn sample_pipeline(rng: &mut Rng) -> Vec<AugmentOp> {
    let count = rng.random_range(2..=4);
    let mut variants = Variant::ALL;
    let (chosen, _) = variants.partial_shuffle(rng, count);
    chosen.iter().map(|v| v.sample(rng)).collect()
}

/// Applies `op`, returning an augmented record with the same label and
/// source id. `rng` is consumed only by the noise operator.
pub fn apply_op(img: &ImageRecord, op: &AugmentOp, rng: &mut Rng) -> Result<ImageRecord> {
    let pixels = transform(img.pixels(), op, rng)?;
    img.derive(pixels, Provenance::Augmented, img.source_id())
}

pub(crate) fn transform(img: &Tensor, op: &AugmentOp, rng: &mut Rng) -> Result<Tensor> {
    op.validate()?;
    let &[_, h, w] = img.shape() else {
        return Err(Error::Shape {
            op: "augment",
            detail: format!("expected [C,H,W], got {:?}", img.shape()),
        });
    };
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = match *op {
        AugmentOp::Flip { horizontal, vertical } => flip(img, horizontal, vertical),
        AugmentOp::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            // Inverse rotation maps output to source.
            warp(img, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx + s * dy, cy - s * dx + c * dy)
            })
        }
        AugmentOp::Zoom { scale } => warp(img, |x, y| (cx + (x - cx) / scale, cy + (y - cy) / scale)),
        AugmentOp::Shear { degrees } => {
            let t = degrees.to_radians().tan();
            warp(img, |x, y| (x + t * (y - cy), y))
        }
        AugmentOp::Blur { sigma } => blur(img, sigma),
        AugmentOp::Noise { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            let mut t = img.clone();
            t.data_mut().iter_mut().for_each(|v| *v += normal.sample(rng));
            t
        }
        AugmentOp::Crop {
            area,
            offset_x,
            offset_y,
        } => {
            let f = area.sqrt();
            let (cw, ch) = (f * w as f64, f * h as f64);
            let (x0, y0) = (offset_x * (w as f64 - cw), offset_y * (h as f64 - ch));
            let (sx, sy) = (cw / w as f64, ch / h as f64);
            warp(img, |x, y| (x0 + (x + 0.5) * sx - 0.5, y0 + (y + 0.5) * sy - 0.5))
        }
    };
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

fn flip(img: &Tensor, horizontal: bool, vertical: bool) -> Tensor {
    let &[c, h, w] = img.shape() else { unreachable!() };
    let d = img.data();
    let mut out = Vec::with_capacity(d.len());
    for ch in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                out.push(d[(ch * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Reflects a continuous coordinate into `[0, n-1]` without repeating the
/// edge sample.
fn reflect(x: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let r = x.rem_euclid(period);
    if r > last {
        period - r
    } else {
        r
    }
}

/// Inverse-mapped bilinear resampling; `map` sends output pixel centres to
/// source coordinates.
fn warp(img: &Tensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let &[c, h, w] = img.shape() else { unreachable!() };
    let d = img.data();
    let plane = h * w;
    let mut out = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            let (sx, sy) = (reflect(sx, w), reflect(sy, h));
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let p = &d[ch * plane..(ch + 1) * plane];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * plane + y * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Normalized 5-tap Gaussian weights.
pub(crate) fn gaussian_taps(sigma: f64) -> [f64; BLUR_KERNEL] {
    let half = (BLUR_KERNEL / 2) as f64;
    let mut k = [0.0; BLUR_KERNEL];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn reflect_index(i: isize, n: usize) -> usize {
    reflect(i as f64, n) as usize
}

fn blur(img: &Tensor, sigma: f64) -> Tensor {
    let &[c, h, w] = img.shape() else { unreachable!() };
    let taps = gaussian_taps(sigma);
    let half = (BLUR_KERNEL / 2) as isize;
    let d = img.data();
    let plane = h * w;
    let mut tmp = vec![0.0; d.len()];
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        let (src, dst) = (&d[ch * plane..(ch + 1) * plane], &mut tmp[ch * plane..(ch + 1) * plane]);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[y * w + reflect_index(x as isize + k as isize - half, w)])
                    .sum();
            }
        }
        let (src, dst) = (
            &tmp[ch * plane..(ch + 1) * plane],
            &mut out[ch * plane..(ch + 1) * plane],
        );
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[reflect_index(y as isize + k as isize - half, h) * w + x])
                    .sum();
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassLabel;
    use crate::rng::seeded;

    fn smooth(side: usize) -> Tensor {
        let mut data = Vec::new();
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    let (u, v) = (x as f64 / side as f64, y as f64 / side as f64);
                    data.push(0.5 + 0.3 * ((u * 3.0 + c as f64).sin() * (v * 2.0).cos()));
                }
            }
        }
        Tensor::new(vec![3, side, side], data).unwrap()
    }

    fn record(t: Tensor) -> ImageRecord {
        ImageRecord::new(t, ClassLabel::new(0).unwrap(), Provenance::Original, "s").unwrap()
    }

    #[test]
    fn reflect_folds_into_range() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(-9.0, 5), 1.0);
        assert_eq!(reflect(3.0, 1), 0.0);
    }

    #[test]
    fn double_flip_is_identity() {
        let mut rng = seeded(1);
        let r = record(Tensor::uniform(&[3, 7, 5], 0.0, 1.0, &mut rng));
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let op = AugmentOp::Flip {
                horizontal: h,
                vertical: v,
            };
            let once = apply_op(&r, &op, &mut rng).unwrap();
            assert_ne!(once.pixels(), r.pixels());
            let twice = apply_op(&once, &op, &mut rng).unwrap();
            assert_eq!(twice.pixels(), r.pixels());
            assert_eq!(twice.provenance(), Provenance::Augmented);
        }
    }

    #[test]
    fn noise_std_on_mid_gray() {
        let mut rng = seeded(2);
        let r = record(Tensor::full(&[3, 32, 32], 0.5));
        let out = apply_op(&r, &AugmentOp::Noise { sigma: NOISE_SIGMA }, &mut rng).unwrap();
        let n = out.pixels().len() as f64;
        let mean = out.pixels().data().iter().sum::<f64>() / n;
        let var = out.pixels().data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((0.04..=0.06).contains(&std), "std {std}");
    }

    #[test]
    fn near_delta_blur_barely_changes() {
        let mut rng = seeded(3);
        let r = record(Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng));
        let out = apply_op(&r, &AugmentOp::Blur { sigma: 0.1 }, &mut rng).unwrap();
        let dev = out
            .pixels()
            .data()
            .iter()
            .zip(r.pixels().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 0.02, "{dev}");
        let taps = gaussian_taps(0.1);
        assert!(taps[2] > 1.0 - 1e-15);
    }

    #[test]
    fn blur_preserves_constant() {
        let mut rng = seeded(3);
        let r = record(Tensor::full(&[3, 6, 6], 0.3));
        let out = apply_op(&r, &AugmentOp::Blur { sigma: 1.0 }, &mut rng).unwrap();
        assert!(out.pixels().data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn rotation_round_trips_on_smooth_images() {
        let mut rng = seeded(4);
        let r = record(smooth(32));
        for deg in [-20.0, -7.5, 13.0, 20.0] {
            let a = apply_op(&r, &AugmentOp::Rotate { degrees: deg }, &mut rng).unwrap();
            let b = apply_op(&a, &AugmentOp::Rotate { degrees: -deg }, &mut rng).unwrap();
            let mae = b
                .pixels()
                .data()
                .iter()
                .zip(r.pixels().data())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / r.pixels().len() as f64;
            assert!(mae < 0.05, "{deg}: {mae}");
        }
    }

    #[test]
    fn identity_parameters_are_identity() {
        let mut rng = seeded(5);
        let t = smooth(9);
        let ops = [
            AugmentOp::Rotate { degrees: 0.0 },
            AugmentOp::Zoom { scale: 1.0 },
            AugmentOp::Shear { degrees: 0.0 },
            AugmentOp::Crop {
                area: 1.0,
                offset_x: 0.3,
                offset_y: 0.9,
            },
        ];
        for op in ops {
            let out = transform(&t, &op, &mut rng).unwrap();
            for (a, b) in out.data().iter().zip(t.data()) {
                assert!((a - b).abs() < 1e-12, "{op:?}");
            }
        }
    }

    #[test]
    fn rotate_ninety_moves_corner() {
        // Outside the sampled range, but an exact check of the direction:
        // with y pointing down, a positive angle turns the image clockwise.
        let mut img = Tensor::zeros(&[1, 3, 3]);
        img.data_mut()[6] = 1.0; // bottom-left
        let out = transform(&img, &AugmentOp::Rotate { degrees: 90.0 }, &mut seeded(0)).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12, "{:?}", out.data());
    }

    #[test]
    fn pipeline_shape() {
        let mut rng = seeded(6);
        let mut seen = [false; 5];
        for _ in 0..2000 {
            let p = sample_pipeline(&mut rng);
            assert!((2..=4).contains(&p.len()));
            seen[p.len()] = true;
            let mut vs: Vec<_> = p.iter().map(|o| o.variant() as u8).collect();
            vs.sort();
            vs.dedup();
            assert_eq!(vs.len(), p.len());
            assert!(p.iter().all(AugmentOp::in_range));
        }
        assert!(seen[2] && seen[3] && seen[4]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let t = Tensor::zeros(&[3, 4, 4]);
        assert!(transform(&t, &AugmentOp::Blur { sigma: 0.0 }, &mut seeded(0)).is_err());
        assert!(transform(&t, &AugmentOp::Zoom { scale: -1.0 }, &mut seeded(0)).is_err());
    }
}
