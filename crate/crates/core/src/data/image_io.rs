//! Raster I/O and directory ingestion.
//!
//! PPM (`P6` binary and `P3` plain, any maxval up to 65535) is always
//! available. PNG decoding is behind the `png` feature.

use std::path::Path;

use super::{ClassLabel, ImageRecord, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&[u8]> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<usize> {
        std::str::from_utf8(self.token()?).ok()?.parse().ok()
    }
}

/// Decodes a PPM into `[3,H,W]` with values scaled to `[0,1]`.
pub fn read_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |detail: &str| Error::format(path, "ppm", detail);
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token().ok_or_else(|| bad("empty file"))?;
    let plain = match magic {
        b"P6" => false,
        b"P3" => true,
        _ => return Err(bad("not a P3/P6 pixmap")),
    };
    let width = h.number().ok_or_else(|| bad("bad width"))?;
    let height = h.number().ok_or_else(|| bad("bad height"))?;
    let maxval = h.number().ok_or_else(|| bad("bad maxval"))?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("dimensions or maxval out of range"));
    }
    let n = width * height * 3;
    let scale = 1.0 / maxval as f64;
    let samples: Vec<f64> = if plain {
        (0..n)
            .map(|_| {
                h.number()
                    .map(|v| v as f64 * scale)
                    .ok_or_else(|| bad("truncated samples"))
            })
            .collect::<Result<_>>()?
    } else {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = h.pos + 1;
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(start..start + n * width_bytes)
            .ok_or_else(|| bad("truncated raster"))?;
        if width_bytes == 1 {
            raster.iter().map(|&b| b as f64 * scale).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
                .collect()
        }
    };
    // Interleaved RGB to planar [3,H,W].
    let plane = width * height;
    let mut data = vec![0.0; n];
    for (i, px) in samples.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c].min(1.0);
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Encodes `[3,H,W]` as an 8-bit binary PPM.
pub fn write_ppm(pixels: &Tensor, path: &Path) -> Result<()> {
    let &[3, height, width] = pixels.shape() else {
        return Err(Error::Shape {
            op: "write_ppm",
            detail: format!("expected [3,H,W], got {:?}", pixels.shape()),
        });
    };
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    let plane = width * height;
    let d = pixels.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a PPM, or a PNG when built with the `png` feature.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match ext.as_str() {
        "ppm" | "pnm" => read_ppm(&bytes, path),
        "png" => read_png(&bytes, path),
        _ => Err(Error::format(path, "image", "unsupported extension")),
    }
}

#[cfg(feature = "png")]
fn read_png(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, "png", e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

#[cfg(not(feature = "png"))]
fn read_png(_bytes: &[u8], path: &Path) -> Result<Tensor> {
    Err(Error::format(path, "png", "PNG support requires the `png` feature"))
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("ppm" | "pnm" | "png")
    )
}

/// Largest centered square.
pub fn center_crop_square(img: &Tensor) -> Tensor {
    let &[c, h, w] = img.shape() else {
        unreachable!("images are [C,H,W]")
    };
    let s = h.min(w);
    let (y0, x0) = ((h - s) / 2, (w - s) / 2);
    let d = img.data();
    let mut out = Vec::with_capacity(c * s * s);
    for ch in 0..c {
        for y in 0..s {
            let row = (ch * h + y0 + y) * w + x0;
            out.extend_from_slice(&d[row..row + s]);
        }
    }
    Tensor::new(vec![c, s, s], out).expect("crop keeps a valid shape")
}

/// Nearest-neighbour resize sampling source pixel `floor((i + 0.5) · in / out)`.
pub fn resize_nearest(img: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let &[c, h, w] = img.shape() else {
        unreachable!("images are [C,H,W]")
    };
    let src = |i: usize, out: usize, len: usize| (((2 * i + 1) * len) / (2 * out)).min(len - 1);
    let d = img.data();
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for y in 0..out_h {
            let sy = src(y, out_h, h);
            for x in 0..out_w {
                data.push(d[(ch * h + sy) * w + src(x, out_w, w)]);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], data).expect("resize keeps a valid shape")
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::fs::DirEntry>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Loads `<root>/<ClassName>/*.{ppm,png}`, center-cropping each image to a
/// square and resizing it to `side × side`.
///
/// Class directories are visited in name order and files in file-name
/// order. Files with other extensions are ignored. Source ids are
/// `<ClassDir>/<file stem>`.
pub fn ingest_directory(root: &Path, side: usize) -> Result<LabeledDataset> {
    if side == 0 {
        return Err(Error::Config("side must be positive".into()));
    }
    let mut ds = LabeledDataset::new();
    for entry in sorted_entries(root)? {
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let dir_name = entry.file_name().to_string_lossy().into_owned();
        let label = ClassLabel::from_name(&dir_name)?;
        for file in sorted_entries(&dir)? {
            let path = file.path();
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            let img = read_image(&path)?;
            let img = resize_nearest(&center_crop_square(&img), side, side);
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            ds.push(ImageRecord::new(
                img,
                label,
                Provenance::Original,
                format!("{dir_name}/{stem}"),
            )?)?;
        }
    }
    ds.require_nonempty(&format!("no images under {}", root.display()))?;
    Ok(ds)
}

fn file_stem_for(id: &str) -> String {
    id.replace(['/', '\\'], "__")
}

/// Writes every record to `<root>/<ClassName>/<id>.ppm` plus
/// `<root>/manifest.csv` whose `path` column is relative to `root`.
pub fn write_dataset_dir(ds: &LabeledDataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::from("path,label,provenance\n");
    for r in ds.records() {
        let class_dir = root.join(r.label().name());
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let file = format!("{}.ppm", file_stem_for(r.source_id()));
        write_ppm(r.pixels(), &class_dir.join(&file))?;
        manifest.push_str(&format!(
            "{}/{file},{},{}\n",
            r.label().name(),
            r.label().name(),
            r.provenance().as_str()
        ));
    }
    let path = root.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reloads a directory written by [`write_dataset_dir`], in manifest order
/// and with provenance restored. Source ids become the file stems.
pub fn load_dataset_dir(root: &Path) -> Result<LabeledDataset> {
    let rows = super::read_manifest(&root.join("manifest.csv"))?;
    let mut ds = LabeledDataset::new();
    for row in rows {
        let path = root.join(&row.path);
        let img = read_image(&path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        ds.push(ImageRecord::new(img, row.label, row.provenance, stem)?)?;
    }
    ds.require_nonempty(&format!("manifest under {} lists no images", root.display()))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 2 * 5).map(|v| v as f64 / 29.0).collect();
        let img = Tensor::new(vec![3, 2, 5], data).unwrap();
        let path = dir.path().join("a.ppm");
        write_ppm(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn plain_and_sixteen_bit_variants() {
        let p3 = b"P3\n# comment\n2 1\n4\n0 1 2  3 4 4\n";
        let t = read_ppm(p3, Path::new("p3")).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 0.75, 0.25, 1.0, 0.5, 1.0]);

        let mut p6 = b"P6 1 1 65535\n".to_vec();
        p6.extend_from_slice(&[0xff, 0xff, 0x00, 0x00, 0x80, 0x00]);
        let t = read_ppm(&p6, Path::new("p6")).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
        assert!((t.data()[2] - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_ppm_rejected() {
        assert!(read_ppm(b"P5 1 1 255\n\0", Path::new("x")).is_err());
        assert!(read_ppm(b"P6 2 2 255\n\0\0\0", Path::new("x")).is_err());
        assert!(read_ppm(b"P6 0 2 255\n", Path::new("x")).is_err());
    }

    #[test]
    fn crop_is_centered() {
        let img = Tensor::new(vec![1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(center_crop_square(&img).data(), &[1.0]);
        let img = Tensor::new(vec![1, 3, 1], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(center_crop_square(&img).data(), &[1.0]);
    }

    #[test]
    fn resize_identity_and_upsample() {
        let img = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(resize_nearest(&img, 2, 2), img);
        let up = resize_nearest(&img, 4, 4);
        assert_eq!(&up.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(&up.data()[12..], &[3.0, 3.0, 4.0, 4.0]);
    }
}
