//! PNG decoding and encoding, atomic file writes and directory listing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ColorType, ExtendedColorType, ImageEncoder};
use sgdn_core::colorspace::{ColorSpace, Image};

use crate::error::{Error, Result};

/// Sample depth of a PNG file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn peak(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Reads a PNG as normalized RGB; 16-bit files are scaled by 65535, 8-bit by 255.
pub fn read_png(path: &Path) -> Result<(Image, BitDepth)> {
    let bytes = fs::read(path).map_err(Error::read(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let depth = match img.color() {
        ColorType::L16 | ColorType::La16 | ColorType::Rgb16 | ColorType::Rgba16 => BitDepth::Sixteen,
        _ => BitDepth::Eight,
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let samples: Vec<f32> = match depth {
        BitDepth::Sixteen => img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        BitDepth::Eight => img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    let image = Image::from_interleaved(h, w, &samples, ColorSpace::Rgb).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((image, depth))
}

/// Encodes an RGB image as PNG bytes, rounding to the nearest code value.
pub fn encode_png(img: &Image, depth: BitDepth) -> Vec<u8> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = |v: f32| (v.clamp(0.0, 1.0) * depth.peak()).round();
    let mut out = Vec::new();
    let enc = PngEncoder::new(&mut out);
    let samples = img.to_interleaved();
    let res = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = samples.iter().map(|&v| q(v) as u8).collect();
            enc.write_image(&raw, w, h, ExtendedColorType::Rgb8)
        }
        BitDepth::Sixteen => {
            // the encoder takes native-endian samples and swaps them itself
            let raw: Vec<u8> = samples.iter().flat_map(|&v| (q(v) as u16).to_ne_bytes()).collect();
            enc.write_image(&raw, w, h, ExtendedColorType::Rgb16)
        }
    };
    res.expect("encoding into memory cannot fail");
    out
}

pub fn write_png(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    write_atomic(path, &encode_png(img, depth))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::write(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(Error::write(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::write(path))
}

/// PNG files of a directory keyed by file stem.
pub fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(Error::read(dir))? {
        let path = entry.map_err(Error::read(dir))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Images placed left to right; shorter ones are padded with black below.
pub fn side_by_side(images: &[&Image]) -> Image {
    let h = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let w: usize = images.iter().map(|i| i.width()).sum();
    let mut px = vec![0.0f32; 3 * h * w];
    let mut x0 = 0;
    for img in images {
        let src = img.pixels().data();
        let (ih, iw) = (img.height(), img.width());
        for c in 0..3 {
            for y in 0..ih {
                let s = &src[(c * ih + y) * iw..(c * ih + y + 1) * iw];
                px[(c * h + y) * w + x0..(c * h + y) * w + x0 + iw].copy_from_slice(s);
            }
        }
        x0 += iw;
    }
    Image::new(sgdn_core::Tensor::from_vec(&[3, h, w], px), ColorSpace::Rgb).expect("sheet of valid images")
}

#[cfg(test)]
mod tests {
    use super::*;
    use sgdn_core::Tensor;

    fn gradient() -> Image {
        Image::new(Tensor::from_fn(&[3, 9, 10], |i| (i % 90) as f32 / 89.0), ColorSpace::Rgb).unwrap()
    }

    #[test]
    fn png_round_trip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient();
        for (depth, tol) in [(BitDepth::Eight, 0.5 / 255.0 + 1e-6), (BitDepth::Sixteen, 0.5 / 65535.0 + 1e-7)] {
            let p = dir.path().join("x.png");
            write_png(&p, &img, depth).unwrap();
            let (back, d) = read_png(&p).unwrap();
            assert_eq!(d, depth);
            assert!(back.pixels().max_abs_diff(img.pixels()) <= tol);
        }
    }

    #[test]
    fn stems_ignore_other_files() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("b.png"), &gradient(), BitDepth::Eight).unwrap();
        write_png(&dir.path().join("a.PNG"), &gradient(), BitDepth::Eight).unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let stems: Vec<_> = png_stems(dir.path()).unwrap().into_keys().collect();
        assert_eq!(stems, ["a", "b"]);
    }
}
