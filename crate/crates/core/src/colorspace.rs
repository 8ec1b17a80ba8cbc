//! RGB <-> YCbCr conversion (BT.601, full range).
//!
//! Chroma channels carry a 0.5 offset so that neutral colors map to
//! `(Y, 0.5, 0.5)` and every in-gamut RGB value lands inside `[0, 1]`.

use crate::error::{Result, SgdnError};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

pub const KR: f64 = 0.299;
pub const KB: f64 = 0.114;
pub const KG: f64 = 1.0 - KR - KB;

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
}

/// A three-channel picture stored planar as a `[3, H, W]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    pixels: Tensor<T>,
    space: ColorSpace,
}

impl<T: Real> Image<T> {
    /// Validates shape, size and finiteness. Values are clamped into `[0, 1]`.
    pub fn new(pixels: Tensor<T>, space: ColorSpace) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(SgdnError::ShapeMismatch {
                context: "image",
                expected: alloc::vec![3, 0, 0],
                got: s.to_vec(),
            });
        }
        let (h, w) = (s[1], s[2]);
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(SgdnError::ImageTooSmall {
                height: h,
                width: w,
                min: MIN_SIDE,
            });
        }
        if !pixels.all_finite() {
            return Err(SgdnError::NonFinite { context: "image" });
        }
        let pixels = pixels.map(|v| v.max(T::zero()).min(T::one()));
        Ok(Self { pixels, space })
    }

    /// Wraps already validated pixels; used for reduced-scale predictions that
    /// may fall below the minimum side.
    pub(crate) fn from_valid(pixels: Tensor<T>, space: ColorSpace) -> Self {
        Self { pixels, space }
    }

    /// Builds an image from interleaved `H x W x 3` samples.
    pub fn from_interleaved(height: usize, width: usize, hwc: &[T], space: ColorSpace) -> Result<Self> {
        if hwc.len() != height * width * 3 {
            return Err(SgdnError::ShapeMismatch {
                context: "interleaved image",
                expected: alloc::vec![height, width, 3],
                got: alloc::vec![hwc.len()],
            });
        }
        let plane = height * width;
        let pixels = Tensor::from_fn(&[3, height, width], |i| hwc[(i % plane) * 3 + i / plane]);
        Self::new(pixels, space)
    }

    pub fn to_interleaved(&self) -> alloc::vec::Vec<T> {
        let plane = self.height() * self.width();
        let d = self.pixels.data();
        (0..plane * 3).map(|i| d[(i % 3) * plane + i / 3]).collect()
    }

    pub fn pixels(&self) -> &Tensor<T> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<T> {
        self.pixels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// The image as a `[1, 3, H, W]` batch.
    pub fn to_batch(&self) -> Tensor<T> {
        self.pixels.clone().reshape(&[1, 3, self.height(), self.width()])
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            pixels: self.pixels.cast(),
            space: self.space,
        }
    }
}

/// Converts one pixel. No clamping.
#[inline]
pub fn rgb_to_ycbcr_pixel<T: Real>([r, g, b]: [T; 3]) -> [T; 3] {
    let y = lit::<T>(KR) * r + lit::<T>(KG) * g + lit::<T>(KB) * b;
    let half = lit::<T>(0.5);
    let cb = (b - y) / lit::<T>(2.0 * (1.0 - KB)) + half;
    let cr = (r - y) / lit::<T>(2.0 * (1.0 - KR)) + half;
    [y, cb, cr]
}

/// Exact inverse of [`rgb_to_ycbcr_pixel`]. No clamping.
#[inline]
pub fn ycbcr_to_rgb_pixel<T: Real>([y, cb, cr]: [T; 3]) -> [T; 3] {
    let half = lit::<T>(0.5);
    let r = y + lit::<T>(2.0 * (1.0 - KR)) * (cr - half);
    let b = y + lit::<T>(2.0 * (1.0 - KB)) * (cb - half);
    let g = (y - lit::<T>(KR) * r - lit::<T>(KB) * b) / lit::<T>(KG);
    [r, g, b]
}

/// Applies a per-pixel map to every `[.., 3, H, W]` pixel and clamps to `[0, 1]`.
fn convert_planar<T: Real>(x: &Tensor<T>, f: fn([T; 3]) -> [T; 3]) -> Tensor<T> {
    let s = x.shape();
    assert!(s.len() >= 3 && s[s.len() - 3] == 3, "color conversion needs 3 channels, got {s:?}");
    let plane = s[s.len() - 2] * s[s.len() - 1];
    let mut out = x.clone();
    for (src, dst) in x.data().chunks_exact(3 * plane).zip(out.data_mut().chunks_exact_mut(3 * plane)) {
        for i in 0..plane {
            let p = f([src[i], src[plane + i], src[2 * plane + i]]);
            for (c, v) in p.into_iter().enumerate() {
                dst[c * plane + i] = v.max(T::zero()).min(T::one());
            }
        }
    }
    out
}

/// Converts a `[3, H, W]` or `[B, 3, H, W]` RGB tensor to YCbCr.
pub fn rgb_to_ycbcr_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    convert_planar(x, rgb_to_ycbcr_pixel)
}

/// Converts a `[3, H, W]` or `[B, 3, H, W]` YCbCr tensor to RGB.
pub fn ycbcr_to_rgb_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    convert_planar(x, ycbcr_to_rgb_pixel)
}

pub fn rgb_to_ycbcr<T: Real>(img: &Image<T>) -> Result<Image<T>> {
    if img.space != ColorSpace::Rgb {
        return Err(SgdnError::WrongColorSpace {
            expected: ColorSpace::Rgb,
            found: img.space,
        });
    }
    if !img.pixels.all_finite() {
        return Err(SgdnError::NonFinite { context: "rgb_to_ycbcr" });
    }
    Ok(Image {
        pixels: rgb_to_ycbcr_tensor(&img.pixels),
        space: ColorSpace::YCbCr,
    })
}

pub fn ycbcr_to_rgb<T: Real>(img: &Image<T>) -> Result<Image<T>> {
    if img.space != ColorSpace::YCbCr {
        return Err(SgdnError::WrongColorSpace {
            expected: ColorSpace::YCbCr,
            found: img.space,
        });
    }
    Ok(Image {
        pixels: ycbcr_to_rgb_tensor(&img.pixels),
        space: ColorSpace::Rgb,
    })
}
