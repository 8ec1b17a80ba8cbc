//! Multi-scale restoration objective: ℓ1, SSIM and Fourier terms.
//!
//! The `_in` functions build the loss on any [`Exec`] so the same code serves
//! training (on a [`Graph`](crate::autodiff::Graph)) and evaluation. The
//! image-level wrappers evaluate in `f64`.

use alloc::vec::Vec;

use crate::autodiff::{Eager, EagerValue, Exec};
use crate::backbone::SCALES;
use crate::colorspace::Image;
use crate::error::{Result, SgdnError};
use crate::ops::{spatial, Op};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizers for a unit data range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Weights of the three loss terms; the scales are fixed to [`SCALES`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// ℓ1 weight.
    pub eta: f64,
    /// SSIM weight.
    pub theta: f64,
    /// Fourier weight.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 1.0,
            theta: 0.5,
            lambda: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("theta", self.theta), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SgdnError::NegativeParameter { name, value: v });
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms summed over scales, plus the weighted total.
#[derive(Clone, Debug)]
pub struct LossTerms<V> {
    pub l1: V,
    pub ssim: V,
    pub fft: V,
    pub total: V,
}

fn same_shape<T: Real>(context: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SgdnError::ShapeMismatch {
            context,
            expected: b.shape().to_vec(),
            got: a.shape().to_vec(),
        });
    }
    Ok(())
}

fn ssim_fits<T: Real>(x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(SgdnError::ImageTooSmall {
            height: h,
            width: w,
            min: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn l1_in<T: Real, E: Exec<T>>(e: &mut E, pred: &E::V, gt: &E::V) -> E::V {
    let d = e.sub(pred, gt);
    let a = e.unary(Op::Abs, &d);
    e.mean(&a)
}

/// Mean local SSIM over every channel, on the valid region of the window.
pub fn ssim_in<T: Real, E: Exec<T>>(e: &mut E, x: &E::V, y: &E::V) -> E::V {
    let blur = Op::GaussianBlurValid {
        size: SSIM_WINDOW,
        sigma: SSIM_SIGMA,
    };
    let mx = e.unary(blur.clone(), x);
    let my = e.unary(blur.clone(), y);
    let xx = e.unary(Op::Square, x);
    let yy = e.unary(Op::Square, y);
    let xy = e.mul(x, y);
    let exx = e.unary(blur.clone(), &xx);
    let eyy = e.unary(blur.clone(), &yy);
    let exy = e.unary(blur, &xy);
    let mx2 = e.unary(Op::Square, &mx);
    let my2 = e.unary(Op::Square, &my);
    let mxy = e.mul(&mx, &my);
    let vx = e.sub(&exx, &mx2);
    let vy = e.sub(&eyy, &my2);
    let cxy = e.sub(&exy, &mxy);

    let a = e.scale(&mxy, 2.0);
    let a = e.add_scalar(&a, SSIM_C1);
    let b = e.scale(&cxy, 2.0);
    let b = e.add_scalar(&b, SSIM_C2);
    let num = e.mul(&a, &b);
    let c = e.add(&mx2, &my2);
    let c = e.add_scalar(&c, SSIM_C1);
    let d = e.add(&vx, &vy);
    let d = e.add_scalar(&d, SSIM_C2);
    let den = e.mul(&c, &d);
    let map = e.div(&num, &den);
    e.mean(&map)
}

/// `1 - SSIM`.
pub fn ssim_loss_in<T: Real, E: Exec<T>>(e: &mut E, pred: &E::V, gt: &E::V) -> E::V {
    let s = ssim_in(e, pred, gt);
    let neg = e.scale(&s, -1.0);
    e.add_scalar(&neg, 1.0)
}

/// Mean absolute difference of the real and imaginary parts of the
/// half-plane spectra (unnormalized forward transform).
pub fn fft_loss_in<T: Real, E: Exec<T>>(e: &mut E, pred: &E::V, gt: &E::V) -> E::V {
    // the transform is linear, so one transform of the difference suffices
    let d = e.sub(pred, gt);
    let spec = e.unary(Op::Rfft2, &d);
    let a = e.unary(Op::Abs, &spec);
    e.mean(&a)
}

/// Anti-aliased ground-truth targets at every output scale of a `[B, C, H, W]` batch.
pub fn gt_pyramid<T: Real>(gt: &Tensor<T>) -> [Tensor<T>; 3] {
    let [_, _, h, w] = gt.dims4();
    let level = |s: usize| spatial::resize_antialiased(gt, h.div_ceil(1 << s), w.div_ceil(1 << s));
    [gt.clone(), level(1), level(2)]
}

/// Σ over scales of `eta * l1 + theta * (1 - ssim) + lambda * fft`.
pub fn total_loss_in<T: Real, E: Exec<T>>(
    e: &mut E,
    preds: &[E::V],
    gts: &[Tensor<T>],
    w: &LossWeights,
) -> Result<LossTerms<E::V>> {
    w.validate()?;
    if preds.len() != SCALES.len() || gts.len() != SCALES.len() {
        return Err(SgdnError::ScaleSetMismatch {
            expected: SCALES.len(),
            got: preds.len().min(gts.len()),
        });
    }
    let mut l1s = Vec::with_capacity(SCALES.len());
    let mut ssims = Vec::with_capacity(SCALES.len());
    let mut ffts = Vec::with_capacity(SCALES.len());
    for (p, g) in preds.iter().zip(gts) {
        same_shape("total_loss", e.value(p), g)?;
        ssim_fits(g)?;
        let gv = e.constant(g.clone());
        l1s.push(l1_in(e, p, &gv));
        ssims.push(ssim_loss_in(e, p, &gv));
        ffts.push(fft_loss_in(e, p, &gv));
    }
    let l1 = e.sum_all(&l1s);
    let ssim = e.sum_all(&ssims);
    let fft = e.sum_all(&ffts);
    let a = e.scale(&l1, w.eta);
    let b = e.scale(&ssim, w.theta);
    let c = e.scale(&fft, w.lambda);
    let total = e.sum_all(&[a, b, c]);
    Ok(LossTerms { l1, ssim, fft, total })
}

type Value = EagerValue<f64>;

/// Evaluates a pairwise loss on two images in `f64`.
fn eval_pair(pred: &Image, gt: &Image, f: impl Fn(&mut Eager<'_, f64>, &Value, &Value) -> Value) -> Result<f64> {
    let (p, g) = (pred.to_batch().cast::<f64>(), gt.to_batch().cast::<f64>());
    same_shape("loss", &p, &g)?;
    let store = ParamStore::new();
    let mut e = Eager::new(&store);
    let (pv, gv) = (e.constant(p), e.constant(g));
    let out = f(&mut e, &pv, &gv);
    Ok(e.value(&out).item())
}

pub fn l1_loss(pred: &Image, gt: &Image) -> Result<f64> {
    eval_pair(pred, gt, |e, p, g| l1_in(e, p, g))
}

pub fn ssim_loss(pred: &Image, gt: &Image) -> Result<f64> {
    ssim_fits(pred.pixels())?;
    eval_pair(pred, gt, |e, p, g| ssim_loss_in(e, p, g))
}

/// Mean SSIM of two images (the quantity `1 - ssim_loss`).
pub fn ssim_value(pred: &Image, gt: &Image) -> Result<f64> {
    ssim_fits(pred.pixels())?;
    eval_pair(pred, gt, |e, p, g| ssim_in(e, p, g))
}

pub fn fft_loss(pred: &Image, gt: &Image) -> Result<f64> {
    eval_pair(pred, gt, |e, p, g| fft_loss_in(e, p, g))
}

/// Weighted multi-scale loss of three `(pred, gt)` pairs at scales 1, 1/2 and 1/4.
pub fn total_loss(preds: &[Image], gts: &[Image], w: &LossWeights) -> Result<f64> {
    if preds.len() != SCALES.len() || gts.len() != SCALES.len() {
        return Err(SgdnError::ScaleSetMismatch {
            expected: SCALES.len(),
            got: preds.len().min(gts.len()),
        });
    }
    let store = ParamStore::new();
    let mut e = Eager::new(&store);
    let pv: Vec<_> = preds.iter().map(|p| e.constant(p.to_batch().cast::<f64>())).collect();
    let gt: Vec<Tensor<f64>> = gts.iter().map(|g| g.to_batch().cast()).collect();
    let terms = total_loss_in(&mut e, &pv, &gt, w)?;
    Ok(e.value(&terms.total).item())
}
