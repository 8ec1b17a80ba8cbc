//! Amplitude/phase decomposition of real feature maps.
//!
//! Spectra use the packed real-input layout: `W/2 + 1` columns, forward
//! transform unnormalized, inverse scaled by `1 / (H * W)`.

use crate::autodiff::{Eager, Exec};
use crate::error::{Result, SgdnError};
use crate::ops::{fft, Op};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub use crate::ops::fft::{fold_weight, half_width};

/// Amplitude and phase of a `[B, C, H, W]` feature map, each `[B, C, H, W/2 + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPair<T> {
    pub amplitude: Tensor<T>,
    pub phase: Tensor<T>,
    /// `(H, W)` of the originating feature.
    pub spatial_shape: (usize, usize),
}

/// Differentiable decomposition: returns `(amplitude, phase)`.
pub fn decompose_in<T: Real, E: Exec<T>>(e: &mut E, x: &E::V) -> (E::V, E::V) {
    let z = e.apply(Op::Rfft2, &[x]);
    let amp = e.apply(Op::ComplexAbs, &[&z]);
    let phase = e.apply(Op::ComplexAngle, &[&z]);
    (amp, phase)
}

/// Differentiable recombination of packed amplitude and phase into a real map of width `width`.
pub fn recombine_in<T: Real, E: Exec<T>>(e: &mut E, amp: &E::V, phase: &E::V, width: usize) -> E::V {
    let z = e.apply(Op::HermitianPolar { width }, &[amp, phase]);
    e.apply(Op::Irfft2 { width }, &[&z])
}

pub fn decompose<T: Real>(feature: &Tensor<T>) -> Result<SpectralPair<T>> {
    if feature.ndim() != 4 {
        return Err(SgdnError::ShapeMismatch {
            context: "decompose",
            expected: alloc::vec![0, 0, 0, 0],
            got: feature.shape().to_vec(),
        });
    }
    if !feature.all_finite() {
        return Err(SgdnError::NonFinite { context: "decompose" });
    }
    let [_, _, h, w] = feature.dims4();
    let store = ParamStore::new();
    let mut e = Eager::new(&store);
    let x = e.constant(feature.clone());
    let (amp, phase) = decompose_in(&mut e, &x);
    Ok(SpectralPair {
        amplitude: e.take(amp),
        phase: e.take(phase),
        spatial_shape: (h, w),
    })
}

pub fn recombine<T: Real>(pair: &SpectralPair<T>) -> Result<Tensor<T>> {
    let (h, w) = pair.spatial_shape;
    let s = pair.amplitude.shape();
    if s.len() != 4 || s[2] != h || s[3] != fft::half_width(w) || pair.phase.shape() != s {
        return Err(SgdnError::ShapeMismatch {
            context: "recombine",
            expected: alloc::vec![s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0), h, fft::half_width(w)],
            got: pair.phase.shape().to_vec(),
        });
    }
    if let Some(&v) = pair.amplitude.data().iter().find(|v| **v < T::zero()) {
        return Err(SgdnError::NegativeAmplitude {
            value: v.to_f64().unwrap_or(f64::NAN),
        });
    }
    if !pair.amplitude.all_finite() || !pair.phase.all_finite() {
        return Err(SgdnError::NonFinite { context: "recombine" });
    }
    let store = ParamStore::new();
    let mut e = Eager::new(&store);
    let amp = e.constant(pair.amplitude.clone());
    let phase = e.constant(pair.phase.clone());
    let out = recombine_in(&mut e, &amp, &phase, w);
    Ok(e.take(out))
}
