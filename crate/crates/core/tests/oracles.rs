//! Fast kernels against direct, obviously correct reference computations.

mod common;

use common::{naive_dft, naive_idft_real, naive_pool, random, rng};
use sgdn_core::autodiff::{Eager, Exec};
use sgdn_core::colorspace::{ColorSpace, Image};
use sgdn_core::losses::{fft_loss, fft_loss_in};
use sgdn_core::ops::{spatial, Op};
use sgdn_core::params::ParamStore;
use sgdn_core::spectral::{decompose, recombine, SpectralPair};
use sgdn_core::Tensor;

const TOL: f64 = 1e-5;

const SIZES: [(usize, usize); 6] = [(1, 1), (2, 3), (4, 4), (5, 7), (8, 6), (8, 8)];

fn rfft2(x: &Tensor<f64>) -> Tensor<f64> {
    let store = ParamStore::new();
    let mut e = Eager::new(&store);
    let v = e.constant(x.clone());
    let z = e.apply(Op::Rfft2, &[&v]);
    e.take(z)
}

#[test]
fn rfft_matches_direct_dft() {
    let mut r = rng(1);
    for (h, w) in SIZES {
        let x = random(&[2, 3, h, w], -1.0, 1.0, &mut r);
        let z = rfft2(&x);
        let wf = w / 2 + 1;
        assert_eq!(z.shape(), &[2, 3, h, wf, 2]);
        for (plane, spec) in x.data().chunks(h * w).zip(z.data().chunks(h * wf * 2)) {
            let full = naive_dft(plane, h, w);
            for u in 0..h {
                for v in 0..wf {
                    let (re, im) = full[u * w + v];
                    let k = (u * wf + v) * 2;
                    assert!((spec[k] - re).abs() < TOL && (spec[k + 1] - im).abs() < TOL, "{h}x{w} bin ({u},{v})");
                }
            }
        }
    }
}

#[test]
fn decompose_matches_direct_dft() {
    let mut r = rng(2);
    for (h, w) in SIZES {
        let x = random(&[1, 2, h, w], -1.0, 1.0, &mut r);
        let pair = decompose(&x).unwrap();
        let wf = w / 2 + 1;
        for (c, plane) in x.data().chunks(h * w).enumerate() {
            let full = naive_dft(plane, h, w);
            for u in 0..h {
                for v in 0..wf {
                    let (re, im) = full[u * w + v];
                    let k = c * h * wf + u * wf + v;
                    let amp = pair.amplitude.data()[k];
                    assert!((amp - re.hypot(im)).abs() < TOL);
                    if amp > 1e-6 {
                        let (pr, pi) = (amp * pair.phase.data()[k].cos(), amp * pair.phase.data()[k].sin());
                        assert!((pr - re).abs() < TOL && (pi - im).abs() < TOL);
                    }
                }
            }
        }
    }
}

#[test]
fn recombine_matches_direct_inverse_dft() {
    let mut r = rng(3);
    for (h, w) in SIZES {
        let x = random(&[1, 1, h, w], -1.0, 1.0, &mut r);
        // a Hermitian spectrum built from a real signal inverts to that signal
        let full = naive_dft(x.data(), h, w);
        let direct = naive_idft_real(&full, h, w);
        let back = recombine(&decompose(&x).unwrap()).unwrap();
        for i in 0..h * w {
            assert!((back.data()[i] - direct[i]).abs() < TOL);
            assert!((direct[i] - x.data()[i]).abs() < TOL);
        }
    }
}

#[test]
fn recombine_projects_arbitrary_phase_onto_real_signals() {
    // an arbitrary packed phase need not come from a real signal; recombination
    // projects it onto one, and projecting again changes nothing
    let mut r = rng(4);
    for (h, w) in [(4, 4), (3, 5), (6, 6)] {
        let wf = w / 2 + 1;
        let amplitude = random(&[1, 1, h, wf], 0.0, 1.0, &mut r);
        let phase = random(&[1, 1, h, wf], -3.0, 3.0, &mut r);
        let pair = SpectralPair { amplitude, phase, spatial_shape: (h, w) };
        let out = recombine(&pair).unwrap();
        let twice = recombine(&decompose(&out).unwrap()).unwrap();
        assert!(out.max_abs_diff(&twice) < TOL, "projection is idempotent");
    }
}

#[test]
fn pooling_matches_sliding_window() {
    let mut r = rng(5);
    for (h, w) in SIZES {
        let x = random(&[2, 2, h, w], -1.0, 1.0, &mut r);
        for max in [false, true] {
            let got = if max { spatial::max_pool(&x) } else { spatial::avg_pool(&x) };
            let (oh, ow) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
            assert_eq!(got.shape(), &[2, 2, oh, ow]);
            for (plane, out) in x.data().chunks(h * w).zip(got.data().chunks(oh * ow)) {
                let want = naive_pool(plane, h, w, max);
                for (a, b) in out.iter().zip(&want) {
                    assert!((a - b).abs() < TOL, "{h}x{w} max={max}");
                }
            }
        }
    }
}

/// Mean of `|Re|` and `|Im|` over every packed bin of every channel, by explicit loops.
fn fft_loss_scalar(pred: &[f32], gt: &[f32], h: usize, w: usize) -> f64 {
    let wf = w / 2 + 1;
    let mut acc = 0.0;
    for c in 0..3 {
        for u in 0..h {
            for v in 0..wf {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for y in 0..h {
                    for x in 0..w {
                        let i = (c * h + y) * w + x;
                        let d = pred[i] as f64 - gt[i] as f64;
                        let a = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        re += d * a.cos();
                        im += d * a.sin();
                    }
                }
                acc += re.abs() + im.abs();
            }
        }
    }
    acc / (3 * h * wf * 2) as f64
}

#[test]
fn fft_loss_matches_scalar_loop() {
    let mut r = rng(6);
    for (h, w) in SIZES {
        let a = random(&[3, h, w], 0.0, 1.0, &mut r).cast::<f32>();
        let b = random(&[3, h, w], 0.0, 1.0, &mut r).cast::<f32>();
        let want = fft_loss_scalar(a.data(), b.data(), h, w);
        let store = ParamStore::new();
        let mut e = Eager::new(&store);
        let pv = e.constant(a.cast::<f64>().reshape(&[1, 3, h, w]));
        let gv = e.constant(b.cast::<f64>().reshape(&[1, 3, h, w]));
        let l = fft_loss_in(&mut e, &pv, &gv);
        let got = e.value(&l).item();
        assert!((got - want).abs() < TOL, "{h}x{w}: {got} vs {want}");
        if h >= 8 && w >= 8 {
            let pa = Image::new(a, ColorSpace::Rgb).unwrap();
            let pb = Image::new(b, ColorSpace::Rgb).unwrap();
            assert!((fft_loss(&pa, &pb).unwrap() - want).abs() < TOL);
        }
    }
}
