//! Differentiable tensor operations.
//!
//! Every operation is described by an [`Op`] value. [`forward`] evaluates it
//! on concrete tensors and [`backward`] maps an output gradient to gradients
//! of its arguments. Both execution engines in [`crate::autodiff`] are thin
//! layers over these two functions.

pub mod attention;
pub mod conv;
pub mod fft;
pub mod spatial;

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// A tensor operation. Argument order is documented on each variant.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Sigmoid,
    /// tanh approximation of GELU
    Gelu,
    Relu,
    Abs,
    Square,
    Clamp { lo: f64, hi: f64 },
    /// `(a, b)`, equal shapes
    Add,
    Sub,
    Mul,
    Div,
    /// `(x [B, C, ..], bias [C])`
    BiasAdd,
    /// `(x [B, C, H, W], s [B, C])`
    ScaleChannels,
    /// `x - mean over C` at each `(b, h, w)`
    CenterChannels,
    /// `[B, C, H, W] -> [B, C]`
    GlobalAvgPool,
    /// `(x [B, I], w [O, I], b [O]) -> [B, O]`
    Linear,
    /// softmax along the last axis
    Softmax,
    /// mean of all elements, `-> [1]`
    Mean,
    /// `(x, w [O, I, k, k], b [O])`
    Conv2d { stride: usize, pad: usize },
    /// `(x, w [C, 1, k, k], b [C])`, stride 1
    DepthwiseConv2d { pad: usize },
    /// `(x, w [I, O, 2, 2], b [O])`, exact 2x upsampling
    ConvTranspose2x2,
    /// kernel 3, stride 2, padding 1
    AvgPool,
    /// kernel 3, stride 2, padding 1
    MaxPool,
    ResizeBilinear { height: usize, width: usize },
    /// spatial window `[y0, y0 + height) x [x0, x0 + width)` of a rank-4 tensor
    Crop { y0: usize, x0: usize, height: usize, width: usize },
    /// `(x [B, C, H, W], gamma [C], beta [C])`, normalized over C per pixel
    LayerNormChannels { eps: f64 },
    /// `(q [B, C, Hq, Wq], k [B, C, Hk, Wk], v [B, C, Hk, Wk])`
    Attention { heads: usize },
    /// `[B, C, H, W] -> [B, C, H, W/2+1, 2]`
    Rfft2,
    /// `[.., 2] -> [..]`
    ComplexAbs,
    /// `[.., 2] -> [..]`, in `(-pi, pi]`
    ComplexAngle,
    /// `(amp [B, C, H, Wf], phase [B, C, H, Wf]) -> [B, C, H, Wf, 2]`; self-conjugate
    /// columns are made Hermitian by averaging mirrored amplitudes and phasors.
    HermitianPolar { width: usize },
    /// `[B, C, H, Wf, 2] -> [B, C, H, W]`
    Irfft2 { width: usize },
    /// separable Gaussian blur keeping only fully covered positions
    GaussianBlurValid { size: usize, sigma: f64 },
}

fn unary<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    x.map(f)
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu<T: Real>(x: T) -> T {
    let inner = lit::<T>(GELU_K) * (x + lit::<T>(GELU_C) * x * x * x);
    lit::<T>(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let inner = lit::<T>(GELU_K) * (x + lit::<T>(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = lit::<T>(GELU_K) * (T::one() + lit::<T>(3.0 * GELU_C) * x * x);
    lit::<T>(0.5) * (T::one() + t) + lit::<T>(0.5) * x * (T::one() - t * t) * dinner
}

/// Splits a rank >= 2 shape into `(batch, channels, plane)`.
fn bcp(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
    let (b, c, p) = bcp(x.shape());
    let mut out = vec![T::zero(); x.len()];
    let mut mean = vec![T::zero(); p];
    let mut var = vec![T::zero(); p];
    let inv_c = T::one() / lit::<T>(c as f64);
    for n in 0..b {
        let xs = &x.data()[n * c * p..(n + 1) * c * p];
        channel_stats(xs, c, p, inv_c, eps, &mut mean, &mut var);
        let os = &mut out[n * c * p..(n + 1) * c * p];
        for ch in 0..c {
            let (g, be) = (gamma.data()[ch], beta.data()[ch]);
            for i in 0..p {
                os[ch * p + i] = (xs[ch * p + i] - mean[i]) * var[i] * g + be;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Fills `mean` and `rstd` (in `var`) over the channel axis of one batch item.
fn channel_stats<T: Real>(xs: &[T], c: usize, p: usize, inv_c: T, eps: f64, mean: &mut [T], rstd: &mut [T]) {
    mean.fill(T::zero());
    rstd.fill(T::zero());
    for ch in 0..c {
        for (m, &v) in mean.iter_mut().zip(&xs[ch * p..(ch + 1) * p]) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m *= inv_c;
    }
    for ch in 0..c {
        for ((r, &m), &v) in rstd.iter_mut().zip(mean.iter()).zip(&xs[ch * p..(ch + 1) * p]) {
            *r += (v - m) * (v - m);
        }
    }
    for r in rstd.iter_mut() {
        *r = T::one() / (*r * inv_c + lit::<T>(eps)).sqrt();
    }
}

fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, p) = bcp(x.shape());
    let mut gx = vec![T::zero(); x.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let mut mean = vec![T::zero(); p];
    let mut rstd = vec![T::zero(); p];
    let mut sum_g = vec![T::zero(); p];
    let mut sum_gx = vec![T::zero(); p];
    let inv_c = T::one() / lit::<T>(c as f64);
    for n in 0..b {
        let xs = &x.data()[n * c * p..(n + 1) * c * p];
        let gs = &g.data()[n * c * p..(n + 1) * c * p];
        channel_stats(xs, c, p, inv_c, eps, &mut mean, &mut rstd);
        sum_g.fill(T::zero());
        sum_gx.fill(T::zero());
        for ch in 0..c {
            let gam = gamma.data()[ch];
            let (mut acc_g, mut acc_b) = (T::zero(), T::zero());
            for i in 0..p {
                let xhat = (xs[ch * p + i] - mean[i]) * rstd[i];
                let gv = gs[ch * p + i];
                acc_g += gv * xhat;
                acc_b += gv;
                let gh = gv * gam;
                sum_g[i] += gh;
                sum_gx[i] += gh * xhat;
            }
            ggamma[ch] += acc_g;
            gbeta[ch] += acc_b;
        }
        let gxs = &mut gx[n * c * p..(n + 1) * c * p];
        for ch in 0..c {
            let gam = gamma.data()[ch];
            for i in 0..p {
                let xhat = (xs[ch * p + i] - mean[i]) * rstd[i];
                let gh = gs[ch * p + i] * gam;
                gxs[ch * p + i] = rstd[i] * (gh - sum_g[i] * inv_c - xhat * sum_gx[i] * inv_c);
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx),
        Tensor::from_vec(&[c], ggamma),
        Tensor::from_vec(&[c], gbeta),
    )
}

/// Maps an angle in `[-pi, pi]` onto `(-pi, pi]`.
#[inline]
pub fn wrap_phase<T: Real>(p: T) -> T {
    if p <= -T::PI() {
        T::PI()
    } else {
        p
    }
}

fn complex_abs<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    let shape = &z.shape()[..z.ndim() - 1];
    Tensor::from_vec(shape, z.data().chunks_exact(2).map(|c| c[0].hypot(c[1])).collect())
}

fn complex_angle<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    let shape = &z.shape()[..z.ndim() - 1];
    Tensor::from_vec(shape, z.data().chunks_exact(2).map(|c| wrap_phase(c[1].atan2(c[0]))).collect())
}

/// Row index of the conjugate partner of frequency row `kh`.
#[inline]
fn mirror(kh: usize, h: usize) -> usize {
    (h - kh) % h
}

fn hermitian_polar<T: Real>(amp: &Tensor<T>, phase: &Tensor<T>, width: usize) -> Tensor<T> {
    let [b, c, h, wf] = amp.dims4();
    assert_eq!(amp.shape(), phase.shape(), "polar: amplitude/phase shape mismatch");
    assert_eq!(wf, fft::half_width(width), "polar: packed width does not match {width}");
    let mut out = vec![T::zero(); amp.len() * 2];
    for plane in 0..b * c {
        let a = &amp.data()[plane * h * wf..(plane + 1) * h * wf];
        let p = &phase.data()[plane * h * wf..(plane + 1) * h * wf];
        let o = &mut out[plane * h * wf * 2..(plane + 1) * h * wf * 2];
        for kh in 0..h {
            for kw in 0..wf {
                let i = kh * wf + kw;
                let (re, im) = if fft::fold_weight(kw, width) == 1 {
                    let j = mirror(kh, h) * wf + kw;
                    let a_sym = (a[i] + a[j]) * lit(0.5);
                    let cs = p[i].cos() + p[j].cos();
                    let sn = p[i].sin() - p[j].sin();
                    let r = cs.hypot(sn);
                    if r > T::zero() {
                        (a_sym * cs / r, a_sym * sn / r)
                    } else {
                        (a_sym, T::zero())
                    }
                } else {
                    (a[i] * p[i].cos(), a[i] * p[i].sin())
                };
                o[2 * i] = re;
                o[2 * i + 1] = im;
            }
        }
    }
    let mut shape = amp.shape().to_vec();
    shape.push(2);
    Tensor::from_vec(&shape, out)
}

fn hermitian_polar_backward<T: Real>(
    amp: &Tensor<T>,
    phase: &Tensor<T>,
    g: &Tensor<T>,
    width: usize,
) -> (Tensor<T>, Tensor<T>) {
    let [b, c, h, wf] = amp.dims4();
    let mut ga = vec![T::zero(); amp.len()];
    let mut gp = vec![T::zero(); amp.len()];
    let half: T = lit(0.5);
    for plane in 0..b * c {
        let off = plane * h * wf;
        let a = &amp.data()[off..off + h * wf];
        let p = &phase.data()[off..off + h * wf];
        let go = &g.data()[2 * off..2 * (off + h * wf)];
        let ga = &mut ga[off..off + h * wf];
        let gp = &mut gp[off..off + h * wf];
        for kh in 0..h {
            for kw in 0..wf {
                let i = kh * wf + kw;
                let (gre, gim) = (go[2 * i], go[2 * i + 1]);
                if fft::fold_weight(kw, width) == 1 {
                    let j = mirror(kh, h) * wf + kw;
                    let a_sym = (a[i] + a[j]) * half;
                    let cs = p[i].cos() + p[j].cos();
                    let sn = p[i].sin() - p[j].sin();
                    let r = cs.hypot(sn);
                    if r <= T::zero() {
                        ga[i] += gre * half;
                        ga[j] += gre * half;
                        continue;
                    }
                    let (ux, uy) = (cs / r, sn / r);
                    let g_asym = gre * ux + gim * uy;
                    ga[i] += g_asym * half;
                    ga[j] += g_asym * half;
                    // d(u)/d(cs, sn) = (I - u u^T) / r
                    let proj = gre * ux + gim * uy;
                    let gcs = a_sym * (gre - ux * proj) / r;
                    let gsn = a_sym * (gim - uy * proj) / r;
                    gp[i] += -gcs * p[i].sin() + gsn * p[i].cos();
                    gp[j] += -gcs * p[j].sin() - gsn * p[j].cos();
                } else {
                    let (cs, sn) = (p[i].cos(), p[i].sin());
                    ga[i] += gre * cs + gim * sn;
                    gp[i] += a[i] * (gim * cs - gre * sn);
                }
            }
        }
    }
    (Tensor::from_vec(amp.shape(), ga), Tensor::from_vec(amp.shape(), gp))
}

fn softmax_last<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn check_same(a: &Tensor<impl Real>, b: &Tensor<impl Real>, op: &Op) {
    assert_eq!(a.shape(), b.shape(), "{op:?}: operand shapes differ");
}

/// Evaluates `op` on concrete arguments.
pub fn forward<T: Real>(op: &Op, args: &[&Tensor<T>]) -> Tensor<T> {
    match *op {
        Op::Neg => unary(args[0], |x| -x),
        Op::Scale(s) => {
            let s = lit::<T>(s);
            unary(args[0], |x| x * s)
        }
        Op::AddScalar(s) => {
            let s = lit::<T>(s);
            unary(args[0], |x| x + s)
        }
        Op::Sigmoid => unary(args[0], sigmoid),
        Op::Gelu => unary(args[0], gelu),
        Op::Relu => unary(args[0], |x| x.max(T::zero())),
        Op::Abs => unary(args[0], |x| x.abs()),
        Op::Square => unary(args[0], |x| x * x),
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (lit::<T>(lo), lit::<T>(hi));
            unary(args[0], |x| x.max(lo).min(hi))
        }
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            check_same(args[0], args[1], op);
            match op {
                Op::Add => args[0].zip_map(args[1], |a, b| a + b),
                Op::Sub => args[0].zip_map(args[1], |a, b| a - b),
                Op::Mul => args[0].zip_map(args[1], |a, b| a * b),
                _ => args[0].zip_map(args[1], |a, b| a / b),
            }
        }
        Op::BiasAdd => {
            let (b, c, p) = bcp(args[0].shape());
            assert_eq!(args[1].shape(), &[c], "bias length must match channels");
            let mut out = args[0].clone();
            for (i, chunk) in out.data_mut().chunks_exact_mut(p).enumerate() {
                let bv = args[1].data()[i % c];
                for v in chunk {
                    *v += bv;
                }
            }
            debug_assert_eq!(out.len(), b * c * p);
            out
        }
        Op::ScaleChannels => {
            let (b, c, p) = bcp(args[0].shape());
            assert_eq!(args[1].shape(), &[b, c], "channel scales must be [B, C]");
            let mut out = args[0].clone();
            for (chunk, &s) in out.data_mut().chunks_exact_mut(p).zip(args[1].data()) {
                for v in chunk {
                    *v *= s;
                }
            }
            out
        }
        Op::CenterChannels => {
            let (b, c, p) = bcp(args[0].shape());
            let mut out = args[0].clone();
            let inv_c = T::one() / lit::<T>(c as f64);
            let mut mean = vec![T::zero(); p];
            for n in 0..b {
                let xs = &mut out.data_mut()[n * c * p..(n + 1) * c * p];
                mean.fill(T::zero());
                for ch in 0..c {
                    for (m, &v) in mean.iter_mut().zip(&xs[ch * p..(ch + 1) * p]) {
                        *m += v;
                    }
                }
                for ch in 0..c {
                    for (v, &m) in xs[ch * p..(ch + 1) * p].iter_mut().zip(&mean) {
                        *v -= m * inv_c;
                    }
                }
            }
            out
        }
        Op::GlobalAvgPool => {
            let (b, c, p) = bcp(args[0].shape());
            let inv = T::one() / lit::<T>(p as f64);
            let data = args[0].data().chunks_exact(p).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
            Tensor::from_vec(&[b, c], data)
        }
        Op::Linear => {
            let (x, w, bias) = (args[0], args[1], args[2]);
            let (b, i) = (x.shape()[0], x.shape()[1]);
            let o = w.shape()[0];
            assert_eq!(w.shape(), &[o, i], "linear weight shape");
            let mut out = vec![T::zero(); b * o];
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(bias.data());
            }
            T::gemm(b, i, o, T::one(), x.data(), false, w.data(), true, T::one(), &mut out);
            Tensor::from_vec(&[b, o], out)
        }
        Op::Softmax => softmax_last(args[0]),
        Op::Mean => Tensor::scalar(args[0].mean()),
        Op::Conv2d { stride, pad } => conv::conv2d(args[0], args[1], args[2], stride, pad),
        Op::DepthwiseConv2d { pad } => conv::depthwise(args[0], args[1], args[2], pad),
        Op::ConvTranspose2x2 => conv::conv_transpose2x2(args[0], args[1], args[2]),
        Op::AvgPool => spatial::avg_pool(args[0]),
        Op::MaxPool => spatial::max_pool(args[0]),
        Op::ResizeBilinear { height, width } => spatial::resize_bilinear(args[0], height, width),
        Op::Crop { y0, x0, height, width } => args[0].crop(y0, x0, height, width),
        Op::LayerNormChannels { eps } => layer_norm(args[0], args[1], args[2], eps),
        Op::Attention { heads } => attention::forward(args[0], args[1], args[2], heads),
        Op::Rfft2 => {
            let [b, c, h, w] = args[0].dims4();
            let out = fft::rfft2(args[0].data(), b * c, h, w);
            Tensor::from_vec(&[b, c, h, fft::half_width(w), 2], out)
        }
        Op::ComplexAbs => complex_abs(args[0]),
        Op::ComplexAngle => complex_angle(args[0]),
        Op::HermitianPolar { width } => hermitian_polar(args[0], args[1], width),
        Op::Irfft2 { width } => {
            let s = args[0].shape();
            let (b, c, h) = (s[0], s[1], s[2]);
            assert_eq!(s[3], fft::half_width(width), "irfft2: packed width does not match {width}");
            let out = fft::irfft2(args[0].data(), b * c, h, width);
            Tensor::from_vec(&[b, c, h, width], out)
        }
        Op::GaussianBlurValid { size, sigma } => spatial::blur_valid(args[0], &spatial::gaussian_window(size, sigma)),
    }
}

/// Gradients of `op`'s arguments given the gradient of its output.
///
/// `needs[i]` is false when argument `i` does not require a gradient; the
/// corresponding slot may then be `None`.
pub fn backward<T: Real>(
    op: &Op,
    args: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let x = args[0];
    match *op {
        Op::Neg => vec![Some(g.map(|v| -v))],
        Op::Scale(s) => {
            let s = lit::<T>(s);
            vec![Some(g.map(|v| v * s))]
        }
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Sigmoid => vec![Some(g.zip_map(out, |gv, y| gv * y * (T::one() - y)))],
        Op::Gelu => vec![Some(g.zip_map(x, |gv, xv| gv * gelu_grad(xv)))],
        Op::Relu => vec![Some(g.zip_map(x, |gv, xv| if xv > T::zero() { gv } else { T::zero() }))],
        Op::Abs => vec![Some(g.zip_map(x, |gv, xv| {
            if xv > T::zero() {
                gv
            } else if xv < T::zero() {
                -gv
            } else {
                T::zero()
            }
        }))],
        Op::Square => vec![Some(g.zip_map(x, |gv, xv| gv * (xv + xv)))],
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (lit::<T>(lo), lit::<T>(hi));
            vec![Some(g.zip_map(x, |gv, xv| if xv >= lo && xv <= hi { gv } else { T::zero() }))]
        }
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Op::Mul => vec![
            needs[0].then(|| g.zip_map(args[1], |gv, b| gv * b)),
            needs[1].then(|| g.zip_map(x, |gv, a| gv * a)),
        ],
        Op::Div => {
            let b = args[1];
            vec![
                needs[0].then(|| g.zip_map(b, |gv, bv| gv / bv)),
                needs[1].then(|| {
                    let mut t = g.zip_map(out, |gv, y| -gv * y);
                    for (v, &bv) in t.data_mut().iter_mut().zip(b.data()) {
                        *v /= bv;
                    }
                    t
                }),
            ]
        }
        Op::BiasAdd => {
            let (_, c, p) = bcp(x.shape());
            let mut gb = vec![T::zero(); c];
            for (i, chunk) in g.data().chunks_exact(p).enumerate() {
                gb[i % c] += chunk.iter().copied().sum::<T>();
            }
            vec![Some(g.clone()), Some(Tensor::from_vec(&[c], gb))]
        }
        Op::ScaleChannels => {
            let (_, _, p) = bcp(x.shape());
            let s = args[1];
            let gx = needs[0].then(|| {
                let mut t = g.clone();
                for (chunk, &sv) in t.data_mut().chunks_exact_mut(p).zip(s.data()) {
                    for v in chunk {
                        *v *= sv;
                    }
                }
                t
            });
            let gs: Vec<T> = g
                .data()
                .chunks_exact(p)
                .zip(x.data().chunks_exact(p))
                .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                .collect();
            vec![gx, Some(Tensor::from_vec(s.shape(), gs))]
        }
        // the centering map is symmetric and idempotent, so it is its own adjoint
        Op::CenterChannels => vec![Some(forward(&Op::CenterChannels, &[g]))],
        Op::GlobalAvgPool => {
            let (_, _, p) = bcp(x.shape());
            let inv = T::one() / lit::<T>(p as f64);
            let mut gx = Tensor::zeros(x.shape());
            for (chunk, &gv) in gx.data_mut().chunks_exact_mut(p).zip(g.data()) {
                chunk.fill(gv * inv);
            }
            vec![Some(gx)]
        }
        Op::Linear => {
            let w = args[1];
            let (b, i) = (x.shape()[0], x.shape()[1]);
            let o = w.shape()[0];
            let gx = needs[0].then(|| {
                let mut t = vec![T::zero(); b * i];
                T::gemm(b, o, i, T::one(), g.data(), false, w.data(), false, T::zero(), &mut t);
                Tensor::from_vec(&[b, i], t)
            });
            let mut gw = vec![T::zero(); o * i];
            T::gemm(o, b, i, T::one(), g.data(), true, x.data(), false, T::zero(), &mut gw);
            let mut gb = vec![T::zero(); o];
            for row in g.data().chunks_exact(o) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![gx, Some(Tensor::from_vec(&[o, i], gw)), Some(Tensor::from_vec(&[o], gb))]
        }
        Op::Softmax => {
            let n = *out.shape().last().unwrap();
            let mut gx = g.clone();
            for (grow, yrow) in gx.data_mut().chunks_exact_mut(n).zip(out.data().chunks_exact(n)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (gv, &y) in grow.iter_mut().zip(yrow) {
                    *gv = y * (*gv - dot);
                }
            }
            vec![Some(gx)]
        }
        Op::Mean => {
            let share = g.item() / lit::<T>(x.len() as f64);
            vec![Some(Tensor::full(x.shape(), share))]
        }
        Op::Conv2d { stride, pad } => {
            let (gx, gw, gb) = conv::conv2d_backward(x, args[1], g, stride, pad, needs[0]);
            vec![gx, Some(gw), Some(gb)]
        }
        Op::DepthwiseConv2d { pad } => {
            let (gx, gw, gb) = conv::depthwise_backward(x, args[1], g, pad, needs[0]);
            vec![gx, Some(gw), Some(gb)]
        }
        Op::ConvTranspose2x2 => {
            let (gx, gw, gb) = conv::conv_transpose2x2_backward(x, args[1], g, needs[0]);
            vec![gx, Some(gw), Some(gb)]
        }
        Op::AvgPool => vec![Some(spatial::avg_pool_backward(x.shape(), g))],
        Op::MaxPool => vec![Some(spatial::max_pool_backward(x, g))],
        Op::ResizeBilinear { height, width } => {
            let [_, _, h, w] = x.dims4();
            if (h, w) == (height, width) {
                return vec![Some(g.clone())];
            }
            let rows = spatial::Taps::bilinear(h, height);
            let cols = spatial::Taps::bilinear(w, width);
            vec![Some(spatial::resample_backward(x.shape(), g, &rows, &cols))]
        }
        Op::Crop { y0, x0, height, width } => {
            let [_, _, h, w] = x.dims4();
            let mut gx = Tensor::zeros(x.shape());
            for (dst, src) in gx.data_mut().chunks_exact_mut(h * w).zip(g.data().chunks_exact(height * width)) {
                for y in 0..height {
                    dst[(y0 + y) * w + x0..(y0 + y) * w + x0 + width].copy_from_slice(&src[y * width..(y + 1) * width]);
                }
            }
            vec![Some(gx)]
        }
        Op::LayerNormChannels { eps } => {
            let (gx, gg, gb) = layer_norm_backward(x, args[1], g, eps);
            vec![Some(gx), Some(gg), Some(gb)]
        }
        Op::Attention { heads } => {
            let (gq, gk, gv) = attention::backward(x, args[1], args[2], g, heads);
            vec![Some(gq), Some(gk), Some(gv)]
        }
        Op::Rfft2 => {
            let [b, c, h, w] = x.dims4();
            vec![Some(Tensor::from_vec(x.shape(), fft::rfft2_backward(g.data(), b * c, h, w)))]
        }
        Op::ComplexAbs => {
            let mut gz = vec![T::zero(); x.len()];
            for ((gzc, zc), (&gv, &a)) in gz.chunks_exact_mut(2).zip(x.data().chunks_exact(2)).zip(g.data().iter().zip(out.data())) {
                if a > T::zero() {
                    gzc[0] = gv * zc[0] / a;
                    gzc[1] = gv * zc[1] / a;
                }
            }
            vec![Some(Tensor::from_vec(x.shape(), gz))]
        }
        Op::ComplexAngle => {
            let mut gz = vec![T::zero(); x.len()];
            for ((gzc, zc), &gv) in gz.chunks_exact_mut(2).zip(x.data().chunks_exact(2)).zip(g.data()) {
                let r2 = zc[0] * zc[0] + zc[1] * zc[1];
                if r2 > T::zero() {
                    gzc[0] = -gv * zc[1] / r2;
                    gzc[1] = gv * zc[0] / r2;
                }
            }
            vec![Some(Tensor::from_vec(x.shape(), gz))]
        }
        Op::HermitianPolar { width } => {
            let (ga, gp) = hermitian_polar_backward(x, args[1], g, width);
            vec![Some(ga), Some(gp)]
        }
        Op::Irfft2 { width } => {
            let s = x.shape();
            let (b, c, h) = (s[0], s[1], s[2]);
            vec![Some(Tensor::from_vec(s, fft::irfft2_backward(g.data(), b * c, h, width)))]
        }
        Op::GaussianBlurValid { size, sigma } => {
            vec![Some(spatial::blur_valid_backward(x.shape(), g, &spatial::gaussian_window(size, sigma)))]
        }
    }
}
