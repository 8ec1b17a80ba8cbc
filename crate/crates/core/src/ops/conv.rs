//! Dense, depthwise and transposed 2-D convolutions on `[B, C, H, W]` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{axpy, dot, Real};
use crate::tensor::Tensor;

#[inline]
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[ox0, ox1)` whose input column `ox * stride + kx - pad` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        // ox * s + kx - p <= w - 1  =>  ox <= (w - 1 + p - kx) / s
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (ox0, ox1) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..ox0].fill(T::zero());
                    line[ox1..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.pad;
                        line[ox0..ox1].copy_from_slice(&srow[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            line[ox] = srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geometry, gx: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let dst = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (ox0, ox1) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in ox0..ox1 {
                        drow[ox * g.stride + kx - g.pad] += line[ox];
                    }
                }
            }
        }
    }
}

fn geometry(x: &Tensor<impl Real>, w: &Tensor<impl Real>, stride: usize, pad: usize) -> (usize, usize, Geometry) {
    let [b, cin, h, wd] = x.dims4();
    let [cout, wcin, k, k2] = w.dims4();
    assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
    assert_eq!(k, k2, "conv2d: only square kernels are supported");
    assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: input smaller than kernel");
    let g = Geometry {
        cin,
        h,
        w: wd,
        k,
        stride,
        pad,
        ho: conv_out_len(h, k, stride, pad),
        wo: conv_out_len(wd, k, stride, pad),
    };
    (b, cout, g)
}

pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let (b, cout, g) = geometry(x, w, stride, pad);
    let kk = g.cin * g.k * g.k;
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); b * cout * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * plane] };
    for n in 0..b {
        let xs = &x.data()[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let os = &mut out[n * cout * plane..(n + 1) * cout * plane];
        for (o, row) in os.chunks_exact_mut(plane).enumerate() {
            row.fill(bias.data()[o]);
        }
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        T::gemm(cout, kk, plane, T::one(), w.data(), false, rhs, false, T::one(), os);
    }
    Tensor::from_vec(&[b, cout, g.ho, g.wo], out)
}

/// Returns gradients for `(x, w, bias)`; `need_x` skips the input gradient.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (b, cout, g) = geometry(x, w, stride, pad);
    let kk = g.cin * g.k * g.k;
    let plane = g.ho * g.wo;
    let mut gw = vec![T::zero(); cout * kk];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * plane] };
    let mut gcols = if need_x && !g.is_pointwise() { vec![T::zero(); kk * plane] } else { Vec::new() };
    for n in 0..b {
        let xs = &x.data()[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let go = &gout.data()[n * cout * plane..(n + 1) * cout * plane];
        for (o, row) in go.chunks_exact(plane).enumerate() {
            gb[o] += row.iter().copied().sum::<T>();
        }
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        T::gemm(cout, plane, kk, T::one(), go, false, rhs, true, T::one(), &mut gw);
        if need_x {
            let gxs = &mut gx[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            if g.is_pointwise() {
                T::gemm(kk, cout, plane, T::one(), w.data(), true, go, false, T::zero(), gxs);
            } else {
                T::gemm(kk, cout, plane, T::one(), w.data(), true, go, false, T::zero(), &mut gcols);
                col2im(&gcols, &g, gxs);
            }
        }
    }
    (
        need_x.then(|| Tensor::from_vec(x.shape(), gx)),
        Tensor::from_vec(w.shape(), gw),
        Tensor::from_vec(&[cout], gb),
    )
}

/// Zero-padded copy of one plane with row stride `w + 2 * pad`.
///
/// In this layout every kernel tap of a stride-1 convolution is a single
/// contiguous shift, so each tap becomes one long `axpy` or `dot`.
fn pad_plane<T: Real>(src: &[T], h: usize, w: usize, pad: usize, dst: &mut [T]) {
    let wp = w + 2 * pad;
    dst.fill(T::zero());
    for y in 0..h {
        dst[(y + pad) * wp + pad..(y + pad) * wp + pad + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

struct PaddedGeometry {
    k: usize,
    wp: usize,
    hp: usize,
    ho: usize,
    wo: usize,
    /// Length of the strided output span `(ho - 1) * wp + wo`.
    span: usize,
}

impl PaddedGeometry {
    fn new(h: usize, w: usize, k: usize, pad: usize) -> Self {
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        assert!(hp >= k && wp >= k, "depthwise: kernel {k} larger than padded input {hp}x{wp}");
        let (ho, wo) = (hp - k + 1, wp - k + 1);
        Self { k, wp, hp, ho, wo, span: (ho - 1) * wp + wo }
    }

    fn offset(&self, tap: usize) -> usize {
        (tap / self.k) * self.wp + tap % self.k
    }
}

/// Depthwise convolution with a `[C, 1, k, k]` weight, stride 1.
pub fn depthwise<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, pad: usize) -> Tensor<T> {
    let [b, c, h, wd] = x.dims4();
    let [wc, one, k, _] = w.dims4();
    assert!(wc == c && one == 1, "depthwise: weight shape {:?} does not fit {c} channels", w.shape());
    let g = PaddedGeometry::new(h, wd, k, pad);
    let mut out = vec![T::zero(); b * c * g.ho * g.wo];
    let mut xp = vec![T::zero(); g.hp * g.wp];
    let mut acc = vec![T::zero(); g.span];
    for n in 0..b {
        for ch in 0..c {
            let plane = n * c + ch;
            pad_plane(&x.data()[plane * h * wd..(plane + 1) * h * wd], h, wd, pad, &mut xp);
            acc.fill(bias.data()[ch]);
            for (tap, &wv) in w.data()[ch * k * k..(ch + 1) * k * k].iter().enumerate() {
                let off = g.offset(tap);
                axpy(wv, &xp[off..off + g.span], &mut acc);
            }
            let dst = &mut out[plane * g.ho * g.wo..(plane + 1) * g.ho * g.wo];
            for oy in 0..g.ho {
                dst[oy * g.wo..(oy + 1) * g.wo].copy_from_slice(&acc[oy * g.wp..oy * g.wp + g.wo]);
            }
        }
    }
    Tensor::from_vec(&[b, c, g.ho, g.wo], out)
}

pub fn depthwise_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    pad: usize,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [b, c, h, wd] = x.dims4();
    let [_, _, k, _] = w.dims4();
    let g = PaddedGeometry::new(h, wd, k, pad);
    let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); c];
    let mut xp = vec![T::zero(); g.hp * g.wp];
    let mut gxp = vec![T::zero(); g.hp * g.wp];
    // output gradient in the strided layout, zero in the gap columns
    let mut gp = vec![T::zero(); g.span];
    for n in 0..b {
        for ch in 0..c {
            let plane = n * c + ch;
            pad_plane(&x.data()[plane * h * wd..(plane + 1) * h * wd], h, wd, pad, &mut xp);
            let go = &gout.data()[plane * g.ho * g.wo..(plane + 1) * g.ho * g.wo];
            gb[ch] += crate::real::sum(go);
            for oy in 0..g.ho {
                gp[oy * g.wp..oy * g.wp + g.wo].copy_from_slice(&go[oy * g.wo..(oy + 1) * g.wo]);
            }
            gxp.fill(T::zero());
            let taps = &w.data()[ch * k * k..(ch + 1) * k * k];
            for (tap, &wv) in taps.iter().enumerate() {
                let off = g.offset(tap);
                gw[ch * k * k + tap] += dot(&gp, &xp[off..off + g.span]);
                if need_x {
                    axpy(wv, &gp, &mut gxp[off..off + g.span]);
                }
            }
            if need_x {
                let dst = &mut gx[plane * h * wd..(plane + 1) * h * wd];
                for y in 0..h {
                    let row = (y + pad) * g.wp + pad;
                    dst[y * wd..(y + 1) * wd].copy_from_slice(&gxp[row..row + wd]);
                }
            }
        }
    }
    (
        need_x.then(|| Tensor::from_vec(x.shape(), gx)),
        Tensor::from_vec(w.shape(), gw),
        Tensor::from_vec(&[c], gb),
    )
}

/// Copies the `[Cin, Cout]` tap matrix `w[:, :, dy, dx]` out of a `[Cin, Cout, 2, 2]` weight.
fn tap_matrix<T: Real>(w: &Tensor<T>, dy: usize, dx: usize) -> Vec<T> {
    let [cin, cout, _, _] = w.dims4();
    let mut m = Vec::with_capacity(cin * cout);
    for i in 0..cin {
        for o in 0..cout {
            m.push(w.data()[((i * cout + o) * 2 + dy) * 2 + dx]);
        }
    }
    m
}

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
pub fn conv_transpose2x2<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let [b, cin, h, wd] = x.dims4();
    let [wcin, cout, kh, kw] = w.dims4();
    assert!(wcin == cin && kh == 2 && kw == 2, "conv_transpose2x2: bad weight shape {:?}", w.shape());
    let plane = h * wd;
    let (ho, wo) = (2 * h, 2 * wd);
    let mut out = vec![T::zero(); b * cout * ho * wo];
    let mut tmp = vec![T::zero(); cout * plane];
    for dy in 0..2 {
        for dx in 0..2 {
            let tap = tap_matrix(w, dy, dx);
            for n in 0..b {
                let xs = &x.data()[n * cin * plane..(n + 1) * cin * plane];
                T::gemm(cout, cin, plane, T::one(), &tap, true, xs, false, T::zero(), &mut tmp);
                let os = &mut out[n * cout * ho * wo..(n + 1) * cout * ho * wo];
                for o in 0..cout {
                    let bv = bias.data()[o];
                    for y in 0..h {
                        let drow = &mut os[o * ho * wo + (2 * y + dy) * wo..];
                        let srow = &tmp[o * plane + y * wd..o * plane + (y + 1) * wd];
                        for (xx, &v) in srow.iter().enumerate() {
                            drow[2 * xx + dx] = v + bv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, cout, ho, wo], out)
}

pub fn conv_transpose2x2_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [b, cin, h, wd] = x.dims4();
    let [_, cout, _, _] = w.dims4();
    let plane = h * wd;
    let (ho, wo) = (2 * h, 2 * wd);
    let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); cout];
    let mut gtap = vec![T::zero(); cin * cout];
    let mut gy = vec![T::zero(); cout * plane];
    for n in 0..b {
        let go = &gout.data()[n * cout * ho * wo..(n + 1) * cout * ho * wo];
        for o in 0..cout {
            gb[o] += go[o * ho * wo..(o + 1) * ho * wo].iter().copied().sum::<T>();
        }
    }
    for dy in 0..2 {
        for dx in 0..2 {
            let tap = tap_matrix(w, dy, dx);
            gtap.fill(T::zero());
            for n in 0..b {
                let go = &gout.data()[n * cout * ho * wo..(n + 1) * cout * ho * wo];
                for o in 0..cout {
                    for y in 0..h {
                        let srow = &go[o * ho * wo + (2 * y + dy) * wo..];
                        let drow = &mut gy[o * plane + y * wd..o * plane + (y + 1) * wd];
                        for (xx, d) in drow.iter_mut().enumerate() {
                            *d = srow[2 * xx + dx];
                        }
                    }
                }
                let xs = &x.data()[n * cin * plane..(n + 1) * cin * plane];
                T::gemm(cin, plane, cout, T::one(), xs, false, &gy, true, T::one(), &mut gtap);
                if need_x {
                    let gxs = &mut gx[n * cin * plane..(n + 1) * cin * plane];
                    T::gemm(cin, cout, plane, T::one(), &tap, false, &gy, false, T::one(), gxs);
                }
            }
            for i in 0..cin {
                for o in 0..cout {
                    gw[((i * cout + o) * 2 + dy) * 2 + dx] += gtap[i * cout + o];
                }
            }
        }
    }
    (
        need_x.then(|| Tensor::from_vec(x.shape(), gx)),
        Tensor::from_vec(w.shape(), gw),
        Tensor::from_vec(&[cout], gb),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let [bn, ci, h, wd] = x.dims4();
        let [co, _, k, _] = w.dims4();
        let (ho, wo) = (conv_out_len(h, k, s, p), conv_out_len(wd, k, s, p));
        Tensor::from_fn(&[bn, co, ho, wo], |idx| {
            let ox = idx % wo;
            let oy = (idx / wo) % ho;
            let o = (idx / (wo * ho)) % co;
            let n = idx / (wo * ho * co);
            let mut acc = b.data()[o];
            for c in 0..ci {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let ix = (ox * s + kx) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                                * x.data()[((n * ci + c) * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| num_traits::Float::sin(i as f64 * 0.731 + seed))
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        for &(k, s, p) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 1, 0), (2, 2, 0)] {
            let x = pseudo(&[2, 3, 7, 6], 0.1);
            let w = pseudo(&[4, 3, k, k], 0.7);
            let b = pseudo(&[4], 1.3);
            let got = conv2d(&x, &w, &b, s, p);
            let want = naive_conv(&x, &w, &b, s, p);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn depthwise_matches_grouped_direct_sum() {
        let x = pseudo(&[1, 3, 9, 8], 0.4);
        let w = pseudo(&[3, 1, 7, 7], 0.2);
        let b = pseudo(&[3], 0.9);
        let got = depthwise(&x, &w, &b, 3);
        for ch in 0..3 {
            let xc = Tensor::from_vec(&[1, 1, 9, 8], x.data()[ch * 72..(ch + 1) * 72].to_vec());
            let wc = Tensor::from_vec(&[1, 1, 7, 7], w.data()[ch * 49..(ch + 1) * 49].to_vec());
            let bc = Tensor::from_vec(&[1], vec![b.data()[ch]]);
            let want = naive_conv(&xc, &wc, &bc, 1, 3);
            let g = &got.data()[ch * 72..(ch + 1) * 72];
            for (a, b) in g.iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_conv_places_taps() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]);
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[1], vec![0.5]);
        let y = conv_transpose2x2(&x, &w, &b);
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
    }
}
