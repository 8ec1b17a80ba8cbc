//! Pooling, resampling and fixed-kernel blurs.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Output length of a kernel-3, stride-2, padding-1 pool.
#[inline]
pub fn pooled_len(len: usize) -> usize {
    (len + 1) / 2
}

/// Input window `[lo, hi)` of pooled index `o` along an axis of length `len`.
#[inline]
fn window(o: usize, len: usize) -> (usize, usize) {
    let lo = (2 * o).saturating_sub(1);
    let hi = (2 * o + 2).min(len);
    (lo, hi)
}

/// 3x3 average pool, stride 2, padding 1; padded cells are excluded from the divisor.
pub fn avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.dims4();
    let (ho, wo) = (pooled_len(h), pooled_len(w));
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for plane in x.data().chunks_exact(h * w) {
        for oy in 0..ho {
            let (y0, y1) = window(oy, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, w);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += plane[y * w + xx];
                    }
                }
                out.push(acc / lit::<T>(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Tensor::from_vec(&[b, c, ho, wo], out)
}

pub fn avg_pool_backward<T: Real>(x_shape: &[usize], gout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (ho, wo) = (pooled_len(h), pooled_len(w));
    let mut gx = Tensor::zeros(x_shape);
    for (dst, go) in gx.data_mut().chunks_exact_mut(h * w).zip(gout.data().chunks_exact(ho * wo)) {
        for oy in 0..ho {
            let (y0, y1) = window(oy, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, w);
                let share = go[oy * wo + ox] / lit::<T>(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dst[y * w + xx] += share;
                    }
                }
            }
        }
    }
    gx
}

/// Flat in-plane index of the first maximum inside each pooling window.
fn argmax_windows<T: Real>(plane: &[T], h: usize, w: usize) -> Vec<usize> {
    let (ho, wo) = (pooled_len(h), pooled_len(w));
    let mut idx = Vec::with_capacity(ho * wo);
    for oy in 0..ho {
        let (y0, y1) = window(oy, h);
        for ox in 0..wo {
            let (x0, x1) = window(ox, w);
            let mut best = y0 * w + x0;
            for y in y0..y1 {
                for xx in x0..x1 {
                    if plane[y * w + xx] > plane[best] {
                        best = y * w + xx;
                    }
                }
            }
            idx.push(best);
        }
    }
    idx
}

/// 3x3 max pool, stride 2, padding 1 (padding never wins).
pub fn max_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.dims4();
    let mut out = Vec::with_capacity(b * c * pooled_len(h) * pooled_len(w));
    for plane in x.data().chunks_exact(h * w) {
        out.extend(argmax_windows(plane, h, w).into_iter().map(|i| plane[i]));
    }
    Tensor::from_vec(&[b, c, pooled_len(h), pooled_len(w)], out)
}

pub fn max_pool_backward<T: Real>(x: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = x.dims4();
    let plane_out = pooled_len(h) * pooled_len(w);
    let mut gx = Tensor::zeros(x.shape());
    for ((dst, plane), go) in gx
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(x.data().chunks_exact(h * w))
        .zip(gout.data().chunks_exact(plane_out))
    {
        for (i, g) in argmax_windows(plane, h, w).into_iter().zip(go) {
            dst[i] += *g;
        }
    }
    gx
}

/// Sparse 1-D resampling matrix: for every output index, `(input index, weight)` taps.
#[derive(Clone, Debug)]
pub struct Taps<T> {
    pub taps: Vec<Vec<(usize, T)>>,
}

impl<T: Real> Taps<T> {
    /// Bilinear taps with half-pixel centers (no anti-aliasing).
    pub fn bilinear(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let taps = (0..output)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let frac = src - i0 as f64;
                if i1 == i0 || frac == 0.0 {
                    vec![(i0, T::one())]
                } else {
                    vec![(i0, lit(1.0 - frac)), (i1, lit(frac))]
                }
            })
            .collect();
        Self { taps }
    }

    /// Triangle-filter taps whose support widens with the downscale factor
    /// (anti-aliased bilinear). Identical to [`Taps::bilinear`] when upsampling.
    pub fn antialiased(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        if scale <= 1.0 {
            return Self::bilinear(input, output);
        }
        let support = scale;
        let taps = (0..output)
            .map(|o| {
                let center = (o as f64 + 0.5) * scale;
                let lo = ((center - support).floor().max(0.0)) as usize;
                let hi = ((center + support).ceil() as usize).min(input);
                let mut row: Vec<(usize, f64)> = (lo..hi)
                    .map(|i| {
                        let d = ((i as f64 + 0.5) - center).abs() / support;
                        (i, (1.0 - d).max(0.0))
                    })
                    .filter(|&(_, wt)| wt > 0.0)
                    .collect();
                let total: f64 = row.iter().map(|&(_, wt)| wt).sum();
                for t in &mut row {
                    t.1 /= total;
                }
                row.into_iter().map(|(i, wt)| (i, lit(wt))).collect()
            })
            .collect();
        Self { taps }
    }

    fn output(&self) -> usize {
        self.taps.len()
    }
}

/// Separable resampling of every `[H, W]` plane of a rank-4 tensor.
pub fn resample<T: Real>(x: &Tensor<T>, rows: &Taps<T>, cols: &Taps<T>) -> Tensor<T> {
    let [b, c, h, w] = x.dims4();
    let (ho, wo) = (rows.output(), cols.output());
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut tmp = vec![T::zero(); h * wo];
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (ox, taps) in cols.taps.iter().enumerate() {
                tmp[y * wo + ox] = taps.iter().map(|&(i, wt)| src[i] * wt).sum();
            }
        }
        for taps in &rows.taps {
            let start = out.len();
            out.resize(start + wo, T::zero());
            for &(iy, wt) in taps {
                for (d, &s) in out[start..].iter_mut().zip(&tmp[iy * wo..(iy + 1) * wo]) {
                    *d += s * wt;
                }
            }
        }
    }
    Tensor::from_vec(&[b, c, ho, wo], out)
}

pub fn resample_backward<T: Real>(x_shape: &[usize], gout: &Tensor<T>, rows: &Taps<T>, cols: &Taps<T>) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (ho, wo) = (rows.output(), cols.output());
    let mut gx = Tensor::zeros(x_shape);
    let mut tmp = vec![T::zero(); h * wo];
    for (dst, go) in gx.data_mut().chunks_exact_mut(h * w).zip(gout.data().chunks_exact(ho * wo)) {
        tmp.fill(T::zero());
        for (oy, taps) in rows.taps.iter().enumerate() {
            for &(iy, wt) in taps {
                for (d, &g) in tmp[iy * wo..(iy + 1) * wo].iter_mut().zip(&go[oy * wo..(oy + 1) * wo]) {
                    *d += g * wt;
                }
            }
        }
        for y in 0..h {
            for (ox, taps) in cols.taps.iter().enumerate() {
                let g = tmp[y * wo + ox];
                for &(ix, wt) in taps {
                    dst[y * w + ix] += g * wt;
                }
            }
        }
    }
    gx
}

/// Bilinear resize (half-pixel centers); the identity when the size is unchanged.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, height: usize, width: usize) -> Tensor<T> {
    let [_, _, h, w] = x.dims4();
    if (h, w) == (height, width) {
        return x.clone();
    }
    resample(x, &Taps::bilinear(h, height), &Taps::bilinear(w, width))
}

/// Anti-aliased bilinear resize used for multi-scale targets.
pub fn resize_antialiased<T: Real>(x: &Tensor<T>, height: usize, width: usize) -> Tensor<T> {
    let [_, _, h, w] = x.dims4();
    if (h, w) == (height, width) {
        return x.clone();
    }
    resample(x, &Taps::antialiased(h, height), &Taps::antialiased(w, width))
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window<T: Real>(size: usize, sigma: f64) -> Vec<T> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| Float::exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| lit(v / total)).collect()
}

/// Separable Gaussian blur over each plane, keeping only fully covered ("valid") positions.
pub fn blur_valid<T: Real>(x: &Tensor<T>, kernel: &[T]) -> Tensor<T> {
    let [b, c, h, w] = x.dims4();
    let k = kernel.len();
    assert!(h >= k && w >= k, "blur_valid: {h}x{w} plane smaller than {k}-tap window");
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![T::zero(); b * c * ho * wo];
    let mut tmp = vec![T::zero(); h * wo];
    for (plane, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for ox in 0..wo {
                tmp[y * wo + ox] = kernel.iter().zip(&src[ox..ox + k]).map(|(&g, &s)| g * s).sum();
            }
        }
        for oy in 0..ho {
            let drow = &mut dst[oy * wo..(oy + 1) * wo];
            for (i, &g) in kernel.iter().enumerate() {
                for (d, &s) in drow.iter_mut().zip(&tmp[(oy + i) * wo..(oy + i + 1) * wo]) {
                    *d += g * s;
                }
            }
        }
    }
    Tensor::from_vec(&[b, c, ho, wo], out)
}

pub fn blur_valid_backward<T: Real>(x_shape: &[usize], gout: &Tensor<T>, kernel: &[T]) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut gx = Tensor::zeros(x_shape);
    let mut tmp = vec![T::zero(); h * wo];
    for (dst, go) in gx.data_mut().chunks_exact_mut(h * w).zip(gout.data().chunks_exact(ho * wo)) {
        tmp.fill(T::zero());
        for oy in 0..ho {
            for (i, &g) in kernel.iter().enumerate() {
                for (d, &s) in tmp[(oy + i) * wo..(oy + i + 1) * wo].iter_mut().zip(&go[oy * wo..(oy + 1) * wo]) {
                    *d += g * s;
                }
            }
        }
        for y in 0..h {
            let row = &mut dst[y * w..(y + 1) * w];
            for ox in 0..wo {
                let gv = tmp[y * wo + ox];
                for (d, &g) in row[ox..ox + k].iter_mut().zip(kernel) {
                    *d += g * gv;
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_windows_cover_edges() {
        assert_eq!(window(0, 8), (0, 2));
        assert_eq!(window(1, 8), (1, 4));
        assert_eq!(window(3, 8), (5, 8));
        assert_eq!(window(2, 5), (3, 5));
        assert_eq!(pooled_len(8), 4);
        assert_eq!(pooled_len(7), 4);
    }

    #[test]
    fn antialiased_halving_is_1331() {
        let t = Taps::<f64>::antialiased(8, 4);
        let row = &t.taps[1];
        let w: Vec<f64> = row.iter().map(|&(_, w)| w).collect();
        assert_eq!(row.iter().map(|&(i, _)| i).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        for (a, b) in w.iter().zip(&[0.125, 0.375, 0.375, 0.125]) {
            assert!((a - b).abs() < 1e-12);
        }
        // edge rows renormalize over the in-range taps
        let s: f64 = t.taps[0].iter().map(|&(_, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_identity_and_constant_preservation() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 5, 6], |i| i as f64);
        assert_eq!(resize_bilinear(&x, 5, 6), x);
        let c = Tensor::<f64>::full(&[1, 1, 4, 4], 0.3);
        let up = resize_bilinear(&c, 8, 8);
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn gaussian_window_is_normalized_and_symmetric() {
        let g = gaussian_window::<f64>(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..11 {
            assert!((g[i] - g[10 - i]).abs() < 1e-15);
        }
    }
}
