//! Complex FFT (radix-2 with Bluestein fallback) and the packed real 2-D transforms.
//!
//! Conventions: the forward transform is unnormalized (`e^{-i...}`); the
//! inverse real transform divides by `H * W`. The half spectrum keeps
//! `W / 2 + 1` columns and is stored interleaved as `[.., H, Wf, 2]`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::real::{lit, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Cplx<T> {
    pub re: T,
    pub im: T,
}

impl<T: Real> Cplx<T> {
    #[inline(always)]
    pub fn new(re: T, im: T) -> Self {
        Self { re, im }
    }

    #[inline(always)]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }

    #[inline(always)]
    fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }
}

fn unit<T: Real>(angle: f64) -> Cplx<T> {
    Cplx::new(lit(Float::cos(angle)), lit(Float::sin(angle)))
}

enum Kernel<T> {
    Radix2 { twiddles: Vec<Cplx<T>> },
    Bluestein {
        inner: alloc::boxed::Box<Plan<T>>,
        chirp: Vec<Cplx<T>>,
        filter: Vec<Cplx<T>>,
    },
}

/// A reusable complex FFT of fixed length.
pub struct Plan<T> {
    len: usize,
    kernel: Kernel<T>,
}

impl<T: Real> Plan<T> {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "FFT length must be positive");
        if len.is_power_of_two() {
            let twiddles = (0..len / 2)
                .map(|k| unit(-2.0 * core::f64::consts::PI * k as f64 / len as f64))
                .collect();
            return Self {
                len,
                kernel: Kernel::Radix2 { twiddles },
            };
        }
        let m = (2 * len - 1).next_power_of_two();
        let inner = Plan::new(m);
        // chirp[k] = exp(-i pi k^2 / n); k^2 is reduced mod 2n to keep the angle small
        let chirp: Vec<Cplx<T>> = (0..len)
            .map(|k| {
                let k2 = ((k as u128 * k as u128) % (2 * len as u128)) as f64;
                unit(-core::f64::consts::PI * k2 / len as f64)
            })
            .collect();
        let mut filter = vec![Cplx::default(); m];
        filter[0] = chirp[0].conj();
        for k in 1..len {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.run(&mut filter, false);
        Self {
            len,
            kernel: Kernel::Bluestein {
                inner: alloc::boxed::Box::new(inner),
                chirp,
                filter,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized in-place transform; `inverse` flips the exponent sign.
    pub fn run(&self, buf: &mut [Cplx<T>], inverse: bool) {
        assert_eq!(buf.len(), self.len);
        match &self.kernel {
            Kernel::Radix2 { twiddles } => radix2(buf, twiddles, inverse),
            Kernel::Bluestein { inner, chirp, filter } => {
                let m = filter.len();
                let mut work = vec![Cplx::default(); m];
                for k in 0..self.len {
                    let c = if inverse { chirp[k].conj() } else { chirp[k] };
                    work[k] = buf[k].mul(c);
                }
                inner.run(&mut work, false);
                for (w, f) in work.iter_mut().zip(filter) {
                    let f = if inverse { f_conj_filter(*f) } else { *f };
                    *w = w.mul(f);
                }
                inner.run(&mut work, true);
                let scale = T::one() / lit::<T>(m as f64);
                for k in 0..self.len {
                    let c = if inverse { chirp[k].conj() } else { chirp[k] };
                    let v = work[k].mul(c);
                    buf[k] = Cplx::new(v.re * scale, v.im * scale);
                }
            }
        }
    }
}

// The chirp filter is even, so its transform is even too and the transform of
// the conjugated chirp is just the conjugate.
#[inline(always)]
fn f_conj_filter<T: Real>(f: Cplx<T>) -> Cplx<T> {
    f.conj()
}

fn radix2<T: Real>(buf: &mut [Cplx<T>], twiddles: &[Cplx<T>], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let mut w = twiddles[k * step];
                if inverse {
                    w = w.conj();
                }
                let a = buf[start + k];
                let b = buf[start + k + half].mul(w);
                buf[start + k] = Cplx::new(a.re + b.re, a.im + b.im);
                buf[start + k + half] = Cplx::new(a.re - b.re, a.im - b.im);
            }
        }
        size *= 2;
    }
}

/// Number of packed columns of a real transform of width `w`.
#[inline]
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Weight of a packed column in the full spectrum (1 for self-conjugate columns, else 2).
#[inline]
pub fn fold_weight(kw: usize, w: usize) -> usize {
    if kw == 0 || (w % 2 == 0 && kw == w / 2) {
        1
    } else {
        2
    }
}

struct Plans<T> {
    rows: Plan<T>,
    cols: Plan<T>,
}

impl<T: Real> Plans<T> {
    fn new(h: usize, w: usize) -> Self {
        Self {
            rows: Plan::new(w),
            cols: Plan::new(h),
        }
    }
}

/// Column pass over a packed `[h, wf]` complex plane.
fn column_pass<T: Real>(plane: &mut [Cplx<T>], h: usize, wf: usize, plan: &Plan<T>, inverse: bool) {
    let mut col = vec![Cplx::default(); h];
    for kw in 0..wf {
        for y in 0..h {
            col[y] = plane[y * wf + kw];
        }
        plan.run(&mut col, inverse);
        for y in 0..h {
            plane[y * wf + kw] = col[y];
        }
    }
}

/// Forward real 2-D FFT: `x` is `[n, h, w]` planes, output `[n, h, wf, 2]` interleaved.
pub fn rfft2<T: Real>(x: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
    let wf = half_width(w);
    let plans = Plans::new(h, w);
    let mut out = vec![T::zero(); n * h * wf * 2];
    let mut row = vec![Cplx::default(); w];
    let mut plane = vec![Cplx::default(); h * wf];
    for p in 0..n {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (c, &v) in row.iter_mut().zip(&src[y * w..(y + 1) * w]) {
                *c = Cplx::new(v, T::zero());
            }
            plans.rows.run(&mut row, false);
            plane[y * wf..(y + 1) * wf].copy_from_slice(&row[..wf]);
        }
        column_pass(&mut plane, h, wf, &plans.cols, false);
        write_interleaved(&plane, &mut out[p * h * wf * 2..(p + 1) * h * wf * 2]);
    }
    out
}

/// Inverse real 2-D FFT of packed spectra `[n, h, wf, 2]` into `[n, h, w]`.
///
/// Self-conjugate columns are projected onto their Hermitian part, matching
/// the usual C2R convention.
pub fn irfft2<T: Real>(spec: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
    let wf = half_width(w);
    let plans = Plans::new(h, w);
    let scale = T::one() / lit::<T>((h * w) as f64);
    let mut out = vec![T::zero(); n * h * w];
    let mut plane = vec![Cplx::default(); h * wf];
    let mut row = vec![Cplx::default(); w];
    for p in 0..n {
        read_interleaved(&spec[p * h * wf * 2..(p + 1) * h * wf * 2], &mut plane);
        column_pass(&mut plane, h, wf, &plans.cols, true);
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let z = &plane[y * wf..(y + 1) * wf];
            hermitian_row(z, &mut row, w);
            plans.rows.run(&mut row, true);
            for (d, c) in dst[y * w..(y + 1) * w].iter_mut().zip(&row) {
                *d = c.re * scale;
            }
        }
    }
    out
}

/// Gradient of [`rfft2`]: `gx = Re(unnormalized inverse DFT of the zero-extended half spectrum)`.
pub fn rfft2_backward<T: Real>(gspec: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
    let wf = half_width(w);
    let plans = Plans::new(h, w);
    let mut out = vec![T::zero(); n * h * w];
    let mut plane = vec![Cplx::default(); h * wf];
    let mut row = vec![Cplx::default(); w];
    for p in 0..n {
        read_interleaved(&gspec[p * h * wf * 2..(p + 1) * h * wf * 2], &mut plane);
        column_pass(&mut plane, h, wf, &plans.cols, true);
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            row.fill(Cplx::default());
            row[..wf].copy_from_slice(&plane[y * wf..(y + 1) * wf]);
            plans.rows.run(&mut row, true);
            for (d, c) in dst[y * w..(y + 1) * w].iter_mut().zip(&row) {
                *d = c.re;
            }
        }
    }
    out
}

/// Gradient of [`irfft2`] with respect to the packed spectrum.
pub fn irfft2_backward<T: Real>(g: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
    let wf = half_width(w);
    let plans = Plans::new(h, w);
    let inv_w = T::one() / lit::<T>(w as f64);
    let inv_h = T::one() / lit::<T>(h as f64);
    let mut out = vec![T::zero(); n * h * wf * 2];
    let mut plane = vec![Cplx::default(); h * wf];
    let mut row = vec![Cplx::default(); w];
    for p in 0..n {
        let src = &g[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (c, &v) in row.iter_mut().zip(&src[y * w..(y + 1) * w]) {
                *c = Cplx::new(v, T::zero());
            }
            plans.rows.run(&mut row, false);
            for kw in 0..wf {
                let weight = lit::<T>(fold_weight(kw, w) as f64) * inv_w;
                let mut c = row[kw];
                if fold_weight(kw, w) == 1 {
                    c.im = T::zero();
                }
                plane[y * wf + kw] = Cplx::new(c.re * weight, c.im * weight);
            }
        }
        column_pass(&mut plane, h, wf, &plans.cols, false);
        for c in plane.iter_mut() {
            *c = Cplx::new(c.re * inv_h, c.im * inv_h);
        }
        write_interleaved(&plane, &mut out[p * h * wf * 2..(p + 1) * h * wf * 2]);
    }
    out
}

fn hermitian_row<T: Real>(z: &[Cplx<T>], row: &mut [Cplx<T>], w: usize) {
    let wf = z.len();
    row[0] = Cplx::new(z[0].re, T::zero());
    for kw in 1..wf {
        if fold_weight(kw, w) == 1 {
            row[kw] = Cplx::new(z[kw].re, T::zero());
        } else {
            row[kw] = z[kw];
            row[w - kw] = z[kw].conj();
        }
    }
}

fn write_interleaved<T: Real>(plane: &[Cplx<T>], out: &mut [T]) {
    for (c, o) in plane.iter().zip(out.chunks_exact_mut(2)) {
        o[0] = c.re;
        o[1] = c.im;
    }
}

fn read_interleaved<T: Real>(src: &[T], plane: &mut [Cplx<T>]) {
    for (c, s) in plane.iter_mut().zip(src.chunks_exact(2)) {
        *c = Cplx::new(s[0], s[1]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Cplx<f64>], inverse: bool) -> Vec<Cplx<f64>> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                let mut acc = Cplx::new(0.0, 0.0);
                for (j, v) in x.iter().enumerate() {
                    let a = sign * 2.0 * core::f64::consts::PI * ((k * j) % n) as f64 / n as f64;
                    let t = v.mul(Cplx::new(Float::cos(a), Float::sin(a)));
                    acc.re += t.re;
                    acc.im += t.im;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn plans_match_naive_dft_for_many_lengths() {
        for n in [1usize, 2, 3, 4, 5, 6, 7, 8, 9, 12, 16, 17, 31, 34] {
            let x: Vec<Cplx<f64>> = (0..n)
                .map(|i| Cplx::new(Float::sin(i as f64 * 1.3 + 0.2), Float::cos(i as f64 * 0.7)))
                .collect();
            for inverse in [false, true] {
                let mut got = x.clone();
                Plan::new(n).run(&mut got, inverse);
                let want = naive_dft(&x, inverse);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g.re - w.re).abs() < 1e-9 && (g.im - w.im).abs() < 1e-9, "n={n}");
                }
            }
        }
    }

    #[test]
    fn real_round_trip_odd_and_even_sizes() {
        for &(h, w) in &[(4usize, 4usize), (3, 5), (6, 7), (8, 6), (1, 1)] {
            let x: Vec<f64> = (0..h * w).map(|i| Float::sin(i as f64 * 0.77) + 0.1).collect();
            let spec = rfft2(&x, 1, h, w);
            let back = irfft2(&spec, 1, h, w);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12, "{h}x{w}");
            }
        }
    }
}
