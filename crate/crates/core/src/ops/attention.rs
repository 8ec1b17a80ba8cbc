//! Multi-head scaled dot-product attention over spatial tokens.
//!
//! Queries come from one feature map and keys/values from another; the token
//! axis is the flattened spatial grid. Scores are never materialized for the
//! whole map: rows are processed in blocks and recomputed for the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{lit, Real};
use crate::tensor::Tensor;

const ROW_BLOCK: usize = 64;

struct Layout {
    batch: usize,
    channels: usize,
    heads: usize,
    head_dim: usize,
    queries: usize,
    keys: usize,
}

impl Layout {
    fn new(q: &Tensor<impl Real>, k: &Tensor<impl Real>, v: &Tensor<impl Real>, heads: usize) -> Self {
        let [b, c, hq, wq] = q.dims4();
        let [bk, ck, hk, wk] = k.dims4();
        assert_eq!(k.shape(), v.shape(), "attention: key/value shapes differ");
        assert!(b == bk && c == ck, "attention: query {:?} vs key {:?}", q.shape(), k.shape());
        assert!(heads > 0 && c % heads == 0, "attention: {c} channels not divisible by {heads} heads");
        Self {
            batch: b,
            channels: c,
            heads,
            head_dim: c / heads,
            queries: hq * wq,
            keys: hk * wk,
        }
    }

    fn scale<T: Real>(&self) -> T {
        T::one() / lit::<T>(self.head_dim as f64).sqrt()
    }
}

/// Gathers `[C, N]` channel-major data of one batch item and head into token-major `[N, d]`.
fn gather_head<T: Real>(src: &[T], l: &Layout, n: usize, tokens: usize, head: usize, dst: &mut [T]) {
    let base = n * l.channels * tokens;
    for j in 0..l.head_dim {
        let ch = head * l.head_dim + j;
        let row = &src[base + ch * tokens..base + (ch + 1) * tokens];
        for (t, &v) in row.iter().enumerate() {
            dst[t * l.head_dim + j] = v;
        }
    }
}

fn scatter_head<T: Real>(src: &[T], l: &Layout, n: usize, tokens: usize, head: usize, dst: &mut [T]) {
    let base = n * l.channels * tokens;
    for j in 0..l.head_dim {
        let ch = head * l.head_dim + j;
        let row = &mut dst[base + ch * tokens..base + (ch + 1) * tokens];
        for (t, v) in row.iter_mut().enumerate() {
            *v += src[t * l.head_dim + j];
        }
    }
}

fn softmax_rows<T: Real>(scores: &mut [T], cols: usize) {
    for row in scores.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        for v in row.iter_mut() {
            *v -= max;
        }
        T::exp_in_place(row);
        let inv = T::one() / crate::real::sum(row);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Computes `softmax(q_blk k^T * scale)` for rows `[r0, r1)` into `probs`.
fn block_probs<T: Real>(qh: &[T], kh: &[T], l: &Layout, r0: usize, r1: usize, probs: &mut [T]) {
    let rows = r1 - r0;
    let d = l.head_dim;
    T::gemm(rows, d, l.keys, l.scale(), &qh[r0 * d..r1 * d], false, kh, true, T::zero(), &mut probs[..rows * l.keys]);
    softmax_rows(&mut probs[..rows * l.keys], l.keys);
}

/// `out[b, c, q] = sum_k softmax(q . k / sqrt(d))[q, k] * v[b, c, k]`, per head.
pub fn forward<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Tensor<T> {
    let l = Layout::new(q, k, v, heads);
    let d = l.head_dim;
    let mut out = Tensor::zeros(q.shape());
    let mut qh = vec![T::zero(); l.queries * d];
    let mut kh = vec![T::zero(); l.keys * d];
    let mut vh = vec![T::zero(); l.keys * d];
    let mut oh = vec![T::zero(); l.queries * d];
    let mut probs = vec![T::zero(); ROW_BLOCK * l.keys];
    for n in 0..l.batch {
        for head in 0..l.heads {
            gather_head(q.data(), &l, n, l.queries, head, &mut qh);
            gather_head(k.data(), &l, n, l.keys, head, &mut kh);
            gather_head(v.data(), &l, n, l.keys, head, &mut vh);
            for r0 in (0..l.queries).step_by(ROW_BLOCK) {
                let r1 = (r0 + ROW_BLOCK).min(l.queries);
                block_probs(&qh, &kh, &l, r0, r1, &mut probs);
                T::gemm(r1 - r0, l.keys, d, T::one(), &probs, false, &vh, false, T::zero(), &mut oh[r0 * d..r1 * d]);
            }
            scatter_head(&oh, &l, n, l.queries, head, out.data_mut());
        }
    }
    out
}

/// Attention probabilities `[B, heads, Nq, Nk]`; every row sums to one.
pub fn weights<T: Real>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Tensor<T> {
    let l = Layout::new(q, k, k, heads);
    let d = l.head_dim;
    let mut out = Vec::with_capacity(l.batch * heads * l.queries * l.keys);
    let mut qh = vec![T::zero(); l.queries * d];
    let mut kh = vec![T::zero(); l.keys * d];
    let mut probs = vec![T::zero(); l.queries * l.keys];
    for n in 0..l.batch {
        for head in 0..heads {
            gather_head(q.data(), &l, n, l.queries, head, &mut qh);
            gather_head(k.data(), &l, n, l.keys, head, &mut kh);
            block_probs(&qh, &kh, &l, 0, l.queries, &mut probs);
            out.extend_from_slice(&probs);
        }
    }
    Tensor::from_vec(&[l.batch, heads, l.queries, l.keys], out)
}

/// Gradients for `(q, k, v)`.
pub fn backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    gout: &Tensor<T>,
    heads: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let l = Layout::new(q, k, v, heads);
    let d = l.head_dim;
    let scale: T = l.scale();
    let mut gq = Tensor::zeros(q.shape());
    let mut gk = Tensor::zeros(k.shape());
    let mut gv = Tensor::zeros(v.shape());
    let mut qh = vec![T::zero(); l.queries * d];
    let mut kh = vec![T::zero(); l.keys * d];
    let mut vh = vec![T::zero(); l.keys * d];
    let mut goh = vec![T::zero(); l.queries * d];
    let mut gqh = vec![T::zero(); l.queries * d];
    let mut gkh = vec![T::zero(); l.keys * d];
    let mut gvh = vec![T::zero(); l.keys * d];
    let mut probs = vec![T::zero(); ROW_BLOCK * l.keys];
    let mut gprobs = vec![T::zero(); ROW_BLOCK * l.keys];
    for n in 0..l.batch {
        for head in 0..l.heads {
            gather_head(q.data(), &l, n, l.queries, head, &mut qh);
            gather_head(k.data(), &l, n, l.keys, head, &mut kh);
            gather_head(v.data(), &l, n, l.keys, head, &mut vh);
            gather_head(gout.data(), &l, n, l.queries, head, &mut goh);
            gkh.fill(T::zero());
            gvh.fill(T::zero());
            for r0 in (0..l.queries).step_by(ROW_BLOCK) {
                let r1 = (r0 + ROW_BLOCK).min(l.queries);
                let rows = r1 - r0;
                block_probs(&qh, &kh, &l, r0, r1, &mut probs);
                let p = &probs[..rows * l.keys];
                let gp = &mut gprobs[..rows * l.keys];
                // dP = dO V^T
                T::gemm(rows, d, l.keys, T::one(), &goh[r0 * d..r1 * d], false, &vh, true, T::zero(), gp);
                // dS = P * (dP - rowsum(P * dP))
                for (prow, grow) in p.chunks_exact(l.keys).zip(gp.chunks_exact_mut(l.keys)) {
                    let dot = crate::real::dot(prow, grow);
                    for (g, &pv) in grow.iter_mut().zip(prow) {
                        *g = pv * (*g - dot);
                    }
                }
                T::gemm(rows, l.keys, d, scale, gp, false, &kh, false, T::zero(), &mut gqh[r0 * d..r1 * d]);
                T::gemm(l.keys, rows, d, scale, gp, true, &qh[r0 * d..r1 * d], false, T::one(), &mut gkh);
                T::gemm(l.keys, rows, d, T::one(), p, true, &goh[r0 * d..r1 * d], false, T::one(), &mut gvh);
            }
            scatter_head(&gqh, &l, n, l.queries, head, gq.data_mut());
            scatter_head(&gkh, &l, n, l.keys, head, gk.data_mut());
            scatter_head(&gvh, &l, n, l.keys, head, gv.data_mut());
        }
    }
    (gq, gk, gv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Float;

    #[test]
    fn matches_dense_reference() {
        let q = Tensor::<f64>::from_fn(&[1, 4, 3, 3], |i| Float::sin(i as f64 * 0.37));
        let k = Tensor::<f64>::from_fn(&[1, 4, 2, 5], |i| Float::cos(i as f64 * 0.53));
        let v = Tensor::<f64>::from_fn(&[1, 4, 2, 5], |i| Float::sin(i as f64 * 0.11 + 1.0));
        let out = forward(&q, &k, &v, 2);
        let (nq, nk, d) = (9, 10, 2);
        for head in 0..2 {
            for i in 0..nq {
                let mut s: Vec<f64> = (0..nk)
                    .map(|j| {
                        (0..d)
                            .map(|c| q.data()[(head * d + c) * nq + i] * k.data()[(head * d + c) * nk + j])
                            .sum::<f64>()
                            / Float::sqrt(d as f64)
                    })
                    .collect();
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter_mut().map(|x| {
                    *x = Float::exp(*x - m);
                    *x
                }).sum();
                for c in 0..d {
                    let want: f64 = (0..nk).map(|j| s[j] / z * v.data()[(head * d + c) * nk + j]).sum();
                    let got = out.data()[(head * d + c) * nq + i];
                    assert!((want - got).abs() < 1e-12);
                }
            }
        }
    }
}
