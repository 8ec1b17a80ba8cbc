//! Test oracles shared by the integration suites.
#![allow(dead_code)]

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdn_core::autodiff::{Exec, Graph, Var};
use sgdn_core::ops::Op;
use sgdn_core::params::ParamStore;
use sgdn_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Reduces `out` to a scalar through a fixed random projection so every
/// output element carries a distinct weight.
pub fn project<'p>(g: &mut Graph<'p, f64>, out: &Var, seed: u64) -> Var {
    let shape = g.shape(out);
    let w = random(&shape, -1.0, 1.0, &mut rng(seed));
    let w = g.constant(w);
    let prod = g.mul(out, &w);
    g.apply(Op::Mean, &[&prod])
}

fn eval(params: &ParamStore<f64>, inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.value(&out).item()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error between an analytic and a numeric gradient.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / (norm(analytic) + norm(numeric)).max(1e-6)
}

/// Indices probed by the finite-difference checker (all of them for small tensors).
fn probe(len: usize, max_probe: usize) -> Vec<usize> {
    if len <= max_probe {
        (0..len).collect()
    } else {
        (0..max_probe).map(|i| i * len / max_probe + (i * 7) % (len / max_probe).max(1)).collect()
    }
}

/// Worst relative error over every input and parameter of a scalar function,
/// against central differences with step `eps`.
pub fn gradcheck(
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    max_probe: usize,
    f: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
) -> Vec<(String, f64)> {
    let eps = 1e-6;
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let mut report = Vec::new();
    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let zeros = Tensor::zeros(x.shape());
        let analytic = grads.input(*v).unwrap_or(&zeros);
        let idx = probe(x.len(), max_probe);
        let mut num = Vec::new();
        for &i in &idx {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += eps;
            let up = eval(params, &xs, f);
            xs[k].data_mut()[i] -= 2.0 * eps;
            let down = eval(params, &xs, f);
            num.push((up - down) / (2.0 * eps));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
        report.push((format!("input{k}"), rel_err(&ana, &num)));
    }
    for id in params.ids() {
        let zeros = Tensor::zeros(params.get(id).shape());
        let analytic = grads.param(id).unwrap_or(&zeros);
        let idx = probe(analytic.len(), max_probe);
        let mut num = Vec::new();
        for &i in &idx {
            let mut p = params.clone();
            p.get_mut(id).data_mut()[i] += eps;
            let up = eval(&p, inputs, f);
            p.get_mut(id).data_mut()[i] -= 2.0 * eps;
            let down = eval(&p, inputs, f);
            num.push((up - down) / (2.0 * eps));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| analytic.data()[i]).collect();
        report.push((params.name(id).to_string(), rel_err(&ana, &num)));
    }
    report
}

pub fn worst(report: &[(String, f64)]) -> f64 {
    report.iter().map(|(_, e)| *e).fold(0.0, f64::max)
}

/// Direct `O(N^2)` 2-D DFT of one real `h x w` plane; returns `(re, im)` over the full grid.
pub fn naive_dft(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let a = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    re += x[y * w + xx] * Float::cos(a);
                    im += x[y * w + xx] * Float::sin(a);
                }
            }
            out[u * w + v] = (re, im);
        }
    }
    out
}

/// Direct inverse DFT of a full complex `h x w` grid, keeping the real part.
pub fn naive_idft_real(spec: &[(f64, f64)], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for u in 0..h {
                for v in 0..w {
                    let a = 2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    let (re, im) = spec[u * w + v];
                    acc += re * Float::cos(a) - im * Float::sin(a);
                }
            }
            out[y * w + xx] = acc / (h * w) as f64;
        }
    }
    out
}

/// Sliding-window 3x3 / stride 2 / pad 1 pooling of one plane by enumeration.
pub fn naive_pool(x: &[f64], h: usize, w: usize, max: bool) -> Vec<f64> {
    let (oh, ow) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let mut vals = Vec::new();
            for dy in 0..3 {
                for dx in 0..3 {
                    let (y, xx) = ((oy * 2 + dy) as isize - 1, (ox * 2 + dx) as isize - 1);
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        vals.push(x[y as usize * w + xx as usize]);
                    }
                }
            }
            out.push(if max {
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            });
        }
    }
    out
}
