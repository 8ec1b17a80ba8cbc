//! Finite-difference checks for the composite modules and the training losses.

mod common;

use common::{gradcheck, project, random, rng, worst};
use sgdn_core::autodiff::{Exec, Graph, Var};
use sgdn_core::bridge::{cem_forward, gate_and_mix, iam_forward, pim_forward, BridgeParams, CemParams};
use sgdn_core::losses::{fft_loss_in, l1_in, ssim_loss_in, total_loss_in, LossWeights};
use sgdn_core::params::ParamStore;
use sgdn_core::Tensor;

const TOL: f64 = 1e-3;

fn bridge(c: usize, next: usize, heads: usize, seed: u64) -> (ParamStore<f64>, BridgeParams) {
    let mut store = ParamStore::new();
    let p = BridgeParams::new(&mut store, "b", c, next, heads, &mut rng(seed)).unwrap();
    // move away from the identity initialization so every path carries gradient
    let mut r = rng(seed + 100);
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get_mut(id);
        let noise = random(t.shape(), -0.1, 0.1, &mut r);
        t.add_assign(&noise);
    }
    (store, p)
}

fn sum2(g: &mut Graph<'_, f64>, a: &Var, b: &Var, seed: u64) -> Var {
    let pa = project(g, a, seed);
    let pb = project(g, b, seed + 1);
    g.add(&pa, &pb)
}

fn assert_close(name: &str, report: &[(String, f64)]) {
    let w = worst(report);
    assert!(w < TOL, "{name}: worst relative error {w:.2e}\n{report:?}");
}

#[test]
fn pim() {
    let (store, p) = bridge(4, 8, 2, 1);
    // Phases are raw angles, discontinuous where a spectrum bin is real and
    // negative. With odd sides the only real bin is DC, and a positive offset
    // keeps it at angle 0, so every bin stays clear of the cut.
    let mut r = rng(2);
    let feature = |r: &mut _| random(&[1, 4, 5, 5], -1.0, 1.0, r).map(|v| v + 1.0);
    let inputs = vec![feature(&mut r), feature(&mut r)];
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let (a, b) = pim_forward(g, &v[0], &v[1], &p).unwrap();
        sum2(g, &a, &b, 7)
    };
    assert_close("pim", &gradcheck(&store, &inputs, 60, &f));
}

#[test]
fn iam() {
    let (store, p) = bridge(4, 8, 2, 3);
    let mut r = rng(4);
    let inputs = vec![random(&[1, 4, 3, 4], -1.0, 1.0, &mut r), random(&[1, 4, 3, 4], -1.0, 1.0, &mut r)];
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let (a, b) = iam_forward(g, &v[0], &v[1], &p).unwrap();
        sum2(g, &a, &b, 8)
    };
    assert_close("iam", &gradcheck(&store, &inputs, 60, &f));
}

#[test]
fn gate_and_mix_module() {
    let (store, p) = bridge(4, 6, 2, 5);
    let mut r = rng(6);
    let inputs = vec![
        random(&[1, 4, 3, 3], -1.0, 1.0, &mut r),
        random(&[1, 4, 3, 3], -1.0, 1.0, &mut r),
        random(&[1, 6, 5, 6], -1.0, 1.0, &mut r),
        random(&[1, 6, 5, 6], -1.0, 1.0, &mut r),
    ];
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let (gr, gy, mix) = gate_and_mix(g, &v[0], &v[1], &v[2], &v[3], &p).unwrap();
        let s = sum2(g, &gr, &gy, 9);
        let m = project(g, &mix, 11);
        g.add(&s, &m)
    };
    assert_close("gate_and_mix", &gradcheck(&store, &inputs, 60, &f));
}

#[test]
fn cem() {
    let mut store = ParamStore::new();
    let p = CemParams::new(&mut store, "cem", 5, &mut rng(7));
    let mut r = rng(8);
    let inputs = vec![random(&[2, 5, 4, 3], -1.0, 1.0, &mut r), random(&[2, 5, 4, 3], -1.0, 1.0, &mut r)];
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let out = cem_forward(g, &v[0], &v[1], &p).unwrap();
        project(g, &out, 12)
    };
    assert_close("cem", &gradcheck(&store, &inputs, 100, &f));
}

fn loss_inputs(seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    vec![random(&[1, 8, 16, 16], 0.0, 1.0, &mut r), random(&[1, 8, 16, 16], 0.0, 1.0, &mut r)]
}

#[test]
fn l1_loss_gradient() {
    let store = ParamStore::new();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| l1_in(g, &v[0], &v[1]);
    assert_close("l1", &gradcheck(&store, &loss_inputs(9), 200, &f));
}

#[test]
fn ssim_loss_gradient() {
    let store = ParamStore::new();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| ssim_loss_in(g, &v[0], &v[1]);
    assert_close("ssim", &gradcheck(&store, &loss_inputs(10), 200, &f));
}

#[test]
fn fft_loss_gradient() {
    let store = ParamStore::new();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| fft_loss_in(g, &v[0], &v[1]);
    assert_close("fft", &gradcheck(&store, &loss_inputs(11), 200, &f));
}

#[test]
fn total_loss_gradient() {
    let store = ParamStore::new();
    let mut r = rng(12);
    let preds: Vec<Tensor<f64>> = [44, 22, 11].iter().map(|&s| random(&[1, 3, s, s], 0.0, 1.0, &mut r)).collect();
    let gts: Vec<Tensor<f64>> = [44, 22, 11].iter().map(|&s| random(&[1, 3, s, s], 0.0, 1.0, &mut r)).collect();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| total_loss_in(g, v, &gts, &LossWeights::default()).unwrap().total;
    assert_close("total", &gradcheck(&store, &preds, 100, &f));
}
