//! Acceptance gate. Each test prints one `acceptance <n> <name>: PASS|FAIL` line
//! to stderr (uncaptured) and then asserts the criterion.
//!
//! Criteria 6 to 8 train real networks for tens of minutes and are ignored by
//! default:
//!
//! ```text
//! cargo test -p sgdn --test acceptance -- --ignored --test-threads 1
//! ```

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{gradcheck, naive_dft, naive_pool, project, random, rng, worst};
use sgdn_core::autodiff::{Eager, Exec, Graph, Var};
use sgdn_core::backbone::{ModelConfig, SgdnModel};
use sgdn_core::bridge::{
    cem_forward, cem_weights, gate_and_mix, iam_attention_weights, iam_forward, pim_forward, BridgeParams, CemParams,
};
use sgdn_core::checkpoint::Checkpoint;
use sgdn_core::colorspace::{rgb_to_ycbcr, ycbcr_to_rgb, ColorSpace, Image};
use sgdn_core::data::synthetic_pair;
use sgdn_core::losses::{fft_loss_in, l1_in, ssim_loss, ssim_loss_in, total_loss, LossWeights};
use sgdn_core::metrics::{psnr, ssim_metric};
use sgdn_core::ops::{spatial, Op};
use sgdn_core::params::ParamStore;
use sgdn_core::spectral::{decompose, recombine};
use sgdn_core::trainer::{TrainConfig, Trainer};
use sgdn_core::Tensor;

fn verdict(n: u32, name: &str, pass: bool, took: Duration, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {n} {name}: {status} ({detail}; {:.1}s)\n", took.as_secs_f64());
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn small_config() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        blocks_per_stage: vec![1, 1, 1],
        ..ModelConfig::default()
    }
}

fn rgb(t: Tensor<f32>) -> Image {
    Image::new(t, ColorSpace::Rgb).unwrap()
}

#[test]
fn c1_round_trips() {
    let start = Instant::now();
    let mut color = 0.0f32;
    let mut fft = 0.0f64;
    for seed in 0..20 {
        let img = rgb(random(&[3, 24, 20], 0.0, 1.0, &mut rng(seed)).cast());
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        color = color.max(back.pixels().max_abs_diff(img.pixels()));
        let (h, w) = (1 + seed as usize % 9, 2 + seed as usize % 7);
        let x = random(&[1, 3, h, w], -2.0, 2.0, &mut rng(seed + 100));
        fft = fft.max(recombine(&decompose(&x).unwrap()).unwrap().max_abs_diff(&x));
    }

    let data: Vec<_> = (0..2).map(|i| synthetic_pair(i, 48, 48).unwrap()).collect();
    let cfg = TrainConfig { steps: 2, batch: 1, patch: 48, ..TrainConfig::default() };
    let mut t = Trainer::new(SgdnModel::new(small_config(), 0).unwrap(), cfg, LossWeights::default()).unwrap();
    t.train_step(&data).unwrap();
    let bytes = t.checkpoint().to_bytes();
    let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    let x = data[0].hazy.to_batch();
    let bitwise = back.to_bytes() == bytes
        && back.model().unwrap().predict(&x).unwrap().data() == t.model().predict(&x).unwrap().data();

    let took = start.elapsed();
    let pass = color < 1e-5 && fft < 1e-5 && bitwise && took < Duration::from_secs(30);
    verdict(1, "round trips", pass, took, &format!("color {color:.1e}, fft {fft:.1e}, checkpoint bitwise {bitwise}"));
}

#[test]
fn c2_oracles() {
    let start = Instant::now();
    let (mut spec, mut pool, mut loss) = (0.0f64, 0.0f64, 0.0f64);
    let store = ParamStore::new();
    for (k, (h, w)) in [(1, 1), (2, 3), (4, 4), (5, 7), (8, 8)].into_iter().enumerate() {
        let x = random(&[1, 1, h, w], -1.0, 1.0, &mut rng(k as u64));
        let full = naive_dft(x.data(), h, w);
        let pair = decompose(&x).unwrap();
        let wf = w / 2 + 1;
        for u in 0..h {
            for v in 0..wf {
                let (re, im) = full[u * w + v];
                let (a, p) = (pair.amplitude.data()[u * wf + v], pair.phase.data()[u * wf + v]);
                spec = spec.max((a * p.cos() - re).abs()).max((a * p.sin() - im).abs());
            }
        }
        for (got, max) in [(spatial::avg_pool(&x), false), (spatial::max_pool(&x), true)] {
            for (a, b) in got.data().iter().zip(naive_pool(x.data(), h, w, max)) {
                pool = pool.max((a - b).abs());
            }
        }

        let y = random(&[1, 1, h, w], -1.0, 1.0, &mut rng(k as u64 + 50));
        let diff: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
        let dft = naive_dft(&diff, h, w);
        let want: f64 = (0..h)
            .flat_map(|u| (0..wf).map(move |v| (u, v)))
            .map(|(u, v)| dft[u * w + v].0.abs() + dft[u * w + v].1.abs())
            .sum::<f64>()
            / (h * wf * 2) as f64;
        let mut e = Eager::new(&store);
        let (xv, yv) = (e.constant(x), e.constant(y));
        let l = fft_loss_in(&mut e, &xv, &yv);
        loss = loss.max((e.value(&l).item() - want).abs());
    }
    let took = start.elapsed();
    let pass = spec < 1e-5 && pool < 1e-5 && loss < 1e-5 && took < Duration::from_secs(60);
    verdict(2, "oracles", pass, took, &format!("dft {spec:.1e}, pooling {pool:.1e}, fft loss {loss:.1e}"));
}

fn noisy_bridge(c: usize, next: usize, seed: u64) -> (ParamStore<f64>, BridgeParams) {
    let mut store = ParamStore::new();
    let p = BridgeParams::new(&mut store, "b", c, next, 2, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 1);
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get_mut(id);
        let noise = random(t.shape(), -0.1, 0.1, &mut r);
        t.add_assign(&noise);
    }
    (store, p)
}

fn pair_sum(g: &mut Graph<'_, f64>, a: &Var, b: &Var) -> Var {
    let (pa, pb) = (project(g, a, 1), project(g, b, 2));
    g.add(&pa, &pb)
}

#[test]
fn c3_gradient_checks() {
    let start = Instant::now();
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut r = rng(3);

    let (store, p) = noisy_bridge(4, 8, 10);
    // odd sides and a positive offset keep every bin away from the phase branch cut
    let inputs: Vec<_> = (0..2).map(|_| random(&[1, 4, 5, 5], -1.0, 1.0, &mut r).map(|v| v + 1.0)).collect();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let (a, b) = pim_forward(g, &v[0], &v[1], &p).unwrap();
        pair_sum(g, &a, &b)
    };
    results.push(("pim", worst(&gradcheck(&store, &inputs, 40, &f))));

    let inputs: Vec<_> = (0..2).map(|_| random(&[1, 4, 3, 4], -1.0, 1.0, &mut r)).collect();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let (a, b) = iam_forward(g, &v[0], &v[1], &p).unwrap();
        pair_sum(g, &a, &b)
    };
    results.push(("iam", worst(&gradcheck(&store, &inputs, 40, &f))));

    let inputs = vec![
        random(&[1, 4, 3, 3], -1.0, 1.0, &mut r),
        random(&[1, 4, 3, 3], -1.0, 1.0, &mut r),
        random(&[1, 8, 5, 6], -1.0, 1.0, &mut r),
        random(&[1, 8, 5, 6], -1.0, 1.0, &mut r),
    ];
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let (a, b, mix) = gate_and_mix(g, &v[0], &v[1], &v[2], &v[3], &p).unwrap();
        let s = pair_sum(g, &a, &b);
        let m = project(g, &mix, 3);
        g.add(&s, &m)
    };
    results.push(("gate_and_mix", worst(&gradcheck(&store, &inputs, 40, &f))));

    let mut cem_store = ParamStore::new();
    let cp = CemParams::new(&mut cem_store, "cem", 5, &mut rng(11));
    let inputs: Vec<_> = (0..2).map(|_| random(&[2, 5, 4, 3], -1.0, 1.0, &mut r)).collect();
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| {
        let out = cem_forward(g, &v[0], &v[1], &cp).unwrap();
        project(g, &out, 4)
    };
    results.push(("cem", worst(&gradcheck(&cem_store, &inputs, 60, &f))));

    let empty = ParamStore::new();
    let images: Vec<_> = (0..2).map(|_| random(&[1, 3, 16, 16], 0.0, 1.0, &mut r)).collect();
    let l1 = |g: &mut Graph<'_, f64>, v: &[Var]| l1_in(g, &v[0], &v[1]);
    let ssim = |g: &mut Graph<'_, f64>, v: &[Var]| ssim_loss_in(g, &v[0], &v[1]);
    let fft = |g: &mut Graph<'_, f64>, v: &[Var]| fft_loss_in(g, &v[0], &v[1]);
    results.push(("l1", worst(&gradcheck(&empty, &images, 100, &l1))));
    results.push(("ssim", worst(&gradcheck(&empty, &images, 100, &ssim))));
    results.push(("fft", worst(&gradcheck(&empty, &images, 100, &fft))));

    let took = start.elapsed();
    let pass = results.iter().all(|(_, e)| *e < 1e-3) && took < Duration::from_secs(120);
    let detail: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(3, "gradient checks", pass, took, &detail.join(", "));
}

#[test]
fn c4_invariants() {
    let start = Instant::now();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let empty = ParamStore::new();
    let x = random(&[2, 6, 5, 7], -3.0, 5.0, &mut rng(1));
    let mut e = Eager::new(&empty);
    let xv = e.constant(x);
    let c = e.apply(Op::CenterChannels, &[&xv]);
    let c = e.take(c);
    let plane = 35;
    let centered = (0..2 * plane).all(|k| {
        let (b, p) = (k / plane, k % plane);
        ((0..6).map(|ch| c.data()[(b * 6 + ch) * plane + p]).sum::<f64>() / 6.0).abs() < 1e-6
    });
    checks.push(("cem centering", centered));

    let mut store = ParamStore::new();
    let cp = CemParams::new(&mut store, "cem", 8, &mut rng(2));
    let mut e = Eager::new(&store);
    let xv = e.constant(random(&[3, 8, 6, 6], -2.0, 2.0, &mut rng(3)));
    let v = cem_weights(&mut e, &xv, &cp);
    let v = e.take(v);
    checks.push(("cem weights sum to 1", v.data().chunks(8).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-6)));

    let (store, p) = noisy_bridge(8, 16, 4);
    let fr = random(&[2, 8, 4, 5], -2.0, 2.0, &mut rng(5));
    let fy = random(&[2, 8, 4, 5], -2.0, 2.0, &mut rng(6));
    let (wr, wy) = iam_attention_weights(&store, &fr, &fy, &p).unwrap();
    let rows = [wr, wy].iter().all(|w| w.data().chunks(20).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-6));
    checks.push(("attention rows sum to 1", rows));

    let mut e = Eager::new(&store);
    let (a, m) = (e.constant(fr.clone()), e.constant(fy.clone()));
    let (or, oy) = pim_forward(&mut e, &a, &m, &p).unwrap();
    let (sr, sy) = (decompose(e.value(&or)).unwrap(), decompose(e.value(&oy)).unwrap());
    let shared = (0..sr.phase.len()).all(|i| {
        if sr.amplitude.data()[i] <= 1e-6 || sy.amplitude.data()[i] <= 1e-6 {
            return true;
        }
        let d = (sr.phase.data()[i] - sy.phase.data()[i]).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d) < 1e-4
    });
    checks.push(("pim shared phase", shared));

    let mut fresh = ParamStore::new();
    let p0 = BridgeParams::new(&mut fresh, "b", 8, 16, 2, &mut rng(7)).unwrap();
    let mut e = Eager::new(&fresh);
    let (a, m) = (e.constant(fr.clone()), e.constant(fr.clone()));
    let (or, oy) = pim_forward(&mut e, &a, &m, &p0).unwrap();
    checks.push(("pim identity at init", e.value(&or).max_abs_diff(&fr) < 1e-5 && e.value(&oy).max_abs_diff(&fr) < 1e-5));

    let mut model = SgdnModel::<f32>::new(small_config(), 8).unwrap();
    let mut r = rng(9);
    for id in model.params().ids().collect::<Vec<_>>() {
        let t = model.params_mut().get_mut(id);
        let noise = random(t.shape(), -0.5, 0.5, &mut r).cast::<f32>();
        t.add_assign(&noise);
    }
    let x = random(&[2, 3, 37, 45], 0.0, 1.0, &mut rng(10)).cast::<f32>();
    let bounded = model.predict_pyramid(&x).unwrap().iter().all(|o| o.data().iter().all(|v| (0.0..=1.0).contains(v)));
    checks.push(("outputs in [0,1]", bounded));

    let took = start.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() { format!("{} checks hold", checks.len()) } else { format!("violated: {}", failed.join(", ")) };
    verdict(4, "structural invariants", failed.is_empty(), took, &detail);
}

#[test]
fn c5_loss_sanity() {
    let start = Instant::now();
    let mut worst_total = 0.0f64;
    let combos = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.5, 0.1)];
    for (h, w) in [(44, 44), (61, 53)] {
        let img = rgb(random(&[3, h, w], 0.0, 1.0, &mut rng(1)).cast());
        let pyr: Vec<Image> = (0..3)
            .map(|s| {
                let t = spatial::resize_antialiased(&img.to_batch(), h.div_ceil(1 << s), w.div_ceil(1 << s));
                let [_, c, hh, ww] = t.dims4();
                rgb(t.reshape(&[c, hh, ww]))
            })
            .collect();
        for (eta, theta, lambda) in combos {
            let l = total_loss(&pyr, &pyr, &LossWeights { eta, theta, lambda }).unwrap();
            worst_total = worst_total.max(l.abs());
        }
    }
    let mut worst_ssim = 0.0f64;
    for seed in 0..10 {
        let a = rgb(random(&[3, 20, 20], 0.0, 1.0, &mut rng(seed)).cast());
        let b = rgb(random(&[3, 20, 20], 0.0, 1.0, &mut rng(seed + 50)).cast());
        worst_ssim = worst_ssim.max((ssim_metric(&a, &b).unwrap() - (1.0 - ssim_loss(&a, &b).unwrap())).abs());
    }
    let took = start.elapsed();
    let pass = worst_total < 1e-6 && worst_ssim < 1e-7;
    verdict(5, "loss sanity", pass, took, &format!("total(x,x) {worst_total:.1e}, ssim metric vs loss {worst_ssim:.1e}"));
}

#[test]
#[ignore = "trains the default network for several minutes"]
fn c6_overfit() {
    let start = Instant::now();
    let pairs: Vec<_> = (0..4).map(|i| synthetic_pair(i, 64, 64).unwrap()).collect();
    let hazy = Tensor::stack_batch(&pairs.iter().map(|p| p.hazy.to_batch()).collect::<Vec<_>>());
    let clean = Tensor::stack_batch(&pairs.iter().map(|p| p.clean.to_batch()).collect::<Vec<_>>());
    let cfg = TrainConfig { steps: 500, ..TrainConfig::default() };
    let mut t = Trainer::new(SgdnModel::new(ModelConfig::default(), 0).unwrap(), cfg.clone(), LossWeights::default()).unwrap();
    for step in 0..cfg.steps {
        t.step_on(&hazy, &clean, cfg.lr_at(step)).unwrap();
    }
    let pred = t.model().predict(&hazy).unwrap();
    let score = |i: usize, img: &Tensor<f32>| {
        let a = rgb(img.batch_item(i).reshape(&[3, 64, 64]));
        psnr(&a, &pairs[i].clean, 1.0).unwrap().db
    };
    let model_db = (0..4).map(|i| score(i, &pred)).sum::<f64>() / 4.0;
    let hazy_db = (0..4).map(|i| score(i, &hazy)).sum::<f64>() / 4.0;
    let took = start.elapsed();
    let pass = model_db >= 30.0 && took < Duration::from_secs(600);
    verdict(6, "overfit", pass, took, &format!("psnr {model_db:.2} dB after 500 steps (hazy {hazy_db:.2} dB, target 30)"));
}

fn sgdn(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_sgdn")).args(args).env_remove("SGDN_DATA_ROOT").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 200 training and 20 validation pairs at 128x128.
fn desk_data(root: &Path) {
    sgdn(&["--seed", "2024", "--out", s(root), "synthesize", "--procedural", "--size", "128", "--count", "220", "--val-count", "20"]);
}

/// Trains with the desk preset and returns the evaluation report.
fn desk_run(data: &Path, out: &Path, seed: u64, extra: &[&str]) -> serde_json::Value {
    let run = out.join("run");
    let seed = seed.to_string();
    let mut args = vec!["--seed", &seed, "--out", s(&run), "train", "--preset", "desk", "--data-root", s(data), "--quiet"];
    args.extend_from_slice(extra);
    sgdn(&args);
    let eval = out.join("eval");
    let ckpt = run.join("checkpoints/latest.ckpt");
    sgdn(&["--out", s(&eval), "evaluate", "--checkpoint", s(&ckpt), "--data-root", s(data)]);
    serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap()
}

#[test]
#[ignore = "trains the default network for about 70 minutes"]
fn c7_desk_benchmark() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    desk_data(&data);
    let report = desk_run(&data, dir.path(), 0, &[]);
    let m = &report["summary"]["model"];
    let h = &report["summary"]["hazy"];
    let (mp, ms) = (m["psnr"].as_f64().unwrap(), m["ssim"].as_f64().unwrap());
    let (hp, hs) = (h["psnr"].as_f64().unwrap(), h["ssim"].as_f64().unwrap());
    let took = start.elapsed();
    let pass = mp >= hp + 3.0 && ms >= hs + 0.05 && took <= Duration::from_secs(3600);
    verdict(
        7,
        "desk benchmark",
        pass,
        took,
        &format!("val psnr {mp:.2} vs hazy {hp:.2} dB, ssim {ms:.3} vs hazy {hs:.3}"),
    );
}

/// Steps per ablation run; six runs at the full 5000 would take about seven hours here.
const ABLATION_STEPS: &str = "1000";

#[test]
#[ignore = "trains six networks for about an hour in total"]
fn c8_ablation_direction() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    desk_data(&data);
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..3u64 {
        let psnr_of = |ablation: &str| {
            let out = dir.path().join(format!("{ablation}_{seed}"));
            let r = desk_run(&data, &out, seed, &["--ablation", ablation, "--steps", ABLATION_STEPS]);
            r["summary"]["model"]["psnr"].as_f64().unwrap()
        };
        let (full, base) = (psnr_of("full"), psnr_of("baseline"));
        wins += (full >= base) as u32;
        detail.push(format!("seed {seed}: full {full:.2} vs baseline {base:.2}"));
    }
    let took = start.elapsed();
    verdict(8, "ablation direction", wins >= 2, took, &format!("{wins}/3 seeds favor full; {}", detail.join("; ")));
}

#[test]
fn c9_cli_goldens_and_exit_codes() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    sgdn(&["--seed", "1", "--out", s(&data), "synthesize", "--procedural", "--size", "48", "--count", "3", "--val-count", "1"]);
    let config = dir.path().join("tiny.toml");
    fs::write(&config, "[model]\nbase_channels = 8\nblocks_per_stage = [1, 1, 1]\n\n[train]\nsteps = 3\nbatch = 1\npatch = 48\n").unwrap();

    let mut logs = Vec::new();
    let mut reports = Vec::new();
    for k in 0..2 {
        let (run, eval) = (dir.path().join(format!("run{k}")), dir.path().join(format!("eval{k}")));
        sgdn(&["--config", s(&config), "--out", s(&run), "train", "--data-root", s(&data), "--quiet"]);
        let ckpt = run.join("checkpoints/latest.ckpt");
        sgdn(&["--out", s(&eval), "evaluate", "--checkpoint", s(&ckpt), "--data-root", s(&data)]);
        logs.push(fs::read(run.join("run_log.jsonl")).unwrap());
        reports.push(fs::read(eval.join("report.json")).unwrap());
    }
    let stable = logs[0] == logs[1] && reports[0] == reports[1];

    let rc = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_sgdn")).args(args).env_remove("SGDN_DATA_ROOT").output().unwrap().status.code();
    let out = dir.path().join("codes");
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    let codes = [
        rc(&["--out", s(&out.join("a")), "synthesize", "--procedural", "--count", "1", "--size", "16"]),
        rc(&["--out", s(&out.join("b")), "train", "--data-root", "/no/such/root"]),
        rc(&["--config", s(&config), "--out", s(&out.join("c")), "train", "--data-root", s(&data), "--quiet", "--lr", "1e30", "--steps", "50"]),
        rc(&["--out", s(&blocker.join("d")), "synthesize", "--procedural", "--count", "1", "--size", "16"]),
    ];
    let contract = codes == [Some(0), Some(1), Some(2), Some(2)];

    let took = start.elapsed();
    verdict(
        9,
        "cli goldens and exit codes",
        stable && contract,
        took,
        &format!("run log and report byte-stable {stable}, exit codes {codes:?}"),
    );
}
