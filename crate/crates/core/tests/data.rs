//! Haze synthesis, parameter sampling and batch construction.

use proptest::prelude::*;
use sgdn_core::colorspace::{ColorSpace, Image};
use sgdn_core::data::{
    make_training_batch, procedural_scene, sample_asm_params, sample_crops, synthesize_haze, synthetic_pair, AsmParams,
    HazePair, BETA_RANGE, DEPTH_RANGE,
};
use sgdn_core::{SgdnError, Tensor};

fn params(beta: f64, airlight: [f64; 3], depth: Tensor<f32>) -> AsmParams {
    AsmParams { beta, airlight, depth }
}

#[test]
fn zero_beta_leaves_the_scene_untouched() {
    let j = procedural_scene(1, 24, 20).unwrap();
    let p = AsmParams { beta: 0.0, ..sample_asm_params(2, 24, 20) };
    assert_eq!(synthesize_haze(&j, &p).unwrap().pixels(), j.pixels());
}

#[test]
fn opaque_haze_is_pure_airlight() {
    let j = procedural_scene(3, 16, 16).unwrap();
    let a = [0.8, 0.9, 0.75];
    // t = exp(-30 * 0.5) < 1e-6 everywhere
    let p = params(30.0, a, Tensor::full(&[16, 16], 0.5));
    let i = synthesize_haze(&j, &p).unwrap();
    for (k, v) in i.pixels().data().iter().enumerate() {
        assert!((*v as f64 - a[k / 256]).abs() < 1e-5);
    }
}

#[test]
fn sampled_depth_stays_in_range() {
    for seed in 0..1000 {
        let p = sample_asm_params(seed, 12, 9);
        let d = p.depth.data();
        assert!(d.iter().all(|&v| (DEPTH_RANGE.0 as f32..=DEPTH_RANGE.1 as f32).contains(&v)), "seed {seed}");
        assert!(p.airlight.iter().all(|a| (0.7..=1.0).contains(a)));
        assert_eq!(p, sample_asm_params(seed, 12, 9));
    }
}

#[test]
fn beta_is_uniform() {
    const N: usize = 10_000;
    const BINS: usize = 8;
    let mut counts = [0usize; BINS];
    for seed in 0..N as u64 {
        let b = sample_asm_params(seed, 2, 2).beta;
        assert!((BETA_RANGE.0..BETA_RANGE.1).contains(&b));
        let k = ((b - BETA_RANGE.0) / (BETA_RANGE.1 - BETA_RANGE.0) * BINS as f64) as usize;
        counts[k.min(BINS - 1)] += 1;
    }
    let p = 1.0 / BINS as f64;
    let expected = N as f64 * p;
    let sigma = (N as f64 * p * (1.0 - p)).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "bin {k}: {c} (expected {expected} +- {:.0})", 3.0 * sigma);
    }
}

fn pairs_of_mixed_sizes() -> Vec<HazePair> {
    [(64, 64), (70, 96), (128, 65), (64, 200)]
        .iter()
        .enumerate()
        .map(|(i, &(h, w))| synthetic_pair(i as u64, h, w).unwrap())
        .collect()
}

#[test]
fn crops_stay_in_bounds() {
    let pairs = pairs_of_mixed_sizes();
    let mut flips = 0;
    let mut draws = 0;
    for step in 0..2500 {
        for c in sample_crops(&pairs, 64, 4, 7, step).unwrap() {
            let p = &pairs[c.pair];
            assert!(c.y0 + 64 <= p.height() && c.x0 + 64 <= p.width(), "{c:?}");
            flips += c.flip as usize;
            draws += 1;
        }
    }
    assert_eq!(draws, 10_000);
    assert!((4_500..5_500).contains(&flips), "{flips}");
}

#[test]
fn flipping_back_restores_the_crops() {
    let pairs = pairs_of_mixed_sizes();
    for step in 0..20 {
        let b = make_training_batch(&pairs, 48, 3, 11, step).unwrap();
        for (i, c) in b.crops.iter().enumerate() {
            let p = &pairs[c.pair];
            for (batch, img) in [(&b.hazy, &p.hazy), (&b.clean, &p.clean)] {
                let item = batch.batch_item(i);
                let restored = if c.flip { item.flip_horizontal() } else { item.clone() };
                assert_eq!(restored, img.to_batch().crop(c.y0, c.x0, 48, 48));
                assert_eq!(item.flip_horizontal().flip_horizontal(), item);
            }
        }
    }
}

#[test]
fn batches_are_reproducible() {
    let pairs = pairs_of_mixed_sizes();
    let a = make_training_batch(&pairs, 64, 4, 3, 17).unwrap();
    let b = make_training_batch(&pairs, 64, 4, 3, 17).unwrap();
    assert_eq!((a.hazy.data(), a.clean.data(), &a.crops), (b.hazy.data(), b.clean.data(), &b.crops));
    let c = make_training_batch(&pairs, 64, 4, 3, 18).unwrap();
    assert_ne!(a.crops, c.crops);
}

#[test]
fn oversized_patch_is_rejected() {
    let pairs = pairs_of_mixed_sizes();
    assert!(matches!(make_training_batch(&pairs, 65, 8, 0, 0), Err(SgdnError::PatchTooLarge { .. })));
}

fn scene(seed: u64, h: usize, w: usize) -> Image {
    procedural_scene(seed, h, w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haze_is_monotone_in_beta(seed in any::<u64>(), b1 in 0.0f64..3.0, db in 0.0f64..2.0) {
        let p = sample_asm_params(seed, 16, 16);
        let a = p.airlight;
        let j = scene(seed, 16, 16);
        let lo = synthesize_haze(&j, &AsmParams { beta: b1, ..p.clone() }).unwrap();
        let hi = synthesize_haze(&j, &AsmParams { beta: b1 + db, ..p }).unwrap();
        for (k, ((&jv, &l), &h)) in j.pixels().data().iter().zip(lo.pixels().data()).zip(hi.pixels().data()).enumerate() {
            let av = a[k / 256] as f32;
            if jv < av {
                // larger beta moves every pixel further toward the airlight
                prop_assert!(h >= l - 1e-6 && h <= av + 1e-6);
            }
        }
    }

    #[test]
    fn cropping_commutes_with_synthesis(seed in any::<u64>(), y0 in 0usize..20, x0 in 0usize..12, h in 8usize..20, w in 8usize..20) {
        let (full_h, full_w) = (40, 32);
        let j = scene(seed, full_h, full_w);
        let p = sample_asm_params(seed ^ 1, full_h, full_w);
        let whole = synthesize_haze(&j, &p).unwrap();
        let crop = |img: &Image| {
            let t = img.to_batch().crop(y0, x0, h, w);
            Image::new(t.reshape(&[3, h, w]), ColorSpace::Rgb).unwrap()
        };
        let part = synthesize_haze(&crop(&j), &p.crop(y0, x0, h, w)).unwrap();
        let expected = crop(&whole);
        prop_assert_eq!(part.pixels(), expected.pixels());
    }
}
