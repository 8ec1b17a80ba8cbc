//! Haze synthesis, procedural training scenes, crop batches and split manifests.
//!
//! Synthetic pairs follow the atmospheric scattering model
//! `I = J * t + A * (1 - t)` with transmission `t = exp(-beta * d)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{ColorSpace, Image};
use crate::error::{Result, SgdnError};
use crate::tensor::Tensor;

pub const BETA_RANGE: (f64, f64) = (0.4, 2.0);
pub const AIRLIGHT_RANGE: (f64, f64) = (0.7, 1.0);
pub const DEPTH_RANGE: (f64, f64) = (0.5, 3.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSource {
    Real,
    Synthetic,
}

/// An aligned hazy/clean pair.
#[derive(Clone, Debug)]
pub struct HazePair {
    pub hazy: Image,
    pub clean: Image,
    pub id: String,
    pub source: PairSource,
}

impl HazePair {
    pub fn new(hazy: Image, clean: Image, id: impl Into<String>, source: PairSource) -> Result<Self> {
        if hazy.pixels().shape() != clean.pixels().shape() {
            return Err(SgdnError::ShapeMismatch {
                context: "haze pair",
                expected: clean.pixels().shape().to_vec(),
                got: hazy.pixels().shape().to_vec(),
            });
        }
        Ok(Self {
            hazy,
            clean,
            id: id.into(),
            source,
        })
    }

    pub fn height(&self) -> usize {
        self.clean.height()
    }

    pub fn width(&self) -> usize {
        self.clean.width()
    }
}

/// Scattering coefficient, per-channel airlight and an `[H, W]` depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct AsmParams {
    pub beta: f64,
    pub airlight: [f64; 3],
    pub depth: Tensor<f32>,
}

impl AsmParams {
    /// The same haze restricted to a window of the depth map.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Self {
        let [h, w] = [self.depth.shape()[0], self.depth.shape()[1]];
        let d = self.depth.clone().reshape(&[1, 1, h, w]).crop(y0, x0, height, width);
        Self {
            beta: self.beta,
            airlight: self.airlight,
            depth: d.reshape(&[height, width]),
        }
    }
}

/// Applies the scattering model; the output is clamped to `[0, 1]`.
pub fn synthesize_haze(clean: &Image, p: &AsmParams) -> Result<Image> {
    if !(p.beta >= 0.0) {
        return Err(SgdnError::NegativeParameter { name: "beta", value: p.beta });
    }
    let (h, w) = (clean.height(), clean.width());
    if p.depth.shape() != [h, w] {
        return Err(SgdnError::ShapeMismatch {
            context: "depth map",
            expected: vec![h, w],
            got: p.depth.shape().to_vec(),
        });
    }
    if !p.depth.all_finite() || p.airlight.iter().any(|a| !a.is_finite()) {
        return Err(SgdnError::NonFinite { context: "haze parameters" });
    }
    if let Some(&d) = p.depth.data().iter().find(|&&d| d < 0.0) {
        return Err(SgdnError::NegativeParameter { name: "depth", value: d as f64 });
    }
    let plane = h * w;
    let t: Vec<f64> = p.depth.data().iter().map(|&d| Float::exp(-p.beta * d as f64)).collect();
    let src = clean.pixels().data();
    let out = Tensor::from_fn(&[3, h, w], |i| {
        let (c, k) = (i / plane, i % plane);
        let v = src[i] as f64 * t[k] + p.airlight[c] * (1.0 - t[k]);
        v.clamp(0.0, 1.0) as f32
    });
    Image::new(out, ColorSpace::Rgb)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise: random values on a `cells x cells` lattice, smoothly interpolated.
fn value_noise(rng: &mut ChaCha8Rng, cells: usize, h: usize, w: usize) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / h.max(2).saturating_sub(1) as f64 * cells as f64;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let ty = smoothstep(fy - y0 as f64);
        for x in 0..w {
            let fx = x as f64 / w.max(2).saturating_sub(1) as f64 * cells as f64;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let tx = smoothstep(fx - x0 as f64);
            let at = |yy: usize, xx: usize| lattice[yy * n + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Draws haze parameters; the depth map is two octaves of smooth noise
/// rescaled to [`DEPTH_RANGE`].
pub fn sample_asm_params(seed: u64, height: usize, width: usize) -> AsmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = rng.random_range(BETA_RANGE.0..BETA_RANGE.1);
    let airlight = [(); 3].map(|_| rng.random_range(AIRLIGHT_RANGE.0..AIRLIGHT_RANGE.1));
    let coarse = value_noise(&mut rng, 2, height, width);
    let fine = value_noise(&mut rng, 5, height, width);
    let raw: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| a + 0.35 * b).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = DEPTH_RANGE.1 - DEPTH_RANGE.0;
    let depth = raw
        .iter()
        .map(|&v| {
            let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (DEPTH_RANGE.0 + span * u).clamp(DEPTH_RANGE.0, DEPTH_RANGE.1) as f32
        })
        .collect();
    AsmParams {
        beta,
        airlight,
        depth: Tensor::from_vec(&[height, width], depth),
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [(); 3].map(|_| rng.random_range(0.05..0.95))
}

/// A clean synthetic scene: a graded sky over ground, flat and textured
/// shapes, and fine stripes, so that haze removal has edges and detail to recover.
pub fn procedural_scene(seed: u64, height: usize, width: usize) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let sky = [random_color(&mut rng), random_color(&mut rng)];
    let ground = [random_color(&mut rng), random_color(&mut rng)];
    let horizon = rng.random_range(0.25..0.6) * h;
    let mut px = vec![[0.0f64; 3]; height * width];
    for y in 0..height {
        for x in 0..width {
            let (a, b, t) = if (y as f64) < horizon {
                (sky[0], sky[1], y as f64 / horizon.max(1.0))
            } else {
                (ground[0], ground[1], (y as f64 - horizon) / (h - horizon).max(1.0))
            };
            px[y * width + x] = [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t);
        }
    }
    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let color = random_color(&mut rng);
        let (cy, cx) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
        let (ry, rx) = (rng.random_range(0.05..0.3) * h, rng.random_range(0.05..0.3) * w);
        let disk = rng.random_bool(0.5);
        let stripes = rng.random_bool(0.4);
        let (freq, angle) = (rng.random_range(0.2..0.9), rng.random_range(0.0..core::f64::consts::PI));
        let (sa, ca) = (Float::sin(angle), Float::cos(angle));
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disk { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if !inside {
                    continue;
                }
                let mut c = color;
                if stripes {
                    let s = 0.15 * Float::sin(freq * (x as f64 * ca + y as f64 * sa));
                    c = c.map(|v| v + s);
                }
                px[y * width + x] = c;
            }
        }
    }
    let plane = height * width;
    let pixels = Tensor::from_fn(&[3, height, width], |i| px[i % plane][i / plane].clamp(0.0, 1.0) as f32);
    Image::new(pixels, ColorSpace::Rgb)
}

/// Seed for item `index` of a run seeded with `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A synthetic pair built from [`procedural_scene`] and [`sample_asm_params`].
pub fn synthetic_pair(seed: u64, height: usize, width: usize) -> Result<HazePair> {
    let clean = procedural_scene(seed, height, width)?;
    let params = sample_asm_params(derive_seed(seed, 0), height, width);
    let hazy = synthesize_haze(&clean, &params)?;
    HazePair::new(hazy, clean, format!("syn{seed:06}"), PairSource::Synthetic)
}

/// Geometry of one training crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropSpec {
    pub pair: usize,
    pub y0: usize,
    pub x0: usize,
    pub flip: bool,
}

/// A stacked `[B, 3, P, P]` batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub crops: Vec<CropSpec>,
}

/// Random generator for step `step` of a run seeded with `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Crop positions and flips for one batch; a pure function of `(seed, step)`.
pub fn sample_crops(pairs: &[HazePair], patch: usize, batch: usize, seed: u64, step: u64) -> Result<Vec<CropSpec>> {
    if pairs.is_empty() {
        return Err(SgdnError::EmptyDataset);
    }
    let mut rng = step_rng(seed, step);
    (0..batch)
        .map(|_| {
            let pair = rng.random_range(0..pairs.len());
            let p = &pairs[pair];
            if patch > p.height() || patch > p.width() {
                return Err(SgdnError::PatchTooLarge {
                    patch,
                    height: p.height(),
                    width: p.width(),
                    id: p.id.clone(),
                });
            }
            Ok(CropSpec {
                pair,
                y0: rng.random_range(0..=p.height() - patch),
                x0: rng.random_range(0..=p.width() - patch),
                flip: rng.random_bool(0.5),
            })
        })
        .collect()
}

fn cut(img: &Image, c: &CropSpec, patch: usize) -> Tensor<f32> {
    let t = img.to_batch().crop(c.y0, c.x0, patch, patch);
    if c.flip {
        t.flip_horizontal()
    } else {
        t
    }
}

/// Aligned random crops with horizontal flips, applied identically to both images.
pub fn make_training_batch(pairs: &[HazePair], patch: usize, batch: usize, seed: u64, step: u64) -> Result<Batch> {
    if batch == 0 || patch == 0 {
        return Err(SgdnError::InvalidConfig("batch and patch must be positive".to_string()));
    }
    let crops = sample_crops(pairs, patch, batch, seed, step)?;
    let hazy: Vec<_> = crops.iter().map(|c| cut(&pairs[c.pair].hazy, c, patch)).collect();
    let clean: Vec<_> = crops.iter().map(|c| cut(&pairs[c.pair].clean, c, patch)).collect();
    Ok(Batch {
        hazy: Tensor::stack_batch(&hazy),
        clean: Tensor::stack_batch(&clean),
        crops,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Stems per split. Text form: a `train:` section and a `val:` section, one stem per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl SplitManifest {
    /// The first `train` stems (in the given order) for training, the rest for validation.
    pub fn from_stems(stems: &[String], train: usize) -> Result<Self> {
        if train > stems.len() {
            return Err(SgdnError::Manifest(format!("{train} training stems requested, only {} available", stems.len())));
        }
        Ok(Self {
            train: stems[..train].to_vec(),
            val: stems[train..].to_vec(),
        })
    }

    pub fn stems(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        let mut current: Option<Split> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "train:" => current = Some(Split::Train),
                "val:" => current = Some(Split::Val),
                stem => {
                    if stem.contains(['/', '\\']) || stem.ends_with(':') {
                        return Err(SgdnError::Manifest(format!("line {}: invalid stem `{stem}`", n + 1)));
                    }
                    match current {
                        Some(Split::Train) => m.train.push(stem.to_string()),
                        Some(Split::Val) => m.val.push(stem.to_string()),
                        None => return Err(SgdnError::Manifest(format!("line {}: stem `{stem}` before any section", n + 1))),
                    }
                }
            }
        }
        if let Some(dup) = first_duplicate(m.train.iter().chain(&m.val)) {
            return Err(SgdnError::Manifest(format!("stem `{dup}` listed twice")));
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("train:\n");
        for t in &self.train {
            s.push_str(t);
            s.push('\n');
        }
        s.push_str("val:\n");
        for v in &self.val {
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

fn first_duplicate<'a>(it: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    let mut seen: Vec<&String> = it.collect();
    seen.sort();
    seen.windows(2).find(|w| w[0] == w[1]).map(|w| w[0])
}
