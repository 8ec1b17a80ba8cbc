//! Shared encoder, decoder and the full network forward pass.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Exec};
use crate::bridge::{bridge_forward, cem_forward, BridgeParams, BridgeToggles, CemParams};
use crate::colorspace::{rgb_to_ycbcr_tensor, ColorSpace, Image, MIN_SIDE};
use crate::error::{Result, SgdnError};
use crate::nn::{Conv, LargeKernelBlock, Upsample};
use crate::ops::{spatial, Op};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Output scales, largest first.
pub const SCALES: [f64; 3] = [1.0, 0.5, 0.25];

/// Spatial sizes must be a multiple of this inside the network.
pub const ALIGN: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub stages: usize,
    pub blocks_per_stage: Vec<usize>,
    pub attn_heads: usize,
    pub large_kernel_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 24,
            stages: 3,
            blocks_per_stage: vec![2, 2, 4],
            attn_heads: 4,
            large_kernel_size: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages != SCALES.len() {
            return Err(SgdnError::InvalidConfig(format!("stages must be {}, got {}", SCALES.len(), self.stages)));
        }
        if self.blocks_per_stage.len() != self.stages {
            return Err(SgdnError::InvalidConfig(format!(
                "blocks_per_stage needs {} entries, got {}",
                self.stages,
                self.blocks_per_stage.len()
            )));
        }
        if self.base_channels == 0 {
            return Err(SgdnError::InvalidConfig("base_channels must be positive".to_string()));
        }
        if self.attn_heads == 0 || self.base_channels % self.attn_heads != 0 {
            return Err(SgdnError::HeadMismatch {
                channels: self.base_channels,
                heads: self.attn_heads,
            });
        }
        if self.large_kernel_size % 2 == 0 {
            return Err(SgdnError::InvalidConfig(format!(
                "large_kernel_size must be odd, got {}",
                self.large_kernel_size
            )));
        }
        Ok(())
    }

    /// Channel width of every encoder stage.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.stages).map(|i| self.base_channels << i).collect()
    }
}

/// Module switches. Phase integration and attention live inside the bridge,
/// so enabling either requires the bridge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub use_bgb: bool,
    pub use_pim: bool,
    pub use_iam: bool,
    pub use_cem: bool,
}

impl Ablation {
    pub const FULL: Self = Self {
        use_bgb: true,
        use_pim: true,
        use_iam: true,
        use_cem: true,
    };

    /// Both branches summed, no bridge and no color enhancement.
    pub const BASELINE: Self = Self {
        use_bgb: false,
        use_pim: false,
        use_iam: false,
        use_cem: false,
    };

    pub fn validate(&self) -> Result<()> {
        if !self.use_bgb && (self.use_pim || self.use_iam) {
            return Err(SgdnError::InconsistentAblation(
                "use_pim and use_iam require use_bgb".to_string(),
            ));
        }
        Ok(())
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug)]
struct Layers {
    stem: Conv,
    encoder: Vec<Vec<LargeKernelBlock>>,
    down: Vec<Conv>,
    bridges: Vec<BridgeParams>,
    cem: CemParams,
    decoder: Vec<LargeKernelBlock>,
    up: Vec<Upsample>,
    heads: Vec<Conv>,
}

impl Layers {
    fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = cfg.widths();
        let k = cfg.large_kernel_size;
        let stem = Conv::new(store, "stem", 3, widths[0], 3, 1, rng);
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        for (i, &c) in widths.iter().enumerate() {
            if i > 0 {
                down.push(Conv::new(store, &format!("down{i}"), widths[i - 1], c, 3, 2, rng));
            }
            let blocks = (0..cfg.blocks_per_stage[i])
                .map(|b| LargeKernelBlock::new(store, &format!("enc{i}.block{b}"), c, k, rng))
                .collect();
            encoder.push(blocks);
        }
        let mut bridges = Vec::new();
        for i in 0..widths.len() - 1 {
            bridges.push(BridgeParams::new(store, &format!("bridge{i}"), widths[i], widths[i + 1], cfg.attn_heads, rng)?);
        }
        let cem = CemParams::new(store, "cem", widths[0], rng);
        let decoder = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| LargeKernelBlock::new(store, &format!("dec{i}.block0"), c, k, rng))
            .collect();
        let up = (1..widths.len())
            .map(|i| Upsample::new(store, &format!("up{i}"), widths[i], widths[i - 1], rng))
            .collect();
        let heads = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv::new(store, &format!("head{i}"), c, 3, 3, 1, rng))
            .collect();
        Ok(Self {
            stem,
            encoder,
            down,
            bridges,
            cem,
            decoder,
            up,
            heads,
        })
    }
}

/// The full dual-branch network with its parameters.
#[derive(Clone, Debug)]
pub struct SgdnModel<T> {
    config: ModelConfig,
    ablation: Ablation,
    params: ParamStore<T>,
    layers: Layers,
}

/// Predictions at scales 1, 0.5 and 0.25.
pub type Pyramid<V> = [V; 3];

fn side_ok(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(SgdnError::ImageTooSmall {
            height: h,
            width: w,
            min: MIN_SIDE,
        });
    }
    Ok(())
}

fn round_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Reflect-pads the bottom and right edges of a `[B, C, H, W]` tensor.
pub fn reflect_pad<T: Real>(x: &Tensor<T>, height: usize, width: usize) -> Tensor<T> {
    let [b, c, h, w] = x.dims4();
    if (h, w) == (height, width) {
        return x.clone();
    }
    assert!(height - h < h && width - w < w, "reflect padding wider than the image");
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
    let mut out = Vec::with_capacity(b * c * height * width);
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..height {
            let row = &plane[reflect(y, h) * w..(reflect(y, h) + 1) * w];
            out.extend((0..width).map(|xx| row[reflect(xx, w)]));
        }
    }
    Tensor::from_vec(&[b, c, height, width], out)
}

impl<T: Real> SgdnModel<T> {
    /// Builds a freshly initialized model; the same `(config, seed)` always gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layers = Layers::build(&config, &mut params, &mut rng)?;
        Ok(Self {
            config,
            ablation: Ablation::FULL,
            params,
            layers,
        })
    }

    /// Rebuilds a model around previously saved parameters; names and shapes must match.
    pub fn from_params(config: ModelConfig, ablation: Ablation, params: ParamStore<T>) -> Result<Self> {
        ablation.validate()?;
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(SgdnError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((want_name, want), (name, got)) in model.params.iter().zip(params.iter()) {
            if want_name != name || want.shape() != got.shape() {
                return Err(SgdnError::Checkpoint(format!(
                    "parameter `{name}` {:?} does not match `{want_name}` {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        model.params = params;
        model.ablation = ablation;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn set_ablation(&mut self, ablation: Ablation) -> Result<()> {
        ablation.validate()?;
        self.ablation = ablation;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn bridges(&self) -> &[BridgeParams] {
        &self.layers.bridges
    }

    pub fn cem(&self) -> &CemParams {
        &self.layers.cem
    }

    /// Total number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn cast<U: Real>(&self) -> SgdnModel<U> {
        SgdnModel {
            config: self.config.clone(),
            ablation: self.ablation,
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Encoder stage `i` applied to the previous stage output (or the image for `i = 0`).
    fn stage<E: Exec<T>>(&self, e: &mut E, i: usize, x: &E::V) -> E::V {
        let mut h = if i == 0 {
            self.layers.stem.forward(e, x)
        } else {
            self.layers.down[i - 1].forward(e, x)
        };
        for block in &self.layers.encoder[i] {
            h = block.forward(e, &h);
        }
        h
    }

    /// Plain encoder pass; `x` is `[B, 3, H, W]` with sides divisible by 4.
    pub fn encode_in<E: Exec<T>>(&self, e: &mut E, x: &E::V) -> Vec<E::V> {
        let mut feats: Vec<E::V> = Vec::with_capacity(self.config.stages);
        for i in 0..self.config.stages {
            let f = match feats.last() {
                Some(prev) => self.stage(e, i, prev),
                None => self.stage(e, i, x),
            };
            feats.push(f);
        }
        feats
    }

    /// Stage features of one image, reflect-padded to a multiple of 4.
    pub fn encode(&self, img: &Image<T>) -> Result<Vec<Tensor<T>>> {
        let x = img.to_batch();
        let (h, w) = (round_up(img.height()), round_up(img.width()));
        let x = reflect_pad(&x, h, w);
        let mut e = Eager::new(&self.params);
        let xv = e.constant(x);
        let feats = self.encode_in(&mut e, &xv);
        Ok(feats.into_iter().map(|f| e.take(f)).collect())
    }

    /// Differentiable forward pass of an RGB batch `[B, 3, H, W]`.
    ///
    /// Inputs are reflect-padded to a multiple of 4 and the predictions are
    /// cropped back; scale `s` outputs have `ceil(H * s) x ceil(W * s)` pixels.
    pub fn forward_in<E: Exec<T>>(&self, e: &mut E, hazy: &Tensor<T>) -> Result<Pyramid<E::V>> {
        if hazy.ndim() != 4 || hazy.shape()[1] != 3 {
            return Err(SgdnError::ShapeMismatch {
                context: "forward",
                expected: vec![hazy.shape().first().copied().unwrap_or(1), 3, 0, 0],
                got: hazy.shape().to_vec(),
            });
        }
        let [_, _, h, w] = hazy.dims4();
        side_ok(h, w)?;
        if !hazy.all_finite() {
            return Err(SgdnError::NonFinite { context: "forward" });
        }
        let (hp, wp) = (round_up(h), round_up(w));
        let rgb = reflect_pad(hazy, hp, wp);
        let ycbcr = rgb_to_ycbcr_tensor(&rgb);
        let residuals: Vec<Tensor<T>> = (0..SCALES.len())
            .map(|s| spatial::resize_antialiased(&rgb, hp >> s, wp >> s))
            .collect();
        let xr = e.constant(rgb);
        let xy = e.constant(ycbcr);

        let ab = self.ablation;
        let toggles = BridgeToggles {
            use_pim: ab.use_pim,
            use_iam: ab.use_iam,
        };
        let n = self.config.stages;
        let mut fr: Vec<E::V> = vec![self.stage(e, 0, &xr)];
        let mut fy: Vec<E::V> = vec![self.stage(e, 0, &xy)];
        let mut mixes: Vec<Option<E::V>> = vec![None; n];
        let mut guide = None;
        for i in 1..n {
            let mut nr = self.stage(e, i, &fr[i - 1]);
            let mut ny = self.stage(e, i, &fy[i - 1]);
            if ab.use_bgb {
                let out = bridge_forward(e, &fr[i - 1], &fy[i - 1], &nr, &ny, &self.layers.bridges[i - 1], toggles)?;
                nr = out.gated_rgb;
                ny = out.gated_ycbcr;
                mixes[i] = Some(out.mix);
                if i == 1 {
                    guide = Some(out.ycbcr);
                }
            }
            fr.push(nr);
            fy.push(ny);
        }

        let mut outs: Vec<E::V> = Vec::with_capacity(n);
        let mut d: Option<E::V> = None;
        for i in (0..n).rev() {
            let mut x = e.add(&fr[i], &fy[i]);
            if let Some(prev) = &d {
                let u = self.layers.up[i].forward(e, prev);
                x = e.add(&x, &u);
            }
            if let Some(m) = &mixes[i] {
                x = e.add(&x, m);
            }
            let mut di = self.layers.decoder[i].forward(e, &x);
            if i == 0 {
                let fy_full = match &guide {
                    Some(g) => e.apply(Op::ResizeBilinear { height: hp, width: wp }, &[g]),
                    None => fy[0].clone(),
                };
                di = if ab.use_cem {
                    cem_forward(e, &di, &fy_full, &self.layers.cem)?
                } else {
                    e.add(&di, &fy_full)
                };
            }
            let head = self.layers.heads[i].forward(e, &di);
            let base = e.constant(residuals[i].clone());
            let pred = e.add(&head, &base);
            outs.push(e.apply(Op::Clamp { lo: 0.0, hi: 1.0 }, &[&pred]));
            d = Some(di);
        }
        outs.reverse();

        let mut pyramid = Vec::with_capacity(n);
        for (s, out) in outs.into_iter().enumerate() {
            let (th, tw) = (h.div_ceil(1 << s), w.div_ceil(1 << s));
            pyramid.push(if (th, tw) == (hp >> s, wp >> s) {
                out
            } else {
                e.apply(
                    Op::Crop {
                        y0: 0,
                        x0: 0,
                        height: th,
                        width: tw,
                    },
                    &[&out],
                )
            });
        }
        let mut it = pyramid.into_iter();
        Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
    }

    /// Inference on an RGB batch, returning all three scales.
    pub fn predict_pyramid(&self, hazy: &Tensor<T>) -> Result<Pyramid<Tensor<T>>> {
        let mut e = Eager::new(&self.params);
        let [a, b, c] = self.forward_in(&mut e, hazy)?;
        Ok([e.take(a), e.take(b), e.take(c)])
    }

    /// Full-scale inference on an RGB batch `[B, 3, H, W]`.
    pub fn predict(&self, hazy: &Tensor<T>) -> Result<Tensor<T>> {
        let [full, _, _] = self.predict_pyramid(hazy)?;
        Ok(full)
    }

    /// Dehazes one image; returns predictions at scales 1, 0.5 and 0.25.
    pub fn forward(&self, hazy: &Image<T>) -> Result<Pyramid<Image<T>>> {
        if hazy.space() != ColorSpace::Rgb {
            return Err(SgdnError::WrongColorSpace {
                expected: ColorSpace::Rgb,
                found: hazy.space(),
            });
        }
        let preds = self.predict_pyramid(&hazy.to_batch())?;
        let to_image = |t: Tensor<T>| {
            let [_, c, h, w] = t.dims4();
            Image::from_valid(t.reshape(&[c, h, w]), ColorSpace::Rgb)
        };
        let [a, b, c] = preds;
        Ok([to_image(a), to_image(b), to_image(c)])
    }
}
