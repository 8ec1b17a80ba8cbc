//! Cross color space modules: the bi-color guidance bridge (phase integration
//! and interaction attention) and the color enhancement module.
//!
//! Feature maps are `[B, C, H, W]`. Every function takes an [`Exec`], so the
//! same code serves inference and training.

use alloc::format;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Exec};
use crate::error::{Result, SgdnError};
use crate::nn::{ChannelNorm, Conv, Linear};
use crate::ops::{attention, Op};
use crate::params::ParamStore;
use crate::real::Real;
use crate::spectral::{decompose_in, recombine_in};
use crate::tensor::Tensor;

/// Ablation switches for the bridge internals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BridgeToggles {
    pub use_pim: bool,
    pub use_iam: bool,
}

impl Default for BridgeToggles {
    fn default() -> Self {
        Self {
            use_pim: true,
            use_iam: true,
        }
    }
}

/// One direction of the interaction attention: queries from one branch, keys
/// and values from the other, followed by a feed-forward network.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub norm_q: ChannelNorm,
    pub norm_kv: ChannelNorm,
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub o: Conv,
    pub norm_ffn: ChannelNorm,
    pub ffn_in: Conv,
    pub ffn_out: Conv,
}

pub const FFN_EXPANSION: usize = 2;

impl CrossAttention {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm_q: ChannelNorm::new(store, &format!("{name}.norm_q"), c),
            norm_kv: ChannelNorm::new(store, &format!("{name}.norm_kv"), c),
            q: Conv::new(store, &format!("{name}.q"), c, c, 1, 1, rng),
            k: Conv::new(store, &format!("{name}.k"), c, c, 1, 1, rng),
            v: Conv::new(store, &format!("{name}.v"), c, c, 1, 1, rng),
            o: Conv::new(store, &format!("{name}.o"), c, c, 1, 1, rng),
            norm_ffn: ChannelNorm::new(store, &format!("{name}.norm_ffn"), c),
            ffn_in: Conv::new(store, &format!("{name}.ffn_in"), c, FFN_EXPANSION * c, 1, 1, rng),
            ffn_out: Conv::new(store, &format!("{name}.ffn_out"), FFN_EXPANSION * c, c, 1, 1, rng),
        }
    }

    fn project_qk<T: Real, E: Exec<T>>(&self, e: &mut E, xq: &E::V, xkv: &E::V) -> (E::V, E::V, E::V) {
        let nq = self.norm_q.forward(e, xq);
        let nkv = self.norm_kv.forward(e, xkv);
        let q = self.q.forward(e, &nq);
        let k = self.k.forward(e, &nkv);
        (q, k, nkv)
    }

    fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, xq: &E::V, xkv: &E::V, heads: usize) -> E::V {
        let (q, k, nkv) = self.project_qk(e, xq, xkv);
        let v = self.v.forward(e, &nkv);
        let a = e.apply(Op::Attention { heads }, &[&q, &k, &v]);
        let a = self.o.forward(e, &a);
        let x1 = e.add(xq, &a);
        let n = self.norm_ffn.forward(e, &x1);
        let h = self.ffn_in.forward(e, &n);
        let h = e.unary(Op::Gelu, &h);
        let h = self.ffn_out.forward(e, &h);
        e.add(&x1, &h)
    }
}

/// Learned parameters of one bridge (encoder stage `i` feeding stage `i + 1`).
#[derive(Clone, Debug)]
pub struct BridgeParams {
    pub channels: usize,
    pub next_channels: usize,
    pub heads: usize,
    pub phase_rgb: Conv,
    pub phase_ycbcr: Conv,
    pub amp_rgb: Conv,
    pub amp_ycbcr: Conv,
    pub attn_rgb: CrossAttention,
    pub attn_ycbcr: CrossAttention,
    pub up_rgb: Conv,
    pub up_ycbcr: Conv,
}

impl BridgeParams {
    /// Phase convolutions start at `0.5 * identity` and amplitude convolutions
    /// at identity, so the phase integration is the identity map when both
    /// branches carry the same feature.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        next_channels: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(SgdnError::HeadMismatch { channels, heads });
        }
        let p = Self {
            channels,
            next_channels,
            heads,
            phase_rgb: Conv::new(store, &format!("{name}.phase_rgb"), channels, channels, 3, 1, rng),
            phase_ycbcr: Conv::new(store, &format!("{name}.phase_ycbcr"), channels, channels, 3, 1, rng),
            amp_rgb: Conv::new(store, &format!("{name}.amp_rgb"), channels, channels, 1, 1, rng),
            amp_ycbcr: Conv::new(store, &format!("{name}.amp_ycbcr"), channels, channels, 1, 1, rng),
            attn_rgb: CrossAttention::new(store, &format!("{name}.attn_rgb"), channels, rng),
            attn_ycbcr: CrossAttention::new(store, &format!("{name}.attn_ycbcr"), channels, rng),
            up_rgb: Conv::new(store, &format!("{name}.up_rgb"), channels, next_channels, 1, 1, rng),
            up_ycbcr: Conv::new(store, &format!("{name}.up_ycbcr"), channels, next_channels, 1, 1, rng),
        };
        p.phase_rgb.set_identity(store, 0.5);
        p.phase_ycbcr.set_identity(store, 0.5);
        p.amp_rgb.set_identity(store, 1.0);
        p.amp_ycbcr.set_identity(store, 1.0);
        Ok(p)
    }
}

/// Projection feeding the channel weights of the color enhancement module.
#[derive(Clone, Debug)]
pub struct CemParams {
    pub proj: Linear,
}

impl CemParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            proj: Linear::new(store, &format!("{name}.proj"), channels, channels, rng),
        }
    }
}

fn same_shape<T: Real, E: Exec<T>>(e: &E, context: &'static str, a: &E::V, b: &E::V) -> Result<()> {
    let (sa, sb) = (e.shape(a), e.shape(b));
    if sa.len() != 4 || sa != sb {
        return Err(SgdnError::ShapeMismatch {
            context,
            expected: sa,
            got: sb,
        });
    }
    Ok(())
}

/// Average-pools the RGB stream and max-pools the YCbCr stream (kernel 3, stride 2, padding 1).
pub fn pool_split<T: Real, E: Exec<T>>(e: &mut E, f_rgb: &E::V, f_ycbcr: &E::V) -> Result<(E::V, E::V)> {
    same_shape(e, "pool_split", f_rgb, f_ycbcr)?;
    let a = e.apply(Op::AvgPool, &[f_rgb]);
    let m = e.apply(Op::MaxPool, &[f_ycbcr]);
    Ok((a, m))
}

/// Phase integration: both branches are rebuilt from their own (convolved,
/// rectified) amplitude and a single blended phase.
pub fn pim_forward<T: Real, E: Exec<T>>(e: &mut E, f_a: &E::V, f_m: &E::V, p: &BridgeParams) -> Result<(E::V, E::V)> {
    same_shape(e, "pim_forward", f_a, f_m)?;
    let width = e.shape(f_a)[3];
    let (amp_r, phase_r) = decompose_in(e, f_a);
    let (amp_y, phase_y) = decompose_in(e, f_m);
    let blend_y = p.phase_ycbcr.forward(e, &phase_y);
    let blend_r = p.phase_rgb.forward(e, &phase_r);
    let phase = e.add(&blend_y, &blend_r);
    let amp_r = p.amp_rgb.forward(e, &amp_r);
    let amp_r = e.unary(Op::Relu, &amp_r);
    let amp_y = p.amp_ycbcr.forward(e, &amp_y);
    let amp_y = e.unary(Op::Relu, &amp_y);
    let out_r = recombine_in(e, &amp_r, &phase, width);
    let out_y = recombine_in(e, &amp_y, &phase, width);
    Ok((out_r, out_y))
}

fn check_heads<T: Real, E: Exec<T>>(e: &E, x: &E::V, heads: usize) -> Result<()> {
    let c = e.shape(x)[1];
    if heads == 0 || c % heads != 0 {
        return Err(SgdnError::HeadMismatch { channels: c, heads });
    }
    Ok(())
}

/// Bidirectional cross-attention: each branch queries the other.
pub fn iam_forward<T: Real, E: Exec<T>>(e: &mut E, fr: &E::V, fy: &E::V, p: &BridgeParams) -> Result<(E::V, E::V)> {
    same_shape(e, "iam_forward", fr, fy)?;
    check_heads(e, fr, p.heads)?;
    let out_r = p.attn_rgb.forward(e, fr, fy, p.heads);
    let out_y = p.attn_ycbcr.forward(e, fy, fr, p.heads);
    Ok((out_r, out_y))
}

/// Attention probabilities of both directions, `[B, heads, N, N]` each.
pub fn iam_attention_weights<T: Real>(
    store: &ParamStore<T>,
    fr: &Tensor<T>,
    fy: &Tensor<T>,
    p: &BridgeParams,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut e = Eager::new(store);
    let r = e.constant(fr.clone());
    let y = e.constant(fy.clone());
    same_shape(&e, "iam_attention_weights", &r, &y)?;
    check_heads(&e, &r, p.heads)?;
    let (q, k, _) = p.attn_rgb.project_qk(&mut e, &r, &y);
    let w_r = attention::weights(e.value(&q), e.value(&k), p.heads);
    let (q, k, _) = p.attn_ycbcr.project_qk(&mut e, &y, &r);
    let w_y = attention::weights(e.value(&q), e.value(&k), p.heads);
    Ok((w_r, w_y))
}

/// Aligns a bridge output to the next stage: bilinear resize then 1x1 projection.
pub fn up<T: Real, E: Exec<T>>(e: &mut E, x: &E::V, conv: &Conv, height: usize, width: usize) -> E::V {
    let r = e.apply(Op::ResizeBilinear { height, width }, &[x]);
    conv.forward(e, &r)
}

/// Gates the next-stage features with `sigmoid(U)` and returns `U_r + U_y`.
pub fn gate_and_mix<T: Real, E: Exec<T>>(
    e: &mut E,
    tr: &E::V,
    ty: &E::V,
    next_rgb: &E::V,
    next_ycbcr: &E::V,
    p: &BridgeParams,
) -> Result<(E::V, E::V, E::V)> {
    same_shape(e, "gate_and_mix", tr, ty)?;
    same_shape(e, "gate_and_mix", next_rgb, next_ycbcr)?;
    let s = e.shape(next_rgb);
    if s[1] != p.next_channels || e.shape(tr)[1] != p.channels {
        return Err(SgdnError::ShapeMismatch {
            context: "gate_and_mix",
            expected: alloc::vec![s[0], p.next_channels, s[2], s[3]],
            got: s,
        });
    }
    let (h, w) = (s[2], s[3]);
    let ur = up(e, tr, &p.up_rgb, h, w);
    let uy = up(e, ty, &p.up_ycbcr, h, w);
    let sr = e.unary(Op::Sigmoid, &ur);
    let sy = e.unary(Op::Sigmoid, &uy);
    let gr = e.mul(&sr, next_rgb);
    let gy = e.mul(&sy, next_ycbcr);
    let mix = e.add(&ur, &uy);
    Ok((gr, gy, mix))
}

/// Output of one full bridge.
pub struct BridgeOutput<V> {
    pub gated_rgb: V,
    pub gated_ycbcr: V,
    pub mix: V,
    /// Post-attention YCbCr stream at the pooled resolution.
    pub ycbcr: V,
}

/// Pools, integrates phase, cross-attends, and gates the next stage.
pub fn bridge_forward<T: Real, E: Exec<T>>(
    e: &mut E,
    f_rgb: &E::V,
    f_ycbcr: &E::V,
    next_rgb: &E::V,
    next_ycbcr: &E::V,
    p: &BridgeParams,
    toggles: BridgeToggles,
) -> Result<BridgeOutput<E::V>> {
    let (fa, fm) = pool_split(e, f_rgb, f_ycbcr)?;
    let (br, by) = if toggles.use_pim { pim_forward(e, &fa, &fm, p)? } else { (fa, fm) };
    let (tr, ty) = if toggles.use_iam { iam_forward(e, &br, &by, p)? } else { (br, by) };
    let (gated_rgb, gated_ycbcr, mix) = gate_and_mix(e, &tr, &ty, next_rgb, next_ycbcr, p)?;
    Ok(BridgeOutput {
        gated_rgb,
        gated_ycbcr,
        mix,
        ycbcr: ty,
    })
}

/// Channel weights `v = softmax(proj(GAP(f_ycbcr - channel_mean)))`, `[B, C]`.
pub fn cem_weights<T: Real, E: Exec<T>>(e: &mut E, f_ycbcr: &E::V, p: &CemParams) -> E::V {
    let centered = e.unary(Op::CenterChannels, f_ycbcr);
    let pooled = e.unary(Op::GlobalAvgPool, &centered);
    let logits = p.proj.forward(e, &pooled);
    e.unary(Op::Softmax, &logits)
}

/// `D_o = v * f_rgb + f_ycbcr` with `v` from [`cem_weights`].
pub fn cem_forward<T: Real, E: Exec<T>>(e: &mut E, f_rgb: &E::V, f_ycbcr: &E::V, p: &CemParams) -> Result<E::V> {
    same_shape(e, "cem_forward", f_rgb, f_ycbcr)?;
    let v = cem_weights(e, f_ycbcr, p);
    let modulated = e.apply(Op::ScaleChannels, &[f_rgb, &v]);
    Ok(e.add(&modulated, f_ycbcr))
}
