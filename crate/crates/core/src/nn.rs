//! Parameterized layers shared by the backbone and the bridge.

use alloc::format;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Exec;
use crate::ops::Op;
use crate::params::{uniform_fan_in, ParamId, ParamStore};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Square `k x k` convolution with "same" padding at stride 1.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        Self {
            weight: store.add(format!("{name}.weight"), uniform_fan_in(&[cout, cin, k, k], fan_in, rng)),
            bias: store.add(format!("{name}.bias"), uniform_fan_in(&[cout], fan_in, rng)),
            stride,
            pad: k / 2,
        }
    }

    /// Sets the kernel to `scale` times the identity map and the bias to zero.
    pub fn set_identity<T: Real>(&self, store: &mut ParamStore<T>, scale: f64) {
        let w = store.get_mut(self.weight);
        let [cout, cin, k, _] = w.dims4();
        assert_eq!(cout, cin, "identity kernel needs equal channel counts");
        let c = k / 2;
        w.data_mut().fill(T::zero());
        for o in 0..cout {
            w.data_mut()[((o * cin + o) * k + c) * k + c] = lit(scale);
        }
        store.get_mut(self.bias).data_mut().fill(T::zero());
    }

    pub fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, x: &E::V) -> E::V {
        let w = e.param(self.weight);
        let b = e.param(self.bias);
        e.apply(
            Op::Conv2d {
                stride: self.stride,
                pad: self.pad,
            },
            &[x, &w, &b],
        )
    }
}

#[derive(Clone, Debug)]
pub struct Depthwise {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Depthwise {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), uniform_fan_in(&[channels, 1, k, k], k * k, rng)),
            bias: store.add(format!("{name}.bias"), uniform_fan_in(&[channels], k * k, rng)),
            pad: k / 2,
        }
    }

    pub fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, x: &E::V) -> E::V {
        let w = e.param(self.weight);
        let b = e.param(self.bias);
        e.apply(Op::DepthwiseConv2d { pad: self.pad }, &[x, &w, &b])
    }
}

/// 2x2 stride-2 transposed convolution (exact 2x upsampling).
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), uniform_fan_in(&[cin, cout, 2, 2], cin, rng)),
            bias: store.add(format!("{name}.bias"), uniform_fan_in(&[cout], cin, rng)),
        }
    }

    pub fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, x: &E::V) -> E::V {
        let w = e.param(self.weight);
        let b = e.param(self.bias);
        e.apply(Op::ConvTranspose2x2, &[x, &w, &b])
    }
}

/// Layer normalization across channels at every pixel.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const NORM_EPS: f64 = 1e-6;

impl ChannelNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, x: &E::V) -> E::V {
        let g = e.param(self.gamma);
        let b = e.param(self.beta);
        e.apply(Op::LayerNormChannels { eps: NORM_EPS }, &[x, &g, &b])
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Affine map with a zero-initialized bias.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), uniform_fan_in(&[cout, cin], cin, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
        }
    }

    pub fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, x: &E::V) -> E::V {
        let w = e.param(self.weight);
        let b = e.param(self.bias);
        e.apply(Op::Linear, &[x, &w, &b])
    }
}

/// Pre-norm large-kernel block: `x + pw2(pw1(dw(LN x)) * LN x)`.
#[derive(Clone, Debug)]
pub struct LargeKernelBlock {
    pub norm: ChannelNorm,
    pub dw: Depthwise,
    pub pw1: Conv,
    pub pw2: Conv,
}

impl LargeKernelBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: ChannelNorm::new(store, &format!("{name}.norm"), channels),
            dw: Depthwise::new(store, &format!("{name}.dw"), channels, kernel, rng),
            pw1: Conv::new(store, &format!("{name}.pw1"), channels, channels, 1, 1, rng),
            pw2: Conv::new(store, &format!("{name}.pw2"), channels, channels, 1, 1, rng),
        }
    }

    pub fn forward<T: Real, E: Exec<T>>(&self, e: &mut E, x: &E::V) -> E::V {
        let u = self.norm.forward(e, x);
        let a = self.dw.forward(e, &u);
        let a = self.pw1.forward(e, &a);
        let gated = e.mul(&a, &u);
        let out = self.pw2.forward(e, &gated);
        e.add(x, &out)
    }
}
