//! Attention-based fusion of same-level RGB and depth feature maps.
//!
//! The two modalities are concatenated along channels, gated per channel by a
//! shared bottleneck MLP over global average and max statistics, gated per
//! position by a small convolution over cross-channel average and max maps,
//! and finally reduced back to the single-modality width by a max over
//! modality-aligned channel pairs.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{Conv2dSpec, PoolKind};
use crate::tensor::{Scalar, Shape, Tensor};

/// How the `2c` attended channels are reduced back to `c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FuseMode {
    /// `out[k] = max(x[k], x[k + c])`: each RGB channel against its depth counterpart.
    #[default]
    Modality,
    /// `out[k] = max(x[2k], x[2k + 1])`: depth-2, stride-2 window over raw channel order.
    Adjacent,
}

impl FuseMode {
    fn pair(self, k: usize, c: usize) -> (usize, usize) {
        match self {
            FuseMode::Modality => (k, k + c),
            FuseMode::Adjacent => (2 * k, 2 * k + 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FuseMode::Modality => "modality",
            FuseMode::Adjacent => "adjacent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "modality" => Ok(FuseMode::Modality),
            "adjacent" => Ok(FuseMode::Adjacent),
            _ => Err(Error::Config(format!("unknown fuse mode `{s}` (expected modality|adjacent)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AfbConfig {
    /// Channels per modality; the block operates on `2 * channels`.
    pub channels: usize,
    pub reduction: usize,
    pub kernel: usize,
    pub mlp_bias: bool,
    pub fuse_mode: FuseMode,
}

impl AfbConfig {
    pub fn new(channels: usize, reduction: usize, kernel: usize) -> Self {
        AfbConfig { channels, reduction, kernel, mlp_bias: true, fuse_mode: FuseMode::Modality }
    }

    /// Bottleneck width `⌈2c/r⌉`.
    pub fn hidden(&self) -> usize {
        (2 * self.channels).div_ceil(self.reduction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 {
            return Err(Error::Config("attention channels and reduction must be positive".into()));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("spatial attention kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (c2, hid) = (2 * self.channels, self.hidden());
        let mlp = c2 * hid + hid * c2 + if self.mlp_bias { hid + c2 } else { 0 };
        mlp + 2 * self.kernel * self.kernel + 1
    }

    fn spatial_spec(&self) -> Conv2dSpec {
        Conv2dSpec::new(2, 1, self.kernel, 1, (self.kernel - 1) / 2)
    }
}

/// Parameter count of one block with MLP biases:
/// `2c·⌈2c/r⌉ + ⌈2c/r⌉ + ⌈2c/r⌉·2c + 2c + 2k² + 1`.
pub fn afb_param_count(c: usize, r: usize, k: usize) -> usize {
    AfbConfig::new(c, r, k).param_count()
}

/// Learnable state of one fusion block. The MLP pair is shared by the
/// average- and max-pooled paths.
#[derive(Clone, Debug)]
pub struct AfbParams {
    pub config: AfbConfig,
    pub mlp_w0: ParamId,
    pub mlp_b0: Option<ParamId>,
    pub mlp_w1: ParamId,
    pub mlp_b1: Option<ParamId>,
    pub spatial_w: ParamId,
    pub spatial_b: ParamId,
}

impl AfbParams {
    /// He-normal weights, zero biases.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: AfbConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(store, prefix, config, |shape, fan_in| {
            Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
        })
    }

    /// All weights and biases zero: both gates evaluate to σ(0) = 0.5.
    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, config: AfbConfig) -> Result<Self> {
        Self::build(store, prefix, config, |shape, _| Tensor::zeros(shape))
    }

    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: AfbConfig,
        mut init: impl FnMut(Shape, usize) -> Tensor<T>,
    ) -> Result<Self> {
        config.validate()?;
        let (c2, hid, k) = (2 * config.channels, config.hidden(), config.kernel);
        let bias = |store: &mut ParamStore<T>, name: &str, n: usize| {
            store.add(format!("{prefix}.{name}"), Tensor::zeros(Shape::new(1, n, 1, 1)), true)
        };
        let mlp_w0 = store.add(format!("{prefix}.mlp_w0"), init(Shape::new(hid, c2, 1, 1), c2), true)?;
        let mlp_b0 = if config.mlp_bias { Some(bias(store, "mlp_b0", hid)?) } else { None };
        let mlp_w1 = store.add(format!("{prefix}.mlp_w1"), init(Shape::new(c2, hid, 1, 1), hid), true)?;
        let mlp_b1 = if config.mlp_bias { Some(bias(store, "mlp_b1", c2)?) } else { None };
        let spatial_w = store.add(format!("{prefix}.spatial_w"), init(Shape::new(1, 2, k, k), 2 * k * k), true)?;
        let spatial_b = bias(store, "spatial_b", 1)?;
        Ok(AfbParams { config, mlp_w0, mlp_b0, mlp_w1, mlp_b1, spatial_w, spatial_b })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.mlp_w0];
        v.extend(self.mlp_b0);
        v.push(self.mlp_w1);
        v.extend(self.mlp_b1);
        v.push(self.spatial_w);
        v.push(self.spatial_b);
        v
    }
}

/// Intermediate maps of one fusion pass.
#[derive(Clone, Copy, Debug)]
pub struct FusedFeatures {
    /// Channel gate `(n, 2c, 1, 1)`.
    pub m_c: Var,
    /// Channel-gated features `(n, 2c, h, w)`.
    pub f_prime: Var,
    /// Spatial gate `(n, 1, h, w)`.
    pub m_s: Var,
    /// Spatially-gated features `(n, 2c, h, w)`.
    pub f_double_prime: Var,
    /// Fused output `(n, c, h, w)`.
    pub f_fused: Var,
}

pub fn concat_modalities<T: Scalar>(tape: &mut Tape<T>, f_rgb: Var, f_d: Var) -> Result<Var> {
    let (a, b) = (tape.shape(f_rgb)?, tape.shape(f_d)?);
    contract!(a == b, "modalities must share a shape: rgb {a} vs depth {b}");
    tape.concat_channels(f_rgb, f_d)
}

struct SharedMlp {
    w0: Var,
    b0: Option<Var>,
    w1: Var,
    b1: Option<Var>,
}

impl SharedMlp {
    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = tape.linear(x, self.w0, self.b0)?;
        let h = tape.relu(h)?;
        tape.linear(h, self.w1, self.b1)
    }
}

/// `σ(MLP(avg(F)) + MLP(max(F)))`, with `MLP = W1 ∘ relu ∘ W0`.
pub fn channel_attention<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, f: Var, p: &AfbParams) -> Result<Var> {
    let s = tape.shape(f)?;
    contract!(
        s.c == 2 * p.config.channels,
        "channel attention sized for {} channels, got {}",
        2 * p.config.channels,
        s.c
    );
    let mlp = SharedMlp {
        w0: tape.param(store, p.mlp_w0)?,
        b0: p.mlp_b0.map(|id| tape.param(store, id)).transpose()?,
        w1: tape.param(store, p.mlp_w1)?,
        b1: p.mlp_b1.map(|id| tape.param(store, id)).transpose()?,
    };
    let avg = tape.global_pool(f, PoolKind::Avg)?;
    let max = tape.global_pool(f, PoolKind::Max)?;
    let a = mlp.apply(tape, avg)?;
    let m = mlp.apply(tape, max)?;
    let sum = tape.add(a, m)?;
    tape.sigmoid(sum)
}

/// `σ(conv([avg_c(F'); max_c(F')]))`, shape-preserving.
pub fn spatial_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    f_prime: Var,
    p: &AfbParams,
) -> Result<Var> {
    p.config.validate()?;
    let avg = tape.channel_pool(f_prime, PoolKind::Avg)?;
    let max = tape.channel_pool(f_prime, PoolKind::Max)?;
    let pooled = tape.concat_channels(avg, max)?;
    let w = tape.param(store, p.spatial_w)?;
    let b = tape.param(store, p.spatial_b)?;
    let logits = tape.conv2d(pooled, w, Some(b), p.config.spatial_spec())?;
    tape.sigmoid(logits)
}

pub fn modality_max_fuse<T: Scalar>(tape: &mut Tape<T>, x: Var, mode: FuseMode) -> Result<Var> {
    tape.max_fuse(x, mode)
}

/// Full block: concat → channel gate → spatial gate → pairwise channel max.
pub fn afb<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    f_rgb: Var,
    f_d: Var,
    p: &AfbParams,
) -> Result<FusedFeatures> {
    let f = concat_modalities(tape, f_rgb, f_d)?;
    let m_c = channel_attention(tape, store, f, p)?;
    let f_prime = tape.scale_channels(f, m_c)?;
    let m_s = spatial_attention(tape, store, f_prime, p)?;
    let f_double_prime = tape.scale_spatial(f_prime, m_s)?;
    let f_fused = tape.max_fuse(f_double_prime, p.config.fuse_mode)?;
    Ok(FusedFeatures { m_c, f_prime, m_s, f_double_prime, f_fused })
}

pub fn max_fuse_forward<T: Scalar>(x: &Tensor<T>, mode: FuseMode) -> Result<(Tensor<T>, Vec<bool>)> {
    let s = x.shape();
    contract!(s.c.is_multiple_of(2), "modality max-fuse needs an even channel count, got {}", s.c);
    let c = s.c / 2;
    let plane = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, c, s.h, s.w));
    let mut take_first = Vec::with_capacity(out.len());
    for n in 0..s.n {
        for k in 0..c {
            let (a, b) = mode.pair(k, c);
            let ra = &x.data()[(n * s.c + a) * plane..(n * s.c + a + 1) * plane];
            let rb = &x.data()[(n * s.c + b) * plane..(n * s.c + b + 1) * plane];
            let dst = &mut out.data_mut()[(n * c + k) * plane..(n * c + k + 1) * plane];
            for p in 0..plane {
                let first = ra[p] >= rb[p];
                dst[p] = if first { ra[p] } else { rb[p] };
                take_first.push(first);
            }
        }
    }
    Ok((out, take_first))
}

pub(crate) fn max_fuse_backward<T: Scalar>(xs: Shape, mode: FuseMode, take_first: &[bool], g: &Tensor<T>) -> Tensor<T> {
    let c = xs.c / 2;
    let plane = xs.plane();
    let mut dx = Tensor::zeros(xs);
    let mut i = 0;
    for n in 0..xs.n {
        for k in 0..c {
            let (a, b) = mode.pair(k, c);
            for p in 0..plane {
                let src = if take_first[i] { a } else { b };
                dx.data_mut()[(n * xs.c + src) * plane + p] += g.data()[i];
                i += 1;
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    pub fn max_fuse(&mut self, x: Var, mode: FuseMode) -> Result<Var> {
        let (out, take_first) = max_fuse_forward(self.value(x)?, mode)?;
        self.record(crate::autodiff::tape::Op::MaxFuse { x, mode, take_first }, out)
    }
}
