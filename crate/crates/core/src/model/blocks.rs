//! Encoder and decoder building blocks.

use rand::Rng;

use crate::attention::{afb, AfbConfig, AfbParams};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::model::Variant;
use crate::nn::{BatchNormConfig, BnMode, Conv2dSpec, Pool2dSpec, PoolKind, RunningStats};
use crate::tensor::{Scalar, Shape, Tensor};

/// Shape-preserving 5×5 max pool used by every chained-pooling unit.
pub const CRP_POOL: Pool2dSpec = Pool2dSpec { kind: PoolKind::Max, kernel: 5, stride: 1, padding: 2 };
/// Stem downsampling pool.
pub const STEM_POOL: Pool2dSpec = Pool2dSpec { kind: PoolKind::Max, kernel: 3, stride: 2, padding: 1 };

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub path: String,
    pub spec: Conv2dSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvLayer {
    /// Weights ~ N(0, 2/fan_in), bias zero.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let weight = store.add(
            format!("{path}.weight"),
            Tensor::randn(spec.weight_shape(), (2.0 / fan_in as f64).sqrt(), rng),
            true,
        )?;
        let bias = if spec.bias {
            Some(store.add(format!("{path}.bias"), Tensor::zeros(spec.bias_shape()), true)?)
        } else {
            None
        };
        Ok(ConvLayer { path: path.to_string(), spec, weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = self.bias.map(|id| tape.param(store, id)).transpose()?;
        tape.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub path: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub config: BatchNormConfig,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, path: &str, channels: usize) -> Result<Self> {
        let shape = Shape::new(1, channels, 1, 1);
        Ok(BatchNorm2d {
            path: path.to_string(),
            channels,
            gamma: store.add(format!("{path}.gamma"), Tensor::ones(shape), true)?,
            beta: store.add(format!("{path}.beta"), Tensor::zeros(shape), true)?,
            running_mean: store.add(format!("{path}.running_mean"), Tensor::zeros(shape), false)?,
            running_var: store.add(format!("{path}.running_var"), Tensor::ones(shape), false)?,
            config: BatchNormConfig::default(),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: BnMode) -> Result<Var> {
        let g = tape.param(store, self.gamma)?;
        let b = tape.param(store, self.beta)?;
        let placeholder = || Tensor::zeros(Shape::SCALAR);
        let mut mean = std::mem::replace(&mut store.get_mut(self.running_mean).value, placeholder());
        let mut var = std::mem::replace(&mut store.get_mut(self.running_var).value, placeholder());
        let out = tape.batchnorm2d(x, g, b, RunningStats { mean: &mut mean, var: &mut var }, self.config, mode);
        store.get_mut(self.running_mean).value = mean;
        store.get_mut(self.running_var).value = var;
        out
    }
}

fn norm<T: Scalar>(
    bn: &Option<BatchNorm2d>,
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    x: Var,
    mode: BnMode,
) -> Result<Var> {
    match bn {
        Some(bn) => bn.forward(tape, store, x, mode),
        None => Ok(x),
    }
}

/// `x_{l+1} = relu(F(x_l) + H(x_l))` with `F` = conv-bn-relu-conv-bn and `H`
/// the identity, or a 1×1 projection when width or stride change.
#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub conv1: ConvLayer,
    pub bn1: Option<BatchNorm2d>,
    pub conv2: ConvLayer,
    pub bn2: Option<BatchNorm2d>,
    pub skip: Option<ConvLayer>,
}

impl ResidualUnit {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = |in_c, stride| {
            let spec = Conv2dSpec::new(in_c, out_c, 3, stride, 1);
            if batch_norm {
                spec.without_bias()
            } else {
                spec
            }
        };
        let conv1 = ConvLayer::new(store, &format!("{path}.conv1"), conv(in_c, stride), rng)?;
        let bn1 = batch_norm.then(|| BatchNorm2d::new(store, &format!("{path}.bn1"), out_c)).transpose()?;
        let conv2 = ConvLayer::new(store, &format!("{path}.conv2"), conv(out_c, 1), rng)?;
        let bn2 = batch_norm.then(|| BatchNorm2d::new(store, &format!("{path}.bn2"), out_c)).transpose()?;
        let skip = if in_c != out_c || stride != 1 {
            Some(ConvLayer::new(store, &format!("{path}.skip"), Conv2dSpec::new(in_c, out_c, 1, stride, 0), rng)?)
        } else {
            None
        };
        Ok(ResidualUnit { conv1, bn1, conv2, bn2, skip })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: BnMode) -> Result<Var> {
        let h = self.conv1.forward(tape, store, x)?;
        let h = norm(&self.bn1, tape, store, h, mode)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, store, h)?;
        let h = norm(&self.bn2, tape, store, h, mode)?;
        let shortcut = match &self.skip {
            Some(proj) => proj.forward(tape, store, x)?,
            None => x,
        };
        let y = tape.add(h, shortcut)?;
        tape.relu(y)
    }
}

/// Stem (stride-2 conv + stride-2 pool) and four residual stages. Emits the
/// stage outputs at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
#[derive(Clone, Debug)]
pub struct EncoderBranch {
    pub stem: ConvLayer,
    pub stem_bn: Option<BatchNorm2d>,
    pub stages: Vec<Vec<ResidualUnit>>,
}

impl EncoderBranch {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        in_channels: usize,
        widths: [usize; 4],
        units_per_stage: usize,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = Conv2dSpec::new(in_channels, widths[0], 3, 2, 1);
        let spec = if batch_norm { spec.without_bias() } else { spec };
        let stem = ConvLayer::new(store, &format!("{path}.stem.conv"), spec, rng)?;
        let stem_bn = batch_norm.then(|| BatchNorm2d::new(store, &format!("{path}.stem.bn"), widths[0])).transpose()?;
        let mut stages = Vec::with_capacity(4);
        let mut in_c = widths[0];
        for (s, &w) in widths.iter().enumerate() {
            let mut units = Vec::with_capacity(units_per_stage);
            for u in 0..units_per_stage {
                let stride = if s > 0 && u == 0 { 2 } else { 1 };
                let unit_path = format!("{path}.stage{}.unit{u}", s + 1);
                units.push(ResidualUnit::new(store, &unit_path, in_c, w, stride, batch_norm, rng)?);
                in_c = w;
            }
            stages.push(units);
        }
        Ok(EncoderBranch { stem, stem_bn, stages })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<[Var; 4]> {
        let h = self.stem.forward(tape, store, x)?;
        let h = norm(&self.stem_bn, tape, store, h, mode)?;
        let h = tape.relu(h)?;
        let mut h = tape.pool2d(h, STEM_POOL)?;
        let mut outs = [h; 4];
        for (s, units) in self.stages.iter().enumerate() {
            for unit in units {
                h = unit.forward(tape, store, h, mode)?;
            }
            outs[s] = h;
        }
        Ok(outs)
    }
}

/// Four chained `5×5 max pool → 1×1 conv` units; each unit's output is added
/// to the running sum.
#[derive(Clone, Debug)]
pub struct CrpBlock {
    pub convs: Vec<ConvLayer>,
}

impl CrpBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, path: &str, width: usize, rng: &mut R) -> Result<Self> {
        let convs = (0..4)
            .map(|i| ConvLayer::new(store, &format!("{path}.conv{i}"), Conv2dSpec::pointwise(width, width), rng))
            .collect::<Result<_>>()?;
        Ok(CrpBlock { convs })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut sum = x;
        let mut path = x;
        for conv in &self.convs {
            let pooled = tape.pool2d(path, CRP_POOL)?;
            path = conv.forward(tape, store, pooled)?;
            sum = tape.add(sum, path)?;
        }
        Ok(sum)
    }
}

/// One multi-modal multi-resolution fusion stage of the decoder.
#[derive(Clone, Debug)]
pub struct MrfModule {
    pub variant: Variant,
    pub proj_rgb: Option<ConvLayer>,
    pub proj_depth: Option<ConvLayer>,
    pub afb: Option<AfbParams>,
    /// Projection of the upsampled previous stage; absent at the deepest level.
    pub up_proj: Option<ConvLayer>,
    pub crp: CrpBlock,
    pub out_conv: ConvLayer,
    pub out_bn: Option<BatchNorm2d>,
}

impl MrfModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        path: &str,
        variant: Variant,
        encoder_channels: usize,
        afb_config: AfbConfig,
        has_previous: bool,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let d = afb_config.channels;
        let proj = |store: &mut ParamStore<T>, name: &str, rng: &mut R| {
            ConvLayer::new(store, &format!("{path}.{name}"), Conv2dSpec::pointwise(encoder_channels, d), rng)
        };
        let proj_rgb = variant.uses_rgb().then(|| proj(store, "proj_rgb", rng)).transpose()?;
        let proj_depth = variant.uses_depth().then(|| proj(store, "proj_depth", rng)).transpose()?;
        let afb = (variant == Variant::Mmaf)
            .then(|| AfbParams::new(store, &format!("{path}.afb"), afb_config, rng))
            .transpose()?;
        let up_proj = has_previous
            .then(|| ConvLayer::new(store, &format!("{path}.up_proj"), Conv2dSpec::pointwise(d, d), rng))
            .transpose()?;
        let crp = CrpBlock::new(store, &format!("{path}.crp"), d, rng)?;
        let out_spec = Conv2dSpec::new(d, d, 3, 1, 1);
        let out_spec = if batch_norm { out_spec.without_bias() } else { out_spec };
        let out_conv = ConvLayer::new(store, &format!("{path}.out_conv"), out_spec, rng)?;
        let out_bn = batch_norm.then(|| BatchNorm2d::new(store, &format!("{path}.out_bn"), d)).transpose()?;
        Ok(MrfModule { variant, proj_rgb, proj_depth, afb, up_proj, crp, out_conv, out_bn })
    }

    /// Fuses the two same-level encoder maps (AFB, summation, or the lone
    /// stream), adds the upsampled previous stage, then CRP and the
    /// conv-bn-relu output.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        rgb: Option<Var>,
        depth: Option<Var>,
        previous: Option<Var>,
        mode: BnMode,
    ) -> Result<Var> {
        let store_ro: &ParamStore<T> = store;
        let project = |tape: &mut Tape<T>, layer: &Option<ConvLayer>, x: Option<Var>| -> Result<Option<Var>> {
            match (layer, x) {
                (Some(l), Some(x)) => l.forward(tape, store_ro, x).map(Some),
                _ => Ok(None),
            }
        };
        let r = project(tape, &self.proj_rgb, rgb)?;
        let d = project(tape, &self.proj_depth, depth)?;
        let fused = match (self.variant, r, d) {
            (Variant::Mmaf, Some(r), Some(d)) => {
                let params = self.afb.as_ref().expect("mmaf stage owns an AFB");
                afb(tape, store_ro, r, d, params)?.f_fused
            }
            (Variant::Smf, Some(r), Some(d)) => tape.add(r, d)?,
            (Variant::RgbOnly, Some(r), _) => r,
            (Variant::DepthOnly, _, Some(d)) => d,
            _ => {
                return Err(crate::Error::Contract(format!(
                    "{} stage is missing an input stream",
                    self.variant.name()
                )))
            }
        };
        let s = tape.shape(fused)?;
        let merged = match (previous, &self.up_proj) {
            (Some(prev), Some(proj)) => {
                let up = tape.upsample_bilinear(prev, s.h, s.w)?;
                let up = proj.forward(tape, store_ro, up)?;
                tape.add(fused, up)?
            }
            (None, None) => fused,
            _ => return Err(crate::Error::Contract("previous-stage input does not match stage layout".into())),
        };
        let refined = self.crp.forward(tape, store_ro, merged)?;
        let out = self.out_conv.forward(tape, store, refined)?;
        let out = norm(&self.out_bn, tape, store, out, mode)?;
        tape.relu(out)
    }
}
