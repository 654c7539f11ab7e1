//! The two-encoder / one-decoder segmentation network.

pub mod audit;
pub mod blocks;
pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AfbConfig, FuseMode};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{contract, Error, Result};
use crate::labels::LabelMap;
use crate::nn::{argmax_channels, BnMode, Conv2dSpec};
use crate::tensor::{Scalar, Tensor};

pub use audit::{count_flops, count_parameters, FlopCount, ParameterTable};
pub use blocks::{BatchNorm2d, ConvLayer, CrpBlock, EncoderBranch, MrfModule, ResidualUnit};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// Which streams the decoder fuses, and how.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    RgbOnly,
    DepthOnly,
    /// Both streams, element-wise sum at every level.
    Smf,
    /// Both streams through the attention fusion block.
    Mmaf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::RgbOnly, Variant::DepthOnly, Variant::Smf, Variant::Mmaf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RgbOnly => "rgb_only",
            Variant::DepthOnly => "depth_only",
            Variant::Smf => "smf",
            Variant::Mmaf => "mmaf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (rgb_only, depth_only, smf, mmaf)")))
    }

    pub fn uses_rgb(self) -> bool {
        self != Variant::DepthOnly
    }

    pub fn uses_depth(self) -> bool {
        self != Variant::RgbOnly
    }

    pub(crate) fn code(self) -> u32 {
        Variant::ALL.iter().position(|&v| v == self).unwrap() as u32
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        Variant::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown variant code {code}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Output channels of the four encoder stages.
    pub widths: [usize; 4],
    pub units_per_stage: usize,
    /// Decoder width `d`.
    pub decoder_width: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub classes: usize,
    pub batch_norm: bool,
    pub mlp_bias: bool,
    pub fuse_mode: FuseMode,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::tiny(4)
    }
}

impl ModelConfig {
    /// Widths 8/16/32/64, d = 8: the desk-scale configuration.
    pub fn tiny(classes: usize) -> Self {
        ModelConfig {
            widths: [8, 16, 32, 64],
            units_per_stage: 2,
            decoder_width: 8,
            reduction: 4,
            spatial_kernel: 7,
            classes,
            batch_norm: true,
            mlp_bias: true,
            fuse_mode: FuseMode::Modality,
            variant: Variant::Mmaf,
        }
    }

    /// Widths 4/8/16/32, d = 4, one unit per stage. Small enough for
    /// finite-difference checks.
    pub fn micro(classes: usize) -> Self {
        ModelConfig {
            widths: [4, 8, 16, 32],
            units_per_stage: 1,
            decoder_width: 4,
            reduction: 2,
            spatial_kernel: 3,
            ..ModelConfig::tiny(classes)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn afb_config(&self) -> AfbConfig {
        AfbConfig {
            mlp_bias: self.mlp_bias,
            fuse_mode: self.fuse_mode,
            ..AfbConfig::new(self.decoder_width, self.reduction, self.spatial_kernel)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.decoder_width == 0 || self.units_per_stage == 0 {
            return Err(Error::Config("widths, decoder width and units per stage must be positive".into()));
        }
        if !(1..=255).contains(&self.classes) {
            return Err(Error::Config(format!("classes must lie in 1..=255, got {}", self.classes)));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction must be positive".into()));
        }
        self.afb_config().validate()
    }
}

/// Parameter ids for the whole network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct MmafNet {
    pub config: ModelConfig,
    pub rgb_encoder: Option<EncoderBranch>,
    pub depth_encoder: Option<EncoderBranch>,
    /// Deepest level first.
    pub mrf: Vec<MrfModule>,
    pub classifier: ConvLayer,
}

impl MmafNet {
    /// Registers every parameter in `store` in deterministic module order.
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let encoder = |store: &mut ParamStore<T>, rng: &mut R, path: &str, in_c: usize| {
            EncoderBranch::new(store, path, in_c, c.widths, c.units_per_stage, c.batch_norm, rng)
        };
        let rgb_encoder = c.variant.uses_rgb().then(|| encoder(store, rng, "rgb_encoder", 3)).transpose()?;
        let depth_encoder = c.variant.uses_depth().then(|| encoder(store, rng, "depth_encoder", 1)).transpose()?;
        let mut mrf = Vec::with_capacity(4);
        for level in (0..4).rev() {
            let path = format!("decoder.mrf{}", level + 1);
            mrf.push(MrfModule::new(store, &path, c.variant, c.widths[level], c.afb_config(), level < 3, c.batch_norm, rng)?);
        }
        let classifier =
            ConvLayer::new(store, "classifier", Conv2dSpec::pointwise(c.decoder_width, c.classes), rng)?;
        Ok(MmafNet { config, rgb_encoder, depth_encoder, mrf, classifier })
    }

    /// Fresh network and parameters drawn from `ChaCha8(seed)`.
    pub fn seeded<T: Scalar>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let net = MmafNet::new(config, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok((net, store))
    }

    /// Logits `(n, C, H, W)` for `rgb (n,3,H,W)` and `depth (n,1,H,W)`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        rgb: Var,
        depth: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let rs = tape.shape(rgb)?;
        contract!(
            rs.h > 0 && rs.w > 0 && rs.h % 32 == 0 && rs.w % 32 == 0,
            "input {}x{} is not divisible by 32",
            rs.h,
            rs.w
        );
        self.forward_unchecked(tape, store, rgb, depth, mode)
    }

    /// [`MmafNet::forward`] without the divisibility check. Deep levels of
    /// small inputs bottom out at 1×1 instead of halving; used to run the
    /// micro configuration on 16×16 inputs.
    pub fn forward_unchecked<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        rgb: Var,
        depth: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let rs = tape.shape(rgb)?;
        let ds = tape.shape(depth)?;
        contract!(rs.c == 3, "rgb input must have 3 channels, got {rs}");
        contract!(ds.c == 1, "depth input must have 1 channel, got {ds}");
        contract!((rs.n, rs.h, rs.w) == (ds.n, ds.h, ds.w), "rgb {rs} and depth {ds} disagree");
        contract!(rs.h > 0 && rs.w > 0, "empty input {rs}");
        let rf = match &self.rgb_encoder {
            Some(e) => Some(e.forward(tape, store, rgb, mode)?),
            None => None,
        };
        let df = match &self.depth_encoder {
            Some(e) => Some(e.forward(tape, store, depth, mode)?),
            None => None,
        };
        let mut prev = None;
        for (i, stage) in self.mrf.iter().enumerate() {
            let level = 3 - i;
            prev = Some(stage.forward(tape, store, rf.map(|f| f[level]), df.map(|f| f[level]), prev, mode)?);
        }
        let logits = self.classifier.forward(tape, store, prev.expect("four decoder stages"))?;
        tape.upsample_bilinear(logits, rs.h, rs.w)
    }

    /// Forward on plain tensors, discarding the tape.
    pub fn logits<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        rgb: &Tensor<T>,
        depth: &Tensor<T>,
        mode: BnMode,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let r = tape.leaf(rgb.clone());
        let d = tape.leaf(depth.clone());
        let out = self.forward(&mut tape, store, r, d, mode)?;
        Ok(tape.value(out)?.clone())
    }
}

/// Per-pixel argmax; ties break to the lowest class index.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Vec<LabelMap> {
    argmax_channels(logits)
}

/// Mean masked cross-entropy of `logits` against `labels`.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[LabelMap], void: u8) -> Result<Var> {
    tape.cross_entropy_masked(logits, labels, void)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OpKind;
    use crate::tensor::Shape;

    fn inputs(n: usize, h: usize, w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::uniform(Shape::new(n, 3, h, w), 0.0, 1.0, &mut rng),
            Tensor::uniform(Shape::new(n, 1, h, w), 0.0, 1.0, &mut rng),
        )
    }

    #[test]
    fn logits_shape_contract() {
        let mut store = ParamStore::new();
        let net = MmafNet::new(ModelConfig::tiny(5), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (rgb, depth) = inputs(1, 64, 64, 1);
        let out = net.logits(&mut store, &rgb, &depth, BnMode::Train).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 5, 64, 64));
        assert!(out.all_finite());
    }

    #[test]
    fn indivisible_input_rejected() {
        let mut store = ParamStore::new();
        let net = MmafNet::new(ModelConfig::micro(3), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (rgb, depth) = inputs(1, 48, 64, 1);
        let err = net.logits(&mut store, &rgb, &depth, BnMode::Eval).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_depth_still_finite() {
        let cfg = ModelConfig { batch_norm: false, ..ModelConfig::tiny(5) };
        let mut store = ParamStore::new();
        let net = MmafNet::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (rgb, _) = inputs(1, 64, 64, 2);
        let depth = Tensor::zeros(Shape::new(1, 1, 64, 64));
        let out = net.logits(&mut store, &rgb, &depth, BnMode::Eval).unwrap();
        assert!(out.all_finite());
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || {
            let mut store = ParamStore::new();
            let net = MmafNet::new(ModelConfig::tiny(4), &mut store, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let (rgb, depth) = inputs(2, 32, 32, 4);
            let out = net.logits(&mut store, &rgb, &depth, BnMode::Train).unwrap();
            out.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn single_stream_variants_skip_the_other_encoder() {
        for (variant, has_rgb, has_depth) in
            [(Variant::RgbOnly, true, false), (Variant::DepthOnly, false, true), (Variant::Smf, true, true)]
        {
            let mut store = ParamStore::new();
            let cfg = ModelConfig::micro(3).with_variant(variant);
            let net = MmafNet::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(net.rgb_encoder.is_some(), has_rgb);
            assert_eq!(net.depth_encoder.is_some(), has_depth);
            assert!(store.iter().all(|(_, p, _)| !p.contains(".afb.")));
            let (rgb, depth) = inputs(2, 32, 32, 0);
            let out = net.logits(&mut store, &rgb, &depth, BnMode::Train).unwrap();
            assert_eq!(out.shape(), Shape::new(2, 3, 32, 32));
        }
    }

    #[test]
    fn decoder_runs_deepest_first() {
        let mut store = ParamStore::<f32>::new();
        let net = MmafNet::new(ModelConfig::micro(3), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (rgb, depth) = inputs(1, 64, 64, 0);
        let mut tape = Tape::new();
        let r = tape.leaf(rgb);
        let d = tape.leaf(depth);
        net.forward(&mut tape, &mut store, r, d, BnMode::Train).unwrap();
        let max_fuse_sizes: Vec<_> = tape
            .nodes()
            .filter(|n| n.kind == OpKind::MaxFuse)
            .map(|n| n.shape.h)
            .collect();
        assert_eq!(max_fuse_sizes, vec![2, 4, 8, 16]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
            assert_eq!(Variant::from_code(v.code()).unwrap(), v);
        }
        assert!(Variant::parse("rgbd").is_err());
    }
}
