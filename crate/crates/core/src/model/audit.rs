//! Parameter and multiply-accumulate accounting.

use std::fmt;

use crate::attention::AfbParams;
use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::model::blocks::{ConvLayer, CrpBlock, EncoderBranch, MrfModule, ResidualUnit, CRP_POOL, STEM_POOL};
use crate::model::{MmafNet, Variant};
use crate::nn::Pool2dSpec;
use crate::tensor::{Scalar, Shape};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParameterTable {
    /// `(parameter path, element count)` for every trainable tensor, in
    /// registration order.
    pub rows: Vec<(String, usize)>,
}

impl ParameterTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.1).sum()
    }

    /// Sum over all rows whose path starts with `prefix.` (or equals it).
    pub fn subtotal(&self, prefix: &str) -> usize {
        self.rows
            .iter()
            .filter(|(p, _)| p == prefix || p.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('.')))
            .map(|r| r.1)
            .sum()
    }

    /// Rows aggregated to the first `depth` path components.
    pub fn by_module(&self, depth: usize) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (path, n) in &self.rows {
            let key = path.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some(row) => row.1 += n,
                None => out.push((key, *n)),
            }
        }
        out
    }
}

impl fmt::Display for ParameterTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (path, n) in &self.rows {
            writeln!(f, "{path:<56} {n:>10}")?;
        }
        write!(f, "{:<56} {:>10}", "total", self.total())
    }
}

/// Trainable parameters of the network. BN running statistics are excluded.
pub fn count_parameters<T: Scalar>(store: &ParamStore<T>) -> ParameterTable {
    ParameterTable { rows: store.parameter_table() }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub layers: Vec<(String, u64)>,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|l| l.1).sum()
    }

    fn push(&mut self, name: impl Into<String>, ops: usize) {
        self.layers.push((name.into(), ops as u64));
    }
}

struct Counter {
    flops: FlopCount,
}

impl Counter {
    fn elementwise(&mut self, name: &str, s: Shape) {
        self.flops.push(name, s.numel());
    }

    fn conv(&mut self, layer: &ConvLayer, x: Shape) -> Result<Shape> {
        let spec = layer.spec;
        let (oh, ow) = spec.output_size(x.h, x.w)?;
        let out = Shape::new(x.n, spec.out_channels, oh, ow);
        self.flops
            .push(layer.path.clone(), out.numel() * spec.in_channels * spec.kernel.0 * spec.kernel.1);
        Ok(out)
    }

    fn pool(&mut self, name: &str, spec: Pool2dSpec, x: Shape) -> Result<Shape> {
        let (oh, ow) = spec.output_size(x.h, x.w)?;
        let out = Shape::new(x.n, x.c, oh, ow);
        self.elementwise(name, out);
        Ok(out)
    }

    fn residual(&mut self, unit: &ResidualUnit, x: Shape) -> Result<Shape> {
        let base = unit.conv1.path.trim_end_matches(".conv1").to_string();
        let h = self.conv(&unit.conv1, x)?;
        if unit.bn1.is_some() {
            self.elementwise(&format!("{base}.bn1"), h);
        }
        self.elementwise(&format!("{base}.relu1"), h);
        let h = self.conv(&unit.conv2, h)?;
        if unit.bn2.is_some() {
            self.elementwise(&format!("{base}.bn2"), h);
        }
        if let Some(skip) = &unit.skip {
            self.conv(skip, x)?;
        }
        self.elementwise(&format!("{base}.add"), h);
        self.elementwise(&format!("{base}.relu2"), h);
        Ok(h)
    }

    fn encoder(&mut self, enc: &EncoderBranch, x: Shape) -> Result<[Shape; 4]> {
        let base = enc.stem.path.trim_end_matches(".conv").to_string();
        let h = self.conv(&enc.stem, x)?;
        if enc.stem_bn.is_some() {
            self.elementwise(&format!("{base}.bn"), h);
        }
        self.elementwise(&format!("{base}.relu"), h);
        let mut h = self.pool(&format!("{base}.pool"), STEM_POOL, h)?;
        let mut outs = [h; 4];
        for (s, units) in enc.stages.iter().enumerate() {
            for unit in units {
                h = self.residual(unit, h)?;
            }
            outs[s] = h;
        }
        Ok(outs)
    }

    fn afb(&mut self, p: &AfbParams, base: &str, x: Shape) {
        let c2 = 2 * p.config.channels;
        let hid = p.config.hidden();
        let pooled = Shape::new(x.n, c2, 1, 1);
        let full = Shape::new(x.n, c2, x.h, x.w);
        let plane = Shape::new(x.n, 1, x.h, x.w);
        self.elementwise(&format!("{base}.avg_pool"), pooled);
        self.elementwise(&format!("{base}.max_pool"), pooled);
        for path in ["avg", "max"] {
            self.flops.push(format!("{base}.mlp_{path}.w0"), x.n * hid * c2);
            self.elementwise(&format!("{base}.mlp_{path}.relu"), Shape::new(x.n, hid, 1, 1));
            self.flops.push(format!("{base}.mlp_{path}.w1"), x.n * c2 * hid);
        }
        self.elementwise(&format!("{base}.channel_sum"), pooled);
        self.elementwise(&format!("{base}.channel_sigmoid"), pooled);
        self.elementwise(&format!("{base}.channel_scale"), full);
        self.elementwise(&format!("{base}.mean_c"), plane);
        self.elementwise(&format!("{base}.max_c"), plane);
        let k = p.config.kernel;
        self.flops.push(format!("{base}.spatial_conv"), plane.numel() * 2 * k * k);
        self.elementwise(&format!("{base}.spatial_sigmoid"), plane);
        self.elementwise(&format!("{base}.spatial_scale"), full);
        self.elementwise(&format!("{base}.max_fuse"), x);
    }

    fn crp(&mut self, crp: &CrpBlock, base: &str, x: Shape) -> Result<Shape> {
        let mut h = x;
        for (i, conv) in crp.convs.iter().enumerate() {
            h = self.pool(&format!("{base}.pool{i}"), CRP_POOL, h)?;
            h = self.conv(conv, h)?;
            self.elementwise(&format!("{base}.add{i}"), h);
        }
        Ok(h)
    }

    fn mrf(&mut self, m: &MrfModule, rgb: Shape, depth: Shape, prev: Option<Shape>) -> Result<Shape> {
        let base = m.out_conv.path.trim_end_matches(".out_conv").to_string();
        let r = m.proj_rgb.as_ref().map(|l| self.conv(l, rgb)).transpose()?;
        let d = m.proj_depth.as_ref().map(|l| self.conv(l, depth)).transpose()?;
        let fused = match (m.variant, r, d) {
            (Variant::Mmaf, Some(r), Some(_)) => {
                self.afb(m.afb.as_ref().expect("mmaf stage owns an AFB"), &format!("{base}.afb"), r);
                r
            }
            (Variant::Smf, Some(r), Some(_)) => {
                self.elementwise(&format!("{base}.sum"), r);
                r
            }
            (_, Some(s), None) | (_, None, Some(s)) => s,
            _ => unreachable!("stage layout checked at construction"),
        };
        if let (Some(p), Some(proj)) = (prev, &m.up_proj) {
            let up = Shape::new(p.n, p.c, fused.h, fused.w);
            self.elementwise(&format!("{base}.upsample"), up);
            self.conv(proj, up)?;
            self.elementwise(&format!("{base}.merge"), fused);
        }
        let h = self.crp(&m.crp, &format!("{base}.crp"), fused)?;
        let h = self.conv(&m.out_conv, h)?;
        if m.out_bn.is_some() {
            self.elementwise(&format!("{base}.out_bn"), h);
        }
        self.elementwise(&format!("{base}.relu"), h);
        Ok(h)
    }
}

/// Analytic per-layer cost for one forward pass at `rgb_shape` (the depth
/// input has the same size with one channel). Convolution and linear layers
/// count multiply-accumulates; pooling, activations, normalization,
/// resampling and element-wise arithmetic count one op per output element.
pub fn count_flops(net: &MmafNet, rgb_shape: Shape) -> Result<FlopCount> {
    let mut c = Counter { flops: FlopCount::default() };
    let depth_shape = Shape::new(rgb_shape.n, 1, rgb_shape.h, rgb_shape.w);
    let rf = net.rgb_encoder.as_ref().map(|e| c.encoder(e, rgb_shape)).transpose()?;
    let df = net.depth_encoder.as_ref().map(|e| c.encoder(e, depth_shape)).transpose()?;
    let level_shape = |f: Option<[Shape; 4]>, l: usize| f.map(|f| f[l]).unwrap_or(Shape::SCALAR);
    let mut prev = None;
    for (i, m) in net.mrf.iter().enumerate() {
        let l = 3 - i;
        prev = Some(c.mrf(m, level_shape(rf, l), level_shape(df, l), prev)?);
    }
    let h = c.conv(&net.classifier, prev.expect("four decoder stages"))?;
    c.elementwise("upsample", Shape::new(h.n, h.c, rgb_shape.h, rgb_shape.w));
    Ok(c.flops)
}
