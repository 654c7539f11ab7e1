//! Finite-difference checks of every differentiable operation, and of the
//! micro network end to end, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmaf_core::attention::{afb, channel_attention, spatial_attention, AfbConfig, AfbParams, FuseMode};
use mmaf_core::autodiff::{grad_check, GradCheckOptions, GradCheckReport, ParamId, ParamStore, Tape, Var};
use mmaf_core::model::{loss, MmafNet, ModelConfig};
use mmaf_core::nn::{BatchNormConfig, BnMode, Conv2dSpec, Pool2dSpec, PoolKind, RunningStats};
use mmaf_core::{LabelMap, Result, Shape, Tensor};

pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;
/// Relative-error denominator floor for the network check.
pub const NET_FLOOR: f64 = 1e-7;

pub struct Case {
    pub name: String,
    pub report: GradCheckReport,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn describe(&self) -> String {
        match self.report.worst() {
            Some(w) => format!(
                "{}: max rel err {:.2e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                self.name, w.max_rel_error, w.path, w.worst_index, w.analytic, w.numeric
            ),
            None => format!("{}: no parameters", self.name),
        }
    }
}

/// Values bounded away from zero, so relu/abs kinks sit far from `x ± ε`.
fn away_from_zero(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    let data = (0..s.numel())
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(s, data).unwrap()
}

struct Bench {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
}

impl Bench {
    fn new(seed: u64) -> Self {
        Bench { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn input(&mut self, name: &str, s: Shape) -> ParamId {
        let t = away_from_zero(&mut self.rng, s);
        self.store.add(name, t, true).unwrap()
    }

    /// Checks `Σ f(inputs) ⊙ R` for a fixed random `R`.
    fn run<F>(mut self, name: &str, f: F) -> Case
    where
        F: Fn(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
    {
        let mut probe = Tape::new();
        let out_shape = {
            let v = f(&mut probe, &mut self.store).unwrap();
            probe.shape(v).unwrap()
        };
        let r = Tensor::randn(out_shape, 1.0, &mut self.rng);
        let report = grad_check(
            &mut self.store,
            |tape, store| {
                let y = f(tape, store)?;
                if tape.shape(y)? == Shape::SCALAR && out_shape == Shape::SCALAR {
                    return Ok(y);
                }
                let rv = tape.leaf(r.clone());
                let p = tape.mul(y, rv)?;
                tape.sum(p)
            },
            GradCheckOptions { eps: 1e-6, tol: OP_TOL, ..Default::default() },
        )
        .unwrap();
        Case { name: name.to_string(), report }
    }
}

fn unary(name: &str, seed: u64, s: Shape, op: fn(&mut Tape<f64>, Var) -> Result<Var>) -> Case {
    let mut b = Bench::new(seed);
    let x = b.input("x", s);
    b.run(name, move |t, st| {
        let v = t.param(st, x)?;
        op(t, v)
    })
}

fn binary(name: &str, seed: u64, sa: Shape, sb: Shape, op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> Case {
    let mut b = Bench::new(seed);
    let x = b.input("a", sa);
    let y = b.input("b", sb);
    b.run(name, move |t, st| {
        let (u, v) = (t.param(st, x)?, t.param(st, y)?);
        op(t, u, v)
    })
}

fn conv_case(name: &str, seed: u64, s: Shape, spec: Conv2dSpec) -> Case {
    let mut b = Bench::new(seed);
    let x = b.input("x", s);
    let w = b.input("w", spec.weight_shape());
    let bias = spec.bias.then(|| b.input("b", spec.bias_shape()));
    b.run(name, move |t, st| {
        let xv = t.param(st, x)?;
        let wv = t.param(st, w)?;
        let bv = bias.map(|id| t.param(st, id)).transpose()?;
        t.conv2d(xv, wv, bv, spec)
    })
}

fn pool_case(name: &str, seed: u64, s: Shape, spec: Pool2dSpec) -> Case {
    let mut b = Bench::new(seed);
    let x = b.input("x", s);
    b.run(name, move |t, st| {
        let v = t.param(st, x)?;
        t.pool2d(v, spec)
    })
}

fn batchnorm_case(name: &str, seed: u64, mode: BnMode) -> Case {
    let mut b = Bench::new(seed);
    let s = Shape::new(3, 2, 3, 2);
    let x = b.input("x", s);
    let g = b.input("gamma", Shape::new(1, 2, 1, 1));
    let beta = b.input("beta", Shape::new(1, 2, 1, 1));
    let mean = Tensor::uniform(Shape::new(1, 2, 1, 1), -0.5, 0.5, &mut b.rng);
    let var = Tensor::uniform(Shape::new(1, 2, 1, 1), 0.5, 1.5, &mut b.rng);
    b.run(name, move |t, st| {
        let (xv, gv, bv) = (t.param(st, x)?, t.param(st, g)?, t.param(st, beta)?);
        let (mut m, mut v) = (mean.clone(), var.clone());
        t.batchnorm2d(xv, gv, bv, RunningStats { mean: &mut m, var: &mut v }, BatchNormConfig::default(), mode)
    })
}

fn afb_bench(seed: u64, cfg: AfbConfig, s: Shape) -> (Bench, AfbParams, ParamId, ParamId) {
    let mut b = Bench::new(seed);
    let p = AfbParams::new(&mut b.store, "afb", cfg, &mut b.rng).unwrap();
    // Non-zero biases so their gradients are exercised away from the init.
    for id in p.param_ids() {
        if b.store.path(id).contains("_b") {
            let shape = b.store.value(id).shape();
            let t = Tensor::uniform(shape, -0.3, 0.3, &mut b.rng);
            b.store.set_value(id, t).unwrap();
        }
    }
    let fr = b.input("f_rgb", s);
    let fd = b.input("f_d", s);
    (b, p, fr, fd)
}

/// One case per differentiable operation.
pub fn op_suite() -> Vec<Case> {
    let s = Shape::new(2, 3, 4, 5);
    let mut cases = vec![
        unary("relu", 1, s, |t, x| t.relu(x)),
        unary("sigmoid", 2, s, |t, x| t.sigmoid(x)),
        unary("abs", 3, s, |t, x| t.abs(x)),
        unary("scale", 4, s, |t, x| t.scale(x, -1.7)),
        unary("sum", 5, s, |t, x| t.sum(x)),
        unary("softmax_channels", 6, s, |t, x| t.softmax_channels(x)),
        unary("global_pool avg", 7, s, |t, x| t.global_pool(x, PoolKind::Avg)),
        unary("global_pool max", 8, s, |t, x| t.global_pool(x, PoolKind::Max)),
        unary("channel_pool avg", 9, s, |t, x| t.channel_pool(x, PoolKind::Avg)),
        unary("channel_pool max", 10, s, |t, x| t.channel_pool(x, PoolKind::Max)),
        unary("upsample_bilinear 2x", 11, Shape::new(2, 2, 3, 4), |t, x| t.upsample_bilinear(x, 6, 8)),
        unary("upsample_bilinear odd", 12, Shape::new(1, 2, 3, 2), |t, x| t.upsample_bilinear(x, 7, 5)),
        unary("max_fuse modality", 13, Shape::new(2, 4, 3, 3), |t, x| t.max_fuse(x, FuseMode::Modality)),
        unary("max_fuse adjacent", 14, Shape::new(2, 4, 3, 3), |t, x| t.max_fuse(x, FuseMode::Adjacent)),
        binary("add", 20, s, s, |t, a, b| t.add(a, b)),
        binary("sub", 21, s, s, |t, a, b| t.sub(a, b)),
        binary("mul", 22, s, s, |t, a, b| t.mul(a, b)),
        binary("concat_channels", 23, s, Shape::new(2, 2, 4, 5), |t, a, b| t.concat_channels(a, b)),
        binary("scale_channels", 24, s, Shape::new(2, 3, 1, 1), |t, a, b| t.scale_channels(a, b)),
        binary("scale_spatial", 25, s, Shape::new(2, 1, 4, 5), |t, a, b| t.scale_spatial(a, b)),
        binary("linear", 26, Shape::new(3, 5, 1, 1), Shape::new(4, 5, 1, 1), |t, x, w| t.linear(x, w, None)),
        conv_case("conv2d 3x3 stride 1 pad 1", 30, Shape::new(2, 3, 5, 4), Conv2dSpec::new(3, 2, 3, 1, 1)),
        conv_case("conv2d 3x3 stride 2 pad 1", 31, Shape::new(1, 2, 7, 6), Conv2dSpec::new(2, 3, 3, 2, 1)),
        conv_case("conv2d 1x1", 32, Shape::new(2, 4, 3, 3), Conv2dSpec::pointwise(4, 3)),
        conv_case("conv2d 5x5 no bias", 33, Shape::new(1, 2, 6, 6), Conv2dSpec::new(2, 2, 5, 1, 2).without_bias()),
        pool_case("pool2d max 3/2/1", 40, Shape::new(2, 2, 7, 6), Pool2dSpec::new(PoolKind::Max, 3, 2, 1)),
        pool_case("pool2d max 5/1/2", 41, Shape::new(1, 2, 5, 5), Pool2dSpec::new(PoolKind::Max, 5, 1, 2)),
        pool_case("pool2d avg 3/2/1", 42, Shape::new(2, 2, 7, 6), Pool2dSpec::new(PoolKind::Avg, 3, 2, 1)),
        batchnorm_case("batchnorm2d train", 50, BnMode::Train),
        batchnorm_case("batchnorm2d eval", 51, BnMode::Eval),
    ];

    {
        let mut b = Bench::new(27);
        let x = b.input("x", Shape::new(3, 5, 1, 1));
        let w = b.input("w", Shape::new(4, 5, 1, 1));
        let bias = b.input("bias", Shape::new(1, 4, 1, 1));
        cases.push(b.run("linear with bias", move |t, st| {
            let (xv, wv, bv) = (t.param(st, x)?, t.param(st, w)?, t.param(st, bias)?);
            t.linear(xv, wv, Some(bv))
        }));
    }
    {
        let mut b = Bench::new(28);
        let x = b.input("logits", Shape::new(2, 4, 3, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let labels: Vec<LabelMap> = (0..2)
            .map(|_| {
                let d = (0..9).map(|_| if rng.random_bool(0.25) { 255 } else { rng.random_range(0..4) }).collect();
                LabelMap::new(3, 3, d).unwrap()
            })
            .collect();
        cases.push(b.run("cross_entropy_masked", move |t, st| {
            let v = t.param(st, x)?;
            t.cross_entropy_masked(v, &labels, 255)
        }));
    }
    let s = Shape::new(2, 4, 5, 5);
    for (name, cfg) in [
        ("afb", AfbConfig::new(4, 2, 3)),
        ("afb adjacent, no mlp bias", AfbConfig { mlp_bias: false, fuse_mode: FuseMode::Adjacent, ..AfbConfig::new(4, 2, 3) }),
    ] {
        let (b, p, fr, fd) = afb_bench(60, cfg, s);
        cases.push(b.run(name, move |t, st| {
            let (r, d) = (t.param(st, fr)?, t.param(st, fd)?);
            Ok(afb(t, st, r, d, &p)?.f_fused)
        }));
    }
    {
        let (b, p, fr, _) = afb_bench(61, AfbConfig::new(2, 2, 3), s);
        cases.push(b.run("channel_attention", move |t, st| {
            let f = t.param(st, fr)?;
            channel_attention(t, st, f, &p)
        }));
    }
    {
        let (b, p, fr, _) = afb_bench(62, AfbConfig::new(2, 2, 3), s);
        cases.push(b.run("spatial_attention", move |t, st| {
            let f = t.param(st, fr)?;
            spatial_attention(t, st, f, &p)
        }));
    }
    cases
}

/// The micro configuration at 16×16, batch 4, train-mode batch norm,
/// masked cross-entropy with some void pixels.
pub fn micro_network(max_entries: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (net, mut store) = MmafNet::seeded::<f64>(ModelConfig::micro(3), 11).unwrap();
    let n = 4;
    let rgb = Tensor::uniform(Shape::new(n, 3, 16, 16), 0.0, 1.0, &mut rng);
    let depth = Tensor::uniform(Shape::new(n, 1, 16, 16), 0.0, 1.0, &mut rng);
    let labels: Vec<LabelMap> = (0..n)
        .map(|_| {
            let d = (0..256).map(|_| if rng.random_bool(0.1) { 255 } else { rng.random_range(0..3) }).collect();
            LabelMap::new(16, 16, d).unwrap()
        })
        .collect();
    let report = grad_check(
        &mut store,
        |tape, store| {
            let r = tape.leaf(rgb.clone());
            let d = tape.leaf(depth.clone());
            let logits = net.forward_unchecked(tape, store, r, d, BnMode::Train)?;
            loss(tape, logits, &labels, 255)
        },
        GradCheckOptions { eps: 1e-5, tol: NET_TOL, max_entries: Some(max_entries), seed: 3, floor: NET_FLOOR },
    )
    .unwrap();
    Case { name: "micro network end to end".into(), report }
}
