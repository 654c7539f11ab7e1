//! Seed-driven property checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmaf_core::attention::{afb, AfbConfig, AfbParams, FuseMode};
use mmaf_core::autodiff::{ParamStore, Tape};
use mmaf_core::metrics::{bde_class, ConfusionMatrix, MetricCdf};
use mmaf_core::nn::softmax_channels_forward;
use mmaf_core::{Shape, Tensor};

use super::instances::Check;
use super::oracle::random_label_map;

fn random_afb(rng: &mut ChaCha8Rng) -> (AfbConfig, Shape) {
    let c = rng.random_range(1..=4);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let cfg = AfbConfig {
        mlp_bias: rng.random_bool(0.5),
        fuse_mode: if rng.random_bool(0.5) { FuseMode::Modality } else { FuseMode::Adjacent },
        ..AfbConfig::new(c, rng.random_range(1..=4), k)
    };
    (cfg, Shape::new(rng.random_range(1..=2), c, rng.random_range(1..=6), rng.random_range(1..=6)))
}

/// Every entry of both attention gates lies strictly inside (0, 1).
pub fn gates_in_unit_interval(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cfg, s) = random_afb(&mut rng);
    let mut store = ParamStore::<f64>::new();
    let p = AfbParams::new(&mut store, "afb", cfg, &mut rng).unwrap();
    let amp = rng.random_range(0.1..4.0);
    let mut tape = Tape::new();
    let r = tape.leaf(Tensor::uniform(s, -amp, amp, &mut rng));
    let d = tape.leaf(Tensor::uniform(s, -amp, amp, &mut rng));
    let out = afb(&mut tape, &store, r, d, &p).map_err(|e| e.to_string())?;
    for (name, v) in [("M_c", out.m_c), ("M_s", out.m_s)] {
        if let Some(x) = tape.value(v).unwrap().data().iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(format!("{name} entry {x} outside (0, 1)"));
        }
    }
    Ok(())
}

/// With every block parameter zero, both gates are σ(0) = 0.5, so the
/// fused map is `max(0.25·f_rgb, 0.25·f_d)`.
pub fn zero_afb_identity(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cfg, s) = random_afb(&mut rng);
    cfg.fuse_mode = FuseMode::Modality;
    let mut store = ParamStore::<f64>::new();
    let p = AfbParams::zeros(&mut store, "afb", cfg).unwrap();
    let fr = Tensor::uniform(s, -3.0, 3.0, &mut rng);
    let fd = Tensor::uniform(s, -3.0, 3.0, &mut rng);
    let mut tape = Tape::new();
    let (r, d) = (tape.leaf(fr.clone()), tape.leaf(fd.clone()));
    let out = afb(&mut tape, &store, r, d, &p).map_err(|e| e.to_string())?;
    let fused = tape.value(out.f_fused).unwrap();
    if fused.shape() != s {
        return Err(format!("fused shape {} vs input {s}", fused.shape()));
    }
    Ok(fused
        .data()
        .iter()
        .zip(fr.data().iter().zip(fd.data()))
        .map(|(&f, (&a, &b))| (f - (0.25 * a).max(0.25 * b)).abs())
        .fold(0.0, f64::max))
}

/// Each pixel's class distribution sums to 1 within 1e−6 and lies in [0, 1].
pub fn softmax_normalized(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(rng.random_range(1..=3), rng.random_range(1..=8), rng.random_range(1..=6), rng.random_range(1..=6));
    let amp = rng.random_range(0.1..60.0);
    let x = Tensor::<f64>::uniform(s, -amp, amp, &mut rng);
    let y = softmax_channels_forward(&x).unwrap();
    for n in 0..s.n {
        for i in 0..s.h {
            for j in 0..s.w {
                let mut total = 0.0;
                for c in 0..s.c {
                    let v = y.at(n, c, i, j);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(format!("probability {v} outside [0, 1]"));
                    }
                    total += v;
                }
                if (total - 1.0).abs() > 1e-6 {
                    return Err(format!("probabilities sum to {total}"));
                }
            }
        }
    }
    Ok(())
}

fn random_cm(rng: &mut ChaCha8Rng, classes: u8) -> ConfusionMatrix {
    let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
    let gt = random_label_map(rng, h, w, classes, Some(255));
    let pred = random_label_map(rng, h, w, classes, None);
    let mut cm = ConfusionMatrix::new(classes as usize);
    cm.accumulate(&pred, &gt, 255).unwrap();
    cm
}

/// `(a + b) + c = a + (b + c)` and `a + b = b + a`.
pub fn merge_associative(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(1..=6);
    let (a, b, c) = (random_cm(&mut rng, classes), random_cm(&mut rng, classes), random_cm(&mut rng, classes));
    let mut left = a.clone();
    left.merge(&b).unwrap();
    left.merge(&c).unwrap();
    let mut bc = b.clone();
    bc.merge(&c).unwrap();
    let mut right = a.clone();
    right.merge(&bc).unwrap();
    let mut ba = b.clone();
    ba.merge(&a).unwrap();
    let mut ab = a.clone();
    ab.merge(&b).unwrap();
    if left != right {
        return Err("merge is not associative".into());
    }
    if ab != ba {
        return Err("merge is not commutative".into());
    }
    Ok(())
}

/// Steps rise strictly in x, F never decreases and ends at 1, `eval` is
/// monotone, and the distribution ignores input order.
pub fn cdf_monotone(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=60);
    let mut values: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.3) { rng.random_range(0..4) as f64 / 4.0 } else { rng.random::<f64>() })
        .collect();
    let cdf = MetricCdf::new(&values).unwrap();
    let steps = cdf.steps();
    for w in steps.windows(2) {
        if !(w[0].0 < w[1].0 && w[0].1 <= w[1].1) {
            return Err(format!("steps {:?} then {:?}", w[0], w[1]));
        }
    }
    if steps.last().map(|s| s.1) != Some(1.0) {
        return Err("CDF does not reach 1".into());
    }
    let mut probes: Vec<f64> = (0..20).map(|_| rng.random_range(-0.2..1.2)).collect();
    probes.sort_by(f64::total_cmp);
    for w in probes.windows(2) {
        if cdf.eval(w[0]) > cdf.eval(w[1]) {
            return Err(format!("F({}) > F({})", w[0], w[1]));
        }
    }
    values.shuffle(&mut rng);
    if MetricCdf::new(&values).unwrap() != cdf {
        return Err("CDF depends on input order".into());
    }
    Ok(())
}

/// `bde(a, b) = bde(b, a)` for every class.
pub fn bde_symmetric(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..=20), rng.random_range(1..=20));
    let classes = rng.random_range(2..=4);
    let a = random_label_map(&mut rng, h, w, classes, None);
    let b = random_label_map(&mut rng, h, w, classes, None);
    for c in 0..classes {
        let (ab, ba) = (bde_class(&a, &b, c).unwrap(), bde_class(&b, &a, c).unwrap());
        if ab.map(f64::to_bits) != ba.map(f64::to_bits) {
            return Err(format!("class {c}: {ab:?} vs {ba:?}"));
        }
    }
    Ok(())
}

pub const INVARIANTS: [(&str, fn(u64) -> Check, usize); 5] = [
    ("attention gates in (0,1)", gates_in_unit_interval, 300),
    ("softmax normalization", softmax_normalized, 300),
    ("confusion merge associativity", merge_associative, 200),
    ("CDF monotonicity", cdf_monotone, 200),
    ("BDE symmetry", bde_symmetric, 200),
];
