//! One random instance per seed, compared exactly against the oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmaf_core::autodiff::Tape;
use mmaf_core::metrics::{bde_class, per_image_metrics};
use mmaf_core::nn::{conv2d_forward, pool2d_forward, softmax_channels_forward, Conv2dSpec, Pool2dSpec, PoolKind};
use mmaf_core::{LabelMap, Shape, Tensor};

use super::oracle;

pub type Check = Result<(), String>;

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=9), rng.random_range(1..=9))
}

fn exact(what: &str, got: &[f64], want: &[f64]) -> Check {
    if got.len() != want.len() {
        return Err(format!("{what}: {} values, oracle has {}", got.len(), want.len()));
    }
    match got.iter().zip(want).position(|(a, b)| a.to_bits() != b.to_bits()) {
        None => Ok(()),
        Some(i) => Err(format!("{what}: entry {i} is {:e}, oracle {:e}", got[i], want[i])),
    }
}

pub fn conv(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = dims(&mut rng);
    let k = rng.random_range(1..=h.min(w).min(5));
    let stride = rng.random_range(1..=3);
    let pad = rng.random_range(0..k);
    let oc = rng.random_range(1..=4);
    let with_bias = rng.random_bool(0.5);
    let x = oracle::random_vec(&mut rng, n * c * h * w);
    let wt = oracle::random_vec(&mut rng, oc * c * k * k);
    let b = oracle::random_vec(&mut rng, oc);
    let (want, oh, ow) = oracle::conv2d(&x, (n, c, h, w), &wt, with_bias.then_some(&b[..]), oc, k, stride, pad);
    let mut spec = Conv2dSpec::new(c, oc, k, stride, pad);
    if !with_bias {
        spec = spec.without_bias();
    }
    let xt = Tensor::from_vec(Shape::new(n, c, h, w), x).unwrap();
    let wt = Tensor::from_vec(spec.weight_shape(), wt).unwrap();
    let bt = Tensor::from_vec(spec.bias_shape(), b).unwrap();
    let got = conv2d_forward(&xt, &wt, with_bias.then_some(&bt), &spec).map_err(|e| e.to_string())?;
    if got.shape() != Shape::new(n, oc, oh, ow) {
        return Err(format!("conv shape {} vs oracle ({n}, {oc}, {oh}, {ow})", got.shape()));
    }
    exact("conv2d", got.data(), &want)
}

pub fn pool(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = dims(&mut rng);
    let k = rng.random_range(1..=h.min(w).min(5));
    let stride = rng.random_range(1..=3);
    let pad = rng.random_range(0..k);
    let max = rng.random_bool(0.5);
    let x = oracle::random_vec(&mut rng, n * c * h * w);
    let (want, oh, ow) = oracle::pool2d(&x, (n, c, h, w), max, k, stride, pad);
    let kind = if max { PoolKind::Max } else { PoolKind::Avg };
    let xt = Tensor::from_vec(Shape::new(n, c, h, w), x).unwrap();
    let (got, _) = pool2d_forward(&xt, &Pool2dSpec::new(kind, k, stride, pad)).map_err(|e| e.to_string())?;
    if got.shape() != Shape::new(n, c, oh, ow) {
        return Err(format!("pool shape {} vs oracle ({n}, {c}, {oh}, {ow})", got.shape()));
    }
    exact("pool2d", got.data(), &want)
}

pub fn softmax(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = dims(&mut rng);
    let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.random_range(-20.0..20.0)).collect();
    let want = oracle::softmax(&x, (n, c, h, w));
    let got = softmax_channels_forward(&Tensor::from_vec(Shape::new(n, c, h, w), x).unwrap()).unwrap();
    exact("softmax", got.data(), &want)
}

pub fn cross_entropy(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = dims(&mut rng);
    let c = c.max(2);
    let void = 255u8;
    let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut labels: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            (0..h * w)
                .map(|_| if rng.random_bool(0.2) { void } else { rng.random_range(0..c as u8) })
                .collect()
        })
        .collect();
    labels[0][0] = 0;
    let want = oracle::cross_entropy(&x, (n, c, h, w), &labels, void);
    let maps: Vec<LabelMap> = labels.into_iter().map(|l| LabelMap::new(h, w, l).unwrap()).collect();
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::from_vec(Shape::new(n, c, h, w), x).unwrap());
    let l = tape.cross_entropy_masked(v, &maps, void).map_err(|e| e.to_string())?;
    exact("cross-entropy", tape.value(l).unwrap().data(), &[want])
}

pub fn per_image(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
    let classes = rng.random_range(1..=6);
    let gt = oracle::random_label_map(&mut rng, h, w, classes, Some(255));
    let pred = oracle::random_label_map(&mut rng, h, w, classes, None);
    let got = per_image_metrics(&pred, &gt, 255).map_err(|e| e.to_string())?;
    let want = oracle::per_image(pred.data(), gt.data(), 255);
    match (got, want) {
        (None, None) => Ok(()),
        (Some(g), Some(o)) => exact("per-image metrics", &[g.0, g.1, g.2], &[o.0, o.1, o.2]),
        (g, o) => Err(format!("per-image metrics {g:?}, oracle {o:?}")),
    }
}

pub fn bde(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
    let classes = rng.random_range(2..=4);
    let gt = oracle::random_label_map(&mut rng, h, w, classes, None);
    let pred = oracle::random_label_map(&mut rng, h, w, classes, None);
    for class in 0..classes {
        let got = bde_class(&pred, &gt, class).map_err(|e| e.to_string())?;
        let want = oracle::bde(pred.data(), gt.data(), h, w, class);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(o)) => exact(&format!("bde class {class}"), &[g], &[o])?,
            (g, o) => return Err(format!("bde class {class}: {g:?}, oracle {o:?}")),
        }
    }
    Ok(())
}

pub const ALL: [(&str, fn(u64) -> Check); 6] = [
    ("conv2d", conv),
    ("pool2d", pool),
    ("softmax", softmax),
    ("cross-entropy", cross_entropy),
    ("per-image metrics", per_image),
    ("bde", bde),
];
