//! SGD with momentum, the epoch loop and batched inference.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape};
use crate::dataio::{augment, derive_seed, stack, AugmentConfig, RgbdSample};
use crate::error::{contract, Error, Result};
use crate::labels::LabelMap;
use crate::metrics::ConfusionMatrix;
use crate::model::{loss, predict, MmafNet};
use crate::nn::BnMode;
use crate::tensor::{Scalar, Tensor};

/// `v ← m·v + g + λ·θ`, `θ ← θ − lr·v`, then gradients are zeroed.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: Vec::new() }
    }

    /// Refuses to touch any parameter if a trainable gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for (_, path, p) in store.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{path}`")));
            }
        }
        self.velocity.resize(store.len(), None);
        let (m, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(lr));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let v = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for ((vi, &g), x) in v.data_mut().iter_mut().zip(p.grad.data()).zip(p.value.data_mut()) {
                *vi = m * *vi + g + wd * *x;
                *x -= lr * *vi;
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Constant rate, optionally multiplied by 0.1 every `decay_every` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_every: Option<usize>,
}

impl LrSchedule {
    /// Rate for the 0-based `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        match self.decay_every {
            Some(k) if k > 0 => self.base * 0.1f64.powi((epoch / k) as i32),
            _ => self.base,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            seed: 0,
            schedule: LrSchedule { base: 0.01, decay_every: None },
            momentum: 0.9,
            weight_decay: 1e-4,
            augment: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_miou: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_miou,lr\n");
        for r in &self.records {
            let miou = r.val_miou.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.6},{miou},{}", r.epoch, r.loss, r.lr);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let bad = || Error::Format(format!("training log line {}: `{line}`", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                val_miou: if f[2].is_empty() { None } else { Some(f[2].parse().map_err(|_| bad())?) },
                lr: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(TrainLog { records })
    }
}

/// Shuffled sample order for `epoch` (0-based); depends only on the seed.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
    order
}

/// Splits `order` into batches of `size`. A trailing single sample joins the
/// previous batch, since train-mode batch norm on a 1×1 map needs two.
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(1)).collect();
    if size > 1 && out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = order.len() - out.last().unwrap().len() - 1;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Eval-mode predictions, `batch` samples per forward pass.
pub fn predict_samples(
    net: &MmafNet,
    store: &mut ParamStore<f32>,
    samples: &[RgbdSample],
    batch: usize,
) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&RgbdSample> = chunk.iter().collect();
        let (rgb, depth, _) = stack(&refs)?;
        let logits = net.logits(store, &rgb, &depth, BnMode::Eval)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        out.extend(predict(&logits));
    }
    Ok(out)
}

pub fn confusion_on(
    net: &MmafNet,
    store: &mut ParamStore<f32>,
    samples: &[RgbdSample],
    void: u8,
) -> Result<ConfusionMatrix> {
    let preds = predict_samples(net, store, samples, 4)?;
    let mut cm = ConfusionMatrix::new(net.config.classes);
    for (p, s) in preds.iter().zip(samples) {
        cm.accumulate(p, &s.labels, void)?;
    }
    Ok(cm)
}

/// Runs epochs `start_epoch + 1 ..= cfg.epochs`. `on_epoch` sees every
/// finished epoch (e.g. to write a checkpoint) and may abort training.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &MmafNet,
    store: &mut ParamStore<f32>,
    train_set: &[RgbdSample],
    val_set: &[RgbdSample],
    void: u8,
    cfg: &TrainConfig,
    start_epoch: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamStore<f32>) -> Result<()>,
) -> Result<TrainLog> {
    contract!(!train_set.is_empty(), "training set is empty");
    contract!(cfg.batch_size > 0, "batch size must be positive");
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut log = TrainLog::default();
    store.zero_grads();
    for epoch in start_epoch..cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        let order = epoch_order(cfg.seed, epoch, train_set.len());
        let epoch_seed = derive_seed(cfg.seed ^ 0x5eed_a0a0, epoch as u64);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in batches(&order, cfg.batch_size) {
            let augmented: Vec<RgbdSample> = match &cfg.augment {
                Some(a) => chunk
                    .iter()
                    .map(|&i| augment(&train_set[i], a, derive_seed(epoch_seed, i as u64)))
                    .collect::<Result<_>>()?,
                None => chunk.iter().map(|&i| train_set[i].clone()).collect(),
            };
            let refs: Vec<&RgbdSample> = augmented.iter().collect();
            let (rgb, depth, labels) = stack(&refs)?;
            if labels.iter().all(|l| l.data().iter().all(|&v| v == void)) {
                continue;
            }
            let mut tape = Tape::new();
            let r = tape.leaf(rgb);
            let d = tape.leaf(depth);
            let logits = net.forward(&mut tape, store, r, d, BnMode::Train)?;
            let l = loss(&mut tape, logits, &labels, void)?;
            let value = tape.value(l)?.data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1 });
            }
            tape.backward(l, store)?;
            sgd.step(store, lr).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch: epoch + 1 },
                other => other,
            })?;
            total += value;
            steps += 1;
        }
        contract!(steps > 0, "every training batch was entirely void");
        let val_miou = if val_set.is_empty() {
            None
        } else {
            let cm = confusion_on(net, store, val_set, void)?;
            Some(if cm.total() == 0 { 0.0 } else { cm.dataset_metrics()?.iou })
        };
        let rec = EpochRecord { epoch: epoch + 1, loss: total / steps as f64, val_miou, lr };
        on_epoch(&rec, store)?;
        log.records.push(rec);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn trailing_singleton_joins_previous_batch() {
        let order: Vec<usize> = (0..9).collect();
        let sizes: Vec<usize> = batches(&order, 4).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 5]);
        assert_eq!(batches(&order, 4).concat(), order);
        let sizes: Vec<usize> = batches(&order[..7], 4).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 3]);
        assert_eq!(batches(&order[..1], 4).len(), 1);
        assert_eq!(batches(&order[..5], 1).len(), 5);
    }

    fn bowl(x0: f64) -> (ParamStore<f64>, crate::autodiff::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::full(Shape::SCALAR, x0), true).unwrap();
        (store, id)
    }

    fn steps_to_converge(momentum: f64) -> usize {
        let (mut store, id) = bowl(1.0);
        let mut sgd = Sgd::new(momentum, 0.0);
        for step in 1..=10_000 {
            let x = store.value(id).data()[0];
            store.get_mut(id).grad = Tensor::full(Shape::SCALAR, x);
            sgd.step(&mut store, 0.01).unwrap();
            if store.value(id).data()[0].abs() < 1e-4 {
                return step;
            }
        }
        usize::MAX
    }

    #[test]
    fn vanilla_step() {
        let (mut store, id) = bowl(2.0);
        store.get_mut(id).grad = Tensor::full(Shape::SCALAR, 0.5);
        Sgd::new(0.0, 0.0).step(&mut store, 0.1).unwrap();
        assert_eq!(store.value(id).data()[0], 2.0 - 0.1 * 0.5);
        assert_eq!(store.get(id).grad.data()[0], 0.0);
    }

    #[test]
    fn quadratic_bowl_contracts() {
        let (mut store, id) = bowl(1.0);
        let mut sgd = Sgd::new(0.0, 0.0);
        for _ in 0..100 {
            let x = store.value(id).data()[0];
            store.get_mut(id).grad = Tensor::full(Shape::SCALAR, x);
            sgd.step(&mut store, 0.1).unwrap();
        }
        assert!(store.value(id).data()[0].abs() < 1e-4);
    }

    #[test]
    fn momentum_converges_faster() {
        assert!(steps_to_converge(0.9) < steps_to_converge(0.0));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut store, id) = bowl(1.0);
        store.get_mut(id).grad = Tensor::full(Shape::SCALAR, f64::NAN);
        let err = Sgd::new(0.9, 0.0).step(&mut store, 0.1).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(m) if m.contains("`x`")));
        assert_eq!(store.value(id).data()[0], 1.0);
    }

    #[test]
    fn step_decay() {
        let s = LrSchedule { base: 0.01, decay_every: Some(2) };
        assert_eq!((s.lr(0), s.lr(1)), (0.01, 0.01));
        assert!((s.lr(2) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn log_csv_round_trip() {
        let log = TrainLog {
            records: vec![
                EpochRecord { epoch: 1, loss: 1.25, val_miou: Some(0.5), lr: 0.01 },
                EpochRecord { epoch: 2, loss: 0.75, val_miou: None, lr: 0.001 },
            ],
        };
        let text = log.to_csv();
        assert!(text.starts_with("epoch,loss,val_miou,lr\n1,1.250000,0.500000,0.01\n"));
        assert_eq!(TrainLog::parse_csv(&text).unwrap(), log);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(3, 0, 10);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(3, 0, 10));
        assert_ne!(a, epoch_order(3, 1, 10));
    }
}
