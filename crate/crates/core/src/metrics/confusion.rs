use std::collections::BTreeSet;

use crate::error::{contract, Result};
use crate::labels::LabelMap;

/// `counts[g * C + p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetMetrics {
    /// Global pixel accuracy.
    pub g: f64,
    /// Mean per-class accuracy.
    pub m: f64,
    pub iou: f64,
    /// Frequency-weighted IoU.
    pub w_iou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    /// `None` where the class never occurs in the ground truth.
    pub accuracy: Vec<Option<f64>>,
    /// `None` where the class occurs in neither ground truth nor prediction.
    pub iou: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, g: usize, p: usize) -> u64 {
        self.counts[g * self.classes + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row(&self, g: usize) -> u64 {
        (0..self.classes).map(|p| self.get(g, p)).sum()
    }

    pub fn col(&self, p: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, p)).sum()
    }

    /// Adds every pixel whose ground truth is not `void`. Predictions must be
    /// valid class ids at those pixels.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, void: u8) -> Result<()> {
        contract!(pred.dims() == gt.dims(), "prediction {:?} and ground truth {:?} differ", pred.dims(), gt.dims());
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == void {
                continue;
            }
            let (g, p) = (g as usize, p as usize);
            contract!(g < self.classes, "ground-truth label {g} outside {} classes", self.classes);
            contract!(p < self.classes, "predicted label {p} outside {} classes", self.classes);
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        contract!(self.classes == other.classes, "merging {} and {} class matrices", self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn class_metrics(&self) -> ClassMetrics {
        let mut accuracy = Vec::with_capacity(self.classes);
        let mut iou = Vec::with_capacity(self.classes);
        for c in 0..self.classes {
            let (d, r, k) = (self.get(c, c) as f64, self.row(c) as f64, self.col(c) as f64);
            accuracy.push((r > 0.0).then(|| d / r));
            iou.push((r + k > 0.0).then(|| d / (r + k - d)));
        }
        ClassMetrics { accuracy, iou }
    }

    pub fn dataset_metrics(&self) -> Result<DatasetMetrics> {
        let total = self.total();
        contract!(total > 0, "metrics need at least one counted pixel");
        let total = total as f64;
        let cm = self.class_metrics();
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        let w_iou = (0..self.classes)
            .map(|c| self.row(c) as f64 / total * cm.iou[c].unwrap_or(0.0))
            .sum();
        Ok(DatasetMetrics {
            g: self.trace() as f64 / total,
            m: mean(&cm.accuracy),
            iou: mean(&cm.iou),
            w_iou,
        })
    }
}

/// G, M and IoU of a single image, over the classes present in its ground
/// truth or prediction. `None` when every ground-truth pixel is void.
pub fn per_image_metrics(pred: &LabelMap, gt: &LabelMap, void: u8) -> Result<Option<(f64, f64, f64)>> {
    contract!(pred.dims() == gt.dims(), "prediction {:?} and ground truth {:?} differ", pred.dims(), gt.dims());
    let mut alphabet = BTreeSet::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g != void {
            alphabet.insert(g);
            alphabet.insert(p);
        }
    }
    if alphabet.is_empty() {
        return Ok(None);
    }
    let index: Vec<u8> = alphabet.into_iter().collect();
    let slot = |v: u8| index.binary_search(&v).expect("value collected above") as u8;
    let remap = |m: &LabelMap, keep: &dyn Fn(usize) -> bool| {
        let data = m
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if keep(i) { slot(v) } else { void })
            .collect();
        LabelMap::new(m.height(), m.width(), data)
    };
    let counted = |i: usize| gt.data()[i] != void;
    let g_local = remap(gt, &counted)?;
    let p_local = remap(pred, &counted)?;
    let mut cm = ConfusionMatrix::new(index.len());
    cm.accumulate(&p_local, &g_local, void)?;
    let m = cm.dataset_metrics()?;
    Ok(Some((m.g, m.m, m.iou)))
}
