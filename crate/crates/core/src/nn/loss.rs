//! Per-pixel softmax over classes and the void-masked cross-entropy loss.

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::labels::LabelMap;
use crate::tensor::{Scalar, Tensor};

/// Softmax across the channel axis with max subtraction.
pub fn softmax_channels_forward<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    contract!(s.c >= 1, "softmax needs at least one class channel");
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let mut exps = vec![T::zero(); s.c];
    for n in 0..s.n {
        for p in 0..plane {
            let idx = |c: usize| (n * s.c + c) * plane + p;
            let mut m = logits.data()[idx(0)];
            for c in 1..s.c {
                m = m.max(logits.data()[idx(c)]);
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                exps[c] = (logits.data()[idx(c)] - m).exp();
                sum += exps[c];
            }
            for c in 0..s.c {
                out.data_mut()[idx(c)] = exps[c] / sum;
            }
        }
    }
    Ok(out)
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let s = y.shape();
    let plane = s.plane();
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for p in 0..plane {
            let idx = |c: usize| (n * s.c + c) * plane + p;
            let mut dot = T::zero();
            for c in 0..s.c {
                dot += g.data()[idx(c)] * y.data()[idx(c)];
            }
            for c in 0..s.c {
                dx.data_mut()[idx(c)] = y.data()[idx(c)] * (g.data()[idx(c)] - dot);
            }
        }
    }
    dx
}

pub(crate) struct CrossEntropy<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub targets: Vec<Option<usize>>,
    pub count: usize,
}

/// Mean of `log Σ exp(l − m) − (l_y − m)` over non-void pixels, visited in
/// `(n, y, x)` order.
pub(crate) fn cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[LabelMap],
    void: u8,
) -> Result<CrossEntropy<T>> {
    let s = logits.shape();
    contract!(labels.len() == s.n, "{} label maps for a batch of {}", labels.len(), s.n);
    let plane = s.plane();
    let mut targets = Vec::with_capacity(s.n * plane);
    for lm in labels {
        contract!(
            lm.dims() == (s.h, s.w),
            "label map {:?} does not match logits {}x{}",
            lm.dims(),
            s.h,
            s.w
        );
        for &v in lm.data() {
            if v == void {
                targets.push(None);
            } else {
                contract!((v as usize) < s.c, "label {v} out of range for {} classes", s.c);
                targets.push(Some(v as usize));
            }
        }
    }
    let count = targets.iter().filter(|t| t.is_some()).count();
    contract!(count > 0, "cross-entropy needs at least one non-void pixel");

    let mut probs = Tensor::zeros(s);
    let mut total = T::zero();
    let mut exps = vec![T::zero(); s.c];
    for n in 0..s.n {
        for p in 0..plane {
            let idx = |c: usize| (n * s.c + c) * plane + p;
            let mut m = logits.data()[idx(0)];
            for c in 1..s.c {
                m = m.max(logits.data()[idx(c)]);
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                exps[c] = (logits.data()[idx(c)] - m).exp();
                sum += exps[c];
            }
            for c in 0..s.c {
                probs.data_mut()[idx(c)] = exps[c] / sum;
            }
            if let Some(y) = targets[n * plane + p] {
                total += sum.ln() - (logits.data()[idx(y)] - m);
            }
        }
    }
    Ok(CrossEntropy { loss: total / T::lit(count as f64), probs, targets, count })
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[Option<usize>],
    count: usize,
    upstream: T,
) -> Tensor<T> {
    let s = probs.shape();
    let plane = s.plane();
    let scale = upstream / T::lit(count as f64);
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for p in 0..plane {
            let Some(y) = targets[n * plane + p] else { continue };
            for c in 0..s.c {
                let i = (n * s.c + c) * plane + p;
                let onehot = if c == y { T::one() } else { T::zero() };
                dx.data_mut()[i] = scale * (probs.data()[i] - onehot);
            }
        }
    }
    dx
}

/// Per-pixel argmax over classes; ties resolve to the lowest class index.
pub fn argmax_channels<T: Scalar>(logits: &Tensor<T>) -> Vec<LabelMap> {
    let s = logits.shape();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            let data = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..s.c {
                        if logits.data()[(n * s.c + c) * plane + p] > logits.data()[(n * s.c + best) * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(s.h, s.w, data).expect("plane size matches")
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var> {
        let out = softmax_channels_forward(self.value(logits)?)?;
        self.record(Op::Softmax { x: logits }, out)
    }

    /// Scalar loss `(1,1,1,1)`; one label map per batch element.
    pub fn cross_entropy_masked(&mut self, logits: Var, labels: &[LabelMap], void: u8) -> Result<Var> {
        let ce = cross_entropy_forward(self.value(logits)?, labels, void)?;
        self.record(
            Op::CrossEntropy { logits, probs: ce.probs, targets: ce.targets, count: ce.count },
            Tensor::scalar(ce.loss),
        )
    }
}
