//! Batch normalization over `(n, h, w)` per channel.

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by batch statistics and update the running estimates.
    Train,
    /// Normalize by the running estimates only.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { momentum: 0.1, eps: 1e-5 }
    }
}

/// Running statistics of one normalization layer, `(1,c,1,1)` each.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut Tensor<T>,
    pub var: &'a mut Tensor<T>,
}

struct Normalized<T> {
    out: Tensor<T>,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: RunningStats<'_, T>,
    cfg: BatchNormConfig,
    mode: BnMode,
) -> Result<Normalized<T>> {
    let s = x.shape();
    let cshape = Shape::new(1, s.c, 1, 1);
    contract!(gamma.shape() == cshape && beta.shape() == cshape, "batch-norm affine params must be {cshape}");
    contract!(
        running.mean.shape() == cshape && running.var.shape() == cshape,
        "batch-norm running stats must be {cshape}"
    );
    let m = s.n * s.plane();
    if mode == BnMode::Train {
        contract!(m >= 2, "train-mode batch norm needs at least 2 values per channel, got {m}");
    }
    let plane = s.plane();
    let eps = T::lit(cfg.eps);
    let mom = T::lit(cfg.momentum);
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];
    for c in 0..s.c {
        let chunks = |n: usize| (n * s.c + c) * plane..(n * s.c + c + 1) * plane;
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = T::zero();
                for n in 0..s.n {
                    sum += x.data()[chunks(n)].iter().copied().sum::<T>();
                }
                let mean = sum / T::lit(m as f64);
                let mut sq = T::zero();
                for n in 0..s.n {
                    for &v in &x.data()[chunks(n)] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / T::lit(m as f64);
                let unbiased = sq / T::lit((m - 1) as f64);
                let rm = &mut running.mean.data_mut()[c];
                *rm = (T::one() - mom) * *rm + mom * mean;
                let rv = &mut running.var.data_mut()[c];
                *rv = (T::one() - mom) * *rv + mom * unbiased;
                (mean, var)
            }
            BnMode::Eval => (running.mean.data()[c], running.var.data()[c]),
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[c] = istd;
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for n in 0..s.n {
            let r = chunks(n);
            for i in r {
                let xh = (x.data()[i] - mean) * istd;
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok(Normalized { out, xhat, inv_std })
}

pub fn batchnorm2d_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: RunningStats<'_, T>,
    cfg: BatchNormConfig,
    mode: BnMode,
) -> Result<Tensor<T>> {
    normalize(x, gamma, beta, running, cfg, mode).map(|n| n.out)
}

pub(crate) fn batchnorm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    train: bool,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = xhat.shape();
    let plane = s.plane();
    let m = T::lit((s.n * plane) as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    for c in 0..s.c {
        let range = |n: usize| (n * s.c + c) * plane..(n * s.c + c + 1) * plane;
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for n in 0..s.n {
            for i in range(n) {
                sum_g += g.data()[i];
                sum_gx += g.data()[i] * xhat.data()[i];
            }
        }
        dgamma.data_mut()[c] = sum_gx;
        dbeta.data_mut()[c] = sum_g;
        let gm = gamma.data()[c];
        let istd = inv_std[c];
        for n in 0..s.n {
            for i in range(n) {
                dx.data_mut()[i] = if train {
                    // dxhat = g·γ;  dx = istd/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    gm * istd / m * (m * g.data()[i] - sum_g - xhat.data()[i] * sum_gx)
                } else {
                    g.data()[i] * gm * istd
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

impl<T: Scalar> Tape<T> {
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<'_, T>,
        cfg: BatchNormConfig,
        mode: BnMode,
    ) -> Result<Var> {
        let norm = normalize(self.value(x)?, self.value(gamma)?, self.value(beta)?, running, cfg, mode)?;
        self.record(
            Op::BatchNorm { x, gamma, beta, xhat: norm.xhat, inv_std: norm.inv_std, train: mode == BnMode::Train },
            norm.out,
        )
    }
}
