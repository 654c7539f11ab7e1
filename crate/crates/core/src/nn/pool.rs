//! Windowed, global (spatial) and channel-axis pooling.

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Square pooling window. Padded cells never win a max and are excluded
/// from the averaging divisor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pool2dSpec {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool2dSpec {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize, padding: usize) -> Self {
        Pool2dSpec { kind, kernel, stride, padding }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        contract!(self.kernel >= 1 && self.stride >= 1, "pool kernel and stride must be positive");
        contract!(
            self.padding < self.kernel,
            "pool padding {} must be smaller than kernel {}",
            self.padding,
            self.kernel
        );
        let axis = |len: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            contract!(padded >= self.kernel, "pool kernel {} does not fit input {len}", self.kernel);
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((axis(h)?, axis(w)?))
    }

    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let end = (start + self.kernel as isize).min(len as isize);
        (start.max(0) as usize, end as usize)
    }
}

/// Returns the pooled tensor and, for max pooling, the flat source index of
/// every output element (first maximum in scan order wins ties).
pub fn pool2d_forward<T: Scalar>(x: &Tensor<T>, spec: &Pool2dSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    let (oh, ow) = spec.output_size(s.h, s.w)?;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut route = Vec::new();
    if spec.kind == PoolKind::Max {
        route.reserve(out.len());
    }
    let xd = x.data();
    let mut k = 0;
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..oh {
            let (y0, y1) = spec.window(oy, s.h);
            for ox in 0..ow {
                let (x0, x1) = spec.window(ox, s.w);
                match spec.kind {
                    PoolKind::Max => {
                        let mut best = base + y0 * s.w + x0;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                let i = base + y * s.w + xx;
                                if xd[i] > xd[best] {
                                    best = i;
                                }
                            }
                        }
                        out.data_mut()[k] = xd[best];
                        route.push(best);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                acc += xd[base + y * s.w + xx];
                            }
                        }
                        out.data_mut()[k] = acc / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
                k += 1;
            }
        }
    }
    Ok((out, route))
}

pub(crate) fn pool2d_backward<T: Scalar>(xs: Shape, spec: &Pool2dSpec, route: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(xs);
    match spec.kind {
        PoolKind::Max => {
            for (&src, &gv) in route.iter().zip(g.data()) {
                dx.data_mut()[src] += gv;
            }
        }
        PoolKind::Avg => {
            let gs = g.shape();
            let mut k = 0;
            for nc in 0..xs.n * xs.c {
                let base = nc * xs.plane();
                for oy in 0..gs.h {
                    let (y0, y1) = spec.window(oy, xs.h);
                    for ox in 0..gs.w {
                        let (x0, x1) = spec.window(ox, xs.w);
                        let share = g.data()[k] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                dx.data_mut()[base + y * xs.w + xx] += share;
                            }
                        }
                        k += 1;
                    }
                }
            }
        }
    }
    dx
}

/// Per-channel statistic over all spatial positions, `(n,c,1,1)`.
pub fn global_pool_forward<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    contract!(s.plane() >= 1, "global pooling needs a non-empty plane");
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    let mut route = Vec::new();
    for (i, chunk) in x.data().chunks(s.plane()).enumerate() {
        match kind {
            PoolKind::Max => {
                let mut best = 0;
                for (j, &v) in chunk.iter().enumerate() {
                    if v > chunk[best] {
                        best = j;
                    }
                }
                out.data_mut()[i] = chunk[best];
                route.push(i * s.plane() + best);
            }
            PoolKind::Avg => {
                out.data_mut()[i] = chunk.iter().copied().sum::<T>() / T::lit(s.plane() as f64);
            }
        }
    }
    Ok((out, route))
}

pub(crate) fn global_pool_backward<T: Scalar>(xs: Shape, kind: PoolKind, route: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(xs);
    match kind {
        PoolKind::Max => {
            for (&src, &gv) in route.iter().zip(g.data()) {
                dx.data_mut()[src] += gv;
            }
        }
        PoolKind::Avg => {
            let inv = T::one() / T::lit(xs.plane() as f64);
            for (chunk, &gv) in dx.data_mut().chunks_mut(xs.plane()).zip(g.data()) {
                chunk.iter_mut().for_each(|d| *d = gv * inv);
            }
        }
    }
    dx
}

/// Per-position statistic across channels, `(n,1,h,w)`.
pub fn channel_pool_forward<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    contract!(s.c >= 1, "channel pooling needs at least one channel");
    let plane = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    let mut route = Vec::new();
    let xd = x.data();
    for n in 0..s.n {
        for p in 0..plane {
            let idx = |c: usize| (n * s.c + c) * plane + p;
            match kind {
                PoolKind::Max => {
                    let mut best = idx(0);
                    for c in 1..s.c {
                        if xd[idx(c)] > xd[best] {
                            best = idx(c);
                        }
                    }
                    out.data_mut()[n * plane + p] = xd[best];
                    route.push(best);
                }
                PoolKind::Avg => {
                    let mut acc = T::zero();
                    for c in 0..s.c {
                        acc += xd[idx(c)];
                    }
                    out.data_mut()[n * plane + p] = acc / T::lit(s.c as f64);
                }
            }
        }
    }
    Ok((out, route))
}

pub(crate) fn channel_pool_backward<T: Scalar>(xs: Shape, kind: PoolKind, route: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(xs);
    let plane = xs.plane();
    match kind {
        PoolKind::Max => {
            for (&src, &gv) in route.iter().zip(g.data()) {
                dx.data_mut()[src] += gv;
            }
        }
        PoolKind::Avg => {
            let inv = T::one() / T::lit(xs.c as f64);
            for n in 0..xs.n {
                for c in 0..xs.c {
                    for p in 0..plane {
                        dx.data_mut()[(n * xs.c + c) * plane + p] = g.data()[n * plane + p] * inv;
                    }
                }
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    pub fn pool2d(&mut self, x: Var, spec: Pool2dSpec) -> Result<Var> {
        let (out, route) = pool2d_forward(self.value(x)?, &spec)?;
        self.record(Op::Pool2d { x, spec, route }, out)
    }

    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (out, route) = global_pool_forward(self.value(x)?, kind)?;
        self.record(Op::GlobalPool { x, kind, route }, out)
    }

    pub fn channel_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (out, route) = channel_pool_forward(self.value(x)?, kind)?;
        self.record(Op::ChannelPool { x, kind, route }, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn single_window_max_and_avg() {
        let (m, _) = pool2d_forward(&square(), &Pool2dSpec::new(PoolKind::Max, 2, 2, 0)).unwrap();
        assert_eq!(m.data(), &[4.0]);
        let (a, _) = pool2d_forward(&square(), &Pool2dSpec::new(PoolKind::Avg, 2, 2, 0)).unwrap();
        assert_eq!(a.data(), &[2.5]);
    }

    #[test]
    fn padded_avg_excludes_padding() {
        let (a, _) = pool2d_forward(&square(), &Pool2dSpec::new(PoolKind::Avg, 3, 1, 1)).unwrap();
        // top-left window covers only the four real cells
        assert_eq!(a.data()[0], 2.5);
    }

    #[test]
    fn padded_max_ignores_padding_for_negative_inputs() {
        let x = square().map(|v| -v);
        let (m, _) = pool2d_forward(&x, &Pool2dSpec::new(PoolKind::Max, 3, 1, 1)).unwrap();
        assert!(m.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(Pool2dSpec::new(PoolKind::Max, 3, 1, 3).output_size(4, 4).is_err());
        assert!(Pool2dSpec::new(PoolKind::Max, 5, 1, 0).output_size(4, 4).is_err());
    }

    #[test]
    fn global_and_channel_two_element_cases() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 5.0]).unwrap();
        assert_eq!(global_pool_forward(&x, PoolKind::Avg).unwrap().0.data(), &[2.0]);
        assert_eq!(global_pool_forward(&x, PoolKind::Max).unwrap().0.data(), &[5.0]);
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1), vec![2.0, 4.0]).unwrap();
        assert_eq!(channel_pool_forward(&x, PoolKind::Avg).unwrap().0.data(), &[3.0]);
        assert_eq!(channel_pool_forward(&x, PoolKind::Max).unwrap().0.data(), &[4.0]);
    }

    #[test]
    fn constant_field_and_singleton_axis() {
        let x = Tensor::<f64>::full(Shape::new(2, 3, 4, 5), 3.0);
        for kind in [PoolKind::Max, PoolKind::Avg] {
            assert!(global_pool_forward(&x, kind).unwrap().0.data().iter().all(|&v| v == 3.0));
        }
        let single = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.1, -4.0, 2.0, 9.0]).unwrap();
        for kind in [PoolKind::Max, PoolKind::Avg] {
            assert_eq!(channel_pool_forward(&single, kind).unwrap().0, single);
        }
    }
}
