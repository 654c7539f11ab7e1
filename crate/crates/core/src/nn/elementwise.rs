//! Elementwise arithmetic, activations and the two broadcast products the
//! attention block needs: per-channel `(n,c,1,1) × (n,c,h,w)` and
//! per-position `(n,1,h,w) × (n,c,h,w)`.

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        contract!(sa == sb, "elementwise operands differ in shape: {sa} vs {sb}");
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a)?.zip_map(self.value(b)?, |x, y| x + y)?;
        self.record(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a)?.zip_map(self.value(b)?, |x, y| x - y)?;
        self.record(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a)?.zip_map(self.value(b)?, |x, y| x * y)?;
        self.record(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let s = T::lit(factor);
        let out = self.value(x)?.map(|v| v * s);
        self.record(Op::Scale(x, s), out)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x)?.map(|v| v.abs());
        self.record(Op::Abs(x), out)
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x)?.map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(Op::Relu(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x)?.map(sigmoid);
        self.record(Op::Sigmoid(x), out)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    /// Sum of all elements as a `(1,1,1,1)` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x)?.sum());
        self.record(Op::Sum(x), out)
    }

    /// `x[n,c,:,:] * s[n,c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xs, ss) = (self.shape(x)?, self.shape(s)?);
        contract!(
            ss == Shape::new(xs.n, xs.c, 1, 1),
            "channel scale must be {}, got {ss}",
            Shape::new(xs.n, xs.c, 1, 1)
        );
        let xv = self.value(x)?;
        let sv = self.value(s)?;
        let plane = xs.plane();
        let mut out = xv.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let f = sv.data()[i];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        self.record(Op::ScaleChannels { x, s }, out)
    }

    /// `x[n,c,i,j] * s[n,0,i,j]`.
    pub fn scale_spatial(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xs, ss) = (self.shape(x)?, self.shape(s)?);
        contract!(
            ss == Shape::new(xs.n, 1, xs.h, xs.w),
            "spatial scale must be {}, got {ss}",
            Shape::new(xs.n, 1, xs.h, xs.w)
        );
        let xv = self.value(x)?;
        let sv = self.value(s)?;
        let plane = xs.plane();
        let mut out = xv.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let n = i / xs.c;
            let row = &sv.data()[n * plane..(n + 1) * plane];
            chunk.iter_mut().zip(row).for_each(|(v, &f)| *v *= f);
        }
        self.record(Op::ScaleSpatial { x, s }, out)
    }

    /// Channel concatenation: channels `0..a.c` from `a`, then `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        contract!(
            sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
            "concat operands differ outside the channel axis: {sa} vs {sb}"
        );
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let (av, bv) = (self.value(a)?, self.value(b)?);
        let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&av.data()[n * la..(n + 1) * la]);
            data.extend_from_slice(&bv.data()[n * lb..(n + 1) * lb]);
        }
        let out = Tensor::from_vec(out_shape, data)?;
        self.record(Op::Concat { a, b }, out)
    }
}

pub(crate) fn scale_channels_backward<T: Scalar>(
    x: &Tensor<T>,
    s: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let plane = x.shape().plane();
    let mut dx = g.clone();
    let mut ds = Tensor::zeros(s.shape());
    for (i, (dchunk, xchunk)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
        let f = s.data()[i];
        let mut acc = T::zero();
        for (d, &xv) in dchunk.iter_mut().zip(xchunk) {
            acc += *d * xv;
            *d *= f;
        }
        ds.data_mut()[i] = acc;
    }
    (dx, ds)
}

pub(crate) fn scale_spatial_backward<T: Scalar>(
    x: &Tensor<T>,
    s: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let xs = x.shape();
    let plane = xs.plane();
    let mut dx = g.clone();
    let mut ds = Tensor::zeros(s.shape());
    for (i, (dchunk, xchunk)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
        let n = i / xs.c;
        let srow = &s.data()[n * plane..(n + 1) * plane];
        let dsrow = &mut ds.data_mut()[n * plane..(n + 1) * plane];
        for j in 0..plane {
            dsrow[j] += dchunk[j] * xchunk[j];
            dchunk[j] *= srow[j];
        }
    }
    (dx, ds)
}
