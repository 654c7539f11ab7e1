//! 2-D cross-correlation with zero padding, lowered to im2col.
//!
//! Each output element is accumulated as `0 + Σ w·x` over `(in_c, ky, kx)` in
//! that order, then the bias is added. Holding this order fixed makes the
//! result reproducible bit-for-bit against a direct nested-loop evaluation.

use std::borrow::Cow;

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2dSpec { in_channels, out_channels, kernel: (kernel, kernel), stride, padding, bias: true }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1, 1, 0)
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.bias { self.out_channels } else { 0 }
    }

    /// `floor((in + 2·pad − k)/stride) + 1` per axis; must be at least 1.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        contract!(self.stride >= 1, "stride must be positive");
        let axis = |len: usize, k: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            contract!(
                padded >= k,
                "kernel {k} does not fit input {len} with padding {}",
                self.padding
            );
            Ok((padded - k) / self.stride + 1)
        };
        Ok((axis(h, self.kernel.0)?, axis(w, self.kernel.1)?))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == 0
    }
}

struct Geometry {
    spec: Conv2dSpec,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.spec.in_channels * self.spec.kernel.0 * self.spec.kernel.1
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `(c,h,w)` into a `(c·kh·kw) × (oh·ow)` matrix.
    fn im2col<'a, T: Scalar>(&self, img: &'a [T]) -> Cow<'a, [T]> {
        if self.spec.is_pointwise() {
            return Cow::Borrowed(img);
        }
        let (kh, kw) = self.spec.kernel;
        let (s, p) = (self.spec.stride as isize, self.spec.padding as isize);
        let ncols = self.cols();
        let mut cols = vec![T::zero(); self.rows() * ncols];
        for c in 0..self.spec.in_channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ((c * kh + ky) * kw + kx) * ncols;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let dst = &mut cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Cow::Owned(cols)
    }

    /// Adjoint of `im2col`: scatters-adds column gradients back into `img`.
    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        if self.spec.is_pointwise() {
            img.iter_mut().zip(cols).for_each(|(d, &c)| *d += c);
            return;
        }
        let (kh, kw) = self.spec.kernel;
        let (s, p) = (self.spec.stride as isize, self.spec.padding as isize);
        let ncols = self.cols();
        for c in 0..self.spec.in_channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ((c * kh + ky) * kw + kx) * ncols;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < self.w as isize {
                                plane[iy as usize * self.w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: Shape, spec: &Conv2dSpec) -> Result<Geometry> {
    contract!(
        x.c == spec.in_channels,
        "conv expects {} input channels, got {}",
        spec.in_channels,
        x.c
    );
    let (oh, ow) = spec.output_size(x.h, x.w)?;
    Ok(Geometry { spec: *spec, h: x.h, w: x.w, oh, ow })
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let geo = geometry(xs, spec)?;
    contract!(
        weight.shape() == spec.weight_shape(),
        "conv weight must be {}, got {}",
        spec.weight_shape(),
        weight.shape()
    );
    if let Some(b) = bias {
        contract!(b.shape() == spec.bias_shape(), "conv bias must be {}, got {}", spec.bias_shape(), b.shape());
    }
    let (rows, ncols) = (geo.rows(), geo.cols());
    let oc = spec.out_channels;
    let mut out = Tensor::zeros(Shape::new(xs.n, oc, geo.oh, geo.ow));
    let in_len = xs.c * xs.plane();
    for n in 0..xs.n {
        let cols = geo.im2col(&x.data()[n * in_len..(n + 1) * in_len]);
        let out_n = &mut out.data_mut()[n * oc * ncols..(n + 1) * oc * ncols];
        for (o, orow) in out_n.chunks_mut(ncols).enumerate() {
            let wrow = &weight.data()[o * rows..(o + 1) * rows];
            for (k, &wv) in wrow.iter().enumerate() {
                let crow = &cols[k * ncols..(k + 1) * ncols];
                for (d, &c) in orow.iter_mut().zip(crow) {
                    *d += wv * c;
                }
            }
            if let Some(b) = bias {
                let bv = b.data()[o];
                orow.iter_mut().for_each(|d| *d += bv);
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &Conv2dSpec,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let xs = x.shape();
    let geo = geometry(xs, spec).expect("geometry validated in forward");
    let (rows, ncols) = (geo.rows(), geo.cols());
    let oc = spec.out_channels;
    let in_len = xs.c * xs.plane();
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(spec.bias_shape());
    let mut dcols = vec![T::zero(); rows * ncols];
    for n in 0..xs.n {
        let cols = geo.im2col(&x.data()[n * in_len..(n + 1) * in_len]);
        let g_n = &g.data()[n * oc * ncols..(n + 1) * oc * ncols];
        dcols.iter_mut().for_each(|v| *v = T::zero());
        for (o, grow) in g_n.chunks(ncols).enumerate() {
            db.data_mut()[o] += grow.iter().copied().sum::<T>();
            let wrow = &weight.data()[o * rows..(o + 1) * rows];
            let dwrow = &mut dw.data_mut()[o * rows..(o + 1) * rows];
            for k in 0..rows {
                let crow = &cols[k * ncols..(k + 1) * ncols];
                let mut acc = T::zero();
                for (&gv, &c) in grow.iter().zip(crow) {
                    acc += gv * c;
                }
                dwrow[k] += acc;
                let wv = wrow[k];
                let dcrow = &mut dcols[k * ncols..(k + 1) * ncols];
                for (d, &gv) in dcrow.iter_mut().zip(grow) {
                    *d += wv * gv;
                }
            }
        }
        geo.col2im(&dcols, &mut dx.data_mut()[n * in_len..(n + 1) * in_len]);
    }
    (dx, dw, db)
}

impl<T: Scalar> Tape<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        contract!(
            bias.is_some() == spec.bias,
            "conv spec bias flag ({}) disagrees with the supplied bias",
            spec.bias
        );
        let b = match bias {
            Some(b) => Some(self.value(b)?),
            None => None,
        };
        let out = conv2d_forward(self.value(x)?, self.value(weight)?, b, &spec)?;
        self.record(Op::Conv2d { x, w: weight, b: bias, spec }, out)
    }
}
