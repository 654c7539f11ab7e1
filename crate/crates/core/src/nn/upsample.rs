//! Bilinear upsampling with half-pixel centers (no corner alignment).

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Source taps `(i0, i1, frac)` for each output index along one axis.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

fn check(xs: Shape, th: usize, tw: usize) -> Result<()> {
    contract!(xs.h >= 1 && xs.w >= 1, "cannot upsample an empty plane");
    contract!(
        th >= xs.h && tw >= xs.w,
        "upsample target {th}x{tw} is smaller than source {}x{}",
        xs.h,
        xs.w
    );
    Ok(())
}

pub fn upsample_bilinear_forward<T: Scalar>(x: &Tensor<T>, th: usize, tw: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    check(xs, th, tw)?;
    let ty = taps(xs.h, th);
    let tx = taps(xs.w, tw);
    let mut out = Tensor::zeros(Shape::new(xs.n, xs.c, th, tw));
    let plane = xs.plane();
    for (nc, dst) in out.data_mut().chunks_mut(th * tw).enumerate() {
        let src = &x.data()[nc * plane..(nc + 1) * plane];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * xs.w + x0] * (T::one() - fx) + src[y0 * xs.w + x1] * fx;
                let bot = src[y1 * xs.w + x0] * (T::one() - fx) + src[y1 * xs.w + x1] * fx;
                dst[oy * tw + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

/// Transpose of the forward interpolation: every output gradient is splatted
/// back onto its four source taps.
pub(crate) fn upsample_backward<T: Scalar>(xs: Shape, g: &Tensor<T>) -> Tensor<T> {
    let gs = g.shape();
    let ty = taps(xs.h, gs.h);
    let tx = taps(xs.w, gs.w);
    let mut dx = Tensor::zeros(xs);
    let plane = xs.plane();
    for (nc, gsrc) in g.data().chunks(gs.plane()).enumerate() {
        let dst = &mut dx.data_mut()[nc * plane..(nc + 1) * plane];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let gv = gsrc[oy * gs.w + ox];
                let (top, bot) = (gv * (T::one() - fy), gv * fy);
                dst[y0 * xs.w + x0] += top * (T::one() - fx);
                dst[y0 * xs.w + x1] += top * fx;
                dst[y1 * xs.w + x0] += bot * (T::one() - fx);
                dst[y1 * xs.w + x1] += bot * fx;
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    pub fn upsample_bilinear(&mut self, x: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let out = upsample_bilinear_forward(self.value(x)?, target_h, target_w)?;
        self.record(Op::Upsample { x }, out)
    }
}
