use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Affine map on channel vectors: `x (n,in,1,1)`, `weight (out,in,1,1)`,
/// `bias (1,out,1,1)`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    contract!(xs.h == 1 && xs.w == 1, "linear expects (n,c,1,1) input, got {xs}");
    contract!(ws.h == 1 && ws.w == 1, "linear weight must be (out,in,1,1), got {ws}");
    contract!(ws.c == xs.c, "linear weight expects {} inputs, got {}", ws.c, xs.c);
    if let Some(b) = bias {
        contract!(b.shape() == Shape::new(1, ws.n, 1, 1), "linear bias must be (1,{},1,1)", ws.n);
    }
    let (inp, out) = (ws.c, ws.n);
    let mut y = Tensor::zeros(Shape::new(xs.n, out, 1, 1));
    for n in 0..xs.n {
        let xr = &x.data()[n * inp..(n + 1) * inp];
        for o in 0..out {
            let wr = &weight.data()[o * inp..(o + 1) * inp];
            let mut acc = T::zero();
            for (&a, &b) in wr.iter().zip(xr) {
                acc += a * b;
            }
            if let Some(b) = bias {
                acc += b.data()[o];
            }
            y.data_mut()[n * out + o] = acc;
        }
    }
    Ok(y)
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let ws = weight.shape();
    let (inp, out) = (ws.c, ws.n);
    let batch = x.shape().n;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(Shape::new(1, out, 1, 1));
    for n in 0..batch {
        let xr = &x.data()[n * inp..(n + 1) * inp];
        for o in 0..out {
            let gv = g.data()[n * out + o];
            db.data_mut()[o] += gv;
            for i in 0..inp {
                dw.data_mut()[o * inp + i] += gv * xr[i];
                dx.data_mut()[n * inp + i] += gv * weight.data()[o * inp + i];
            }
        }
    }
    (dx, dw, db)
}

impl<T: Scalar> Tape<T> {
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let b = match bias {
            Some(b) => Some(self.value(b)?),
            None => None,
        };
        let out = linear_forward(self.value(x)?, self.value(weight)?, b)?;
        self.record(Op::Linear { x, w: weight, b: bias }, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_dot_product() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1), vec![2.0, 3.0]).unwrap();
        let eye = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::zeros(Shape::new(1, 2, 1, 1));
        assert_eq!(linear_forward(&x, &eye, Some(&zero_b)).unwrap(), x);
        let ones = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 1.0]).unwrap();
        assert_eq!(linear_forward(&x, &ones, None).unwrap().data(), &[5.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        let w = Tensor::zeros(Shape::new(2, 4, 1, 1));
        assert!(linear_forward(&x, &w, None).is_err());
    }
}
