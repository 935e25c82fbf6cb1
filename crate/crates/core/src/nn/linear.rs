use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatMut, MatRef};
use crate::tensor::{count, require_f64, MacCounter, Scalar, Tensor};

use super::{join, Differentiable, Grads, ParamKind, Params};

/// Affine map on the last axis: `y = x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[in_features, out_features]),
            bias: bias.then(|| Tensor::zeros(&[out_features])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(1)
    }

    fn out_shape(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        if x.rank() < 2 || x.shape()[x.rank() - 1] != self.in_features() {
            return Err(Error::Shape {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_features();
        Ok(shape)
    }

    /// Accepts `N x C` or `B x N x C`; the batched form multiplies each
    /// sample separately so results do not depend on batch composition.
    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let shape = self.out_shape(x)?;
        let (cin, cout) = (self.in_features(), self.out_features());
        let rows = x.numel() / cin;
        let groups = if x.rank() >= 3 { x.dim(0) } else { 1 };
        let per = rows / groups.max(1);
        let mut y = Tensor::zeros(&shape);
        let wmat = MatRef::new(self.weight.data(), cin, cout);
        for g in 0..groups {
            let xg = &x.data()[g * per * cin..(g + 1) * per * cin];
            let yg = &mut y.data_mut()[g * per * cout..(g + 1) * per * cout];
            gemm(MatRef::new(xg, per, cin), wmat, MatMut::new(yg, per, cout), false);
        }
        if let Some(b) = &self.bias {
            for row in y.data_mut().chunks_mut(cout) {
                for (v, &bv) in row.iter_mut().zip(b.data()) {
                    *v = *v + bv;
                }
            }
        }
        count(counter, (rows * cin * cout) as u64);
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        require_f64::<T>()?;
        let shape = self.out_shape(x)?;
        if dy.shape() != shape.as_slice() {
            return Err(Error::Shape {
                op: "linear backward",
                lhs: dy.shape().to_vec(),
                rhs: shape,
            });
        }
        let (cin, cout) = (self.in_features(), self.out_features());
        let rows = x.numel() / cin;
        let xm = MatRef::new(x.data(), rows, cin);
        let dym = MatRef::new(dy.data(), rows, cout);
        let mut dw = Tensor::zeros(self.weight.shape());
        gemm(xm.t(), dym, MatMut::new(dw.data_mut(), cin, cout), false);
        grads.add("weight", dw);
        if self.bias.is_some() {
            let mut db = vec![T::zero(); cout];
            for row in dy.data().chunks(cout) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
            grads.add("bias", Tensor::new(&[cout], db)?);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            dym,
            MatRef::new(self.weight.data(), cin, cout).t(),
            MatMut::new(dx.data_mut(), rows, cin),
            false,
        );
        Ok(dx)
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&join(prefix, "weight"), ParamKind::Weight, &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), ParamKind::Weight, b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), ParamKind::Weight, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), ParamKind::Weight, b);
        }
    }
}

impl<T: Scalar> Differentiable<T> for Linear<T> {
    type Cache = Tensor<T>;

    fn forward_train(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, Tensor<T>)> {
        require_f64::<T>()?;
        Ok((self.forward(x, counter)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        Linear::backward(self, x, dy, grads)
    }
}
