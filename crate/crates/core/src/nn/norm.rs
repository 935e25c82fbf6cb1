use crate::error::{Error, Result};
use crate::tensor::{require_f64, MacCounter, Scalar, Tensor};

use super::{join, Differentiable, Grads, ParamKind, Params};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Inference-mode batch normalisation over axis 1 of `B x C x H x W`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    /// Identity transform up to `eps`: unit scale, zero shift and statistics.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        if x.rank() != 4 || x.dim(1) != self.channels() {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: x.shape().to_vec(),
                rhs: vec![self.channels()],
            });
        }
        Ok(x.dim(2) * x.dim(3))
    }

    /// Per-channel `(scale, shift)` so that `y = x * scale + shift`.
    fn affine(&self, c: usize) -> (T, T, T) {
        let inv_std = T::one() / (self.running_var.data()[c] + T::from_f64(self.eps)).sqrt();
        let scale = self.gamma.data()[c] * inv_std;
        let shift = self.beta.data()[c] - self.running_mean.data()[c] * scale;
        (scale, shift, inv_std)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let plane = self.check(x)?;
        let c_total = self.channels();
        let mut y = x.clone();
        for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let (scale, shift, _) = self.affine(i % c_total);
            chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        require_f64::<T>()?;
        let plane = self.check(x)?;
        let c_total = self.channels();
        let mut dgamma = vec![T::zero(); c_total];
        let mut dbeta = vec![T::zero(); c_total];
        let mut dx = Tensor::zeros(x.shape());
        for (i, ((xc, dyc), dxc)) in x
            .data()
            .chunks(plane)
            .zip(dy.data().chunks(plane))
            .zip(dx.data_mut().chunks_mut(plane))
            .enumerate()
        {
            let c = i % c_total;
            let (scale, _, inv_std) = self.affine(c);
            let mean = self.running_mean.data()[c];
            for ((&xv, &g), d) in xc.iter().zip(dyc).zip(dxc.iter_mut()) {
                dgamma[c] = dgamma[c] + g * (xv - mean) * inv_std;
                dbeta[c] = dbeta[c] + g;
                *d = g * scale;
            }
        }
        grads.add("gamma", Tensor::new(&[c_total], dgamma)?);
        grads.add("beta", Tensor::new(&[c_total], dbeta)?);
        Ok(dx)
    }
}

/// Normalisation over the last axis of token tensors (`... x C`).
#[derive(Clone, Debug)]
pub struct LayerNorm<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let c = self.channels();
        if x.rank() == 0 || x.shape()[x.rank() - 1] != c {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: vec![c],
            });
        }
        Ok(c)
    }

    fn stats(&self, row: &[T]) -> (T, T) {
        let n = T::from_usize(row.len());
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        (mean, T::one() / (var + T::from_f64(self.eps)).sqrt())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(x)?;
        let mut y = x.clone();
        for row in y.data_mut().chunks_mut(c) {
            let (mean, rstd) = self.stats(row);
            for ((v, &g), &b) in row.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                *v = (*v - mean) * rstd * g + b;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        require_f64::<T>()?;
        let c = self.check(x)?;
        let n = T::from_usize(c);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = Tensor::zeros(x.shape());
        let mut dxhat = vec![T::zero(); c];
        let mut xhat = vec![T::zero(); c];
        for ((xr, dyr), dxr) in x
            .data()
            .chunks(c)
            .zip(dy.data().chunks(c))
            .zip(dx.data_mut().chunks_mut(c))
        {
            let (mean, rstd) = self.stats(xr);
            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
            for j in 0..c {
                xhat[j] = (xr[j] - mean) * rstd;
                dgamma[j] = dgamma[j] + dyr[j] * xhat[j];
                dbeta[j] = dbeta[j] + dyr[j];
                dxhat[j] = dyr[j] * self.gamma.data()[j];
                sum_d = sum_d + dxhat[j];
                sum_dx = sum_dx + dxhat[j] * xhat[j];
            }
            for j in 0..c {
                dxr[j] = rstd * (dxhat[j] - sum_d / n - xhat[j] * sum_dx / n);
            }
        }
        grads.add("gamma", Tensor::new(&[c], dgamma)?);
        grads.add("beta", Tensor::new(&[c], dbeta)?);
        Ok(dx)
    }
}

/// Either normalisation used by the blocks.
#[derive(Clone, Debug)]
pub enum NormParams<T: Scalar = f32> {
    BatchNormInference(BatchNorm2d<T>),
    LayerNorm(LayerNorm<T>),
}

impl<T: Scalar> NormParams<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            NormParams::BatchNormInference(n) => n.forward(x),
            NormParams::LayerNorm(n) => n.forward(x),
        }
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        match self {
            NormParams::BatchNormInference(n) => n.backward(x, dy, grads),
            NormParams::LayerNorm(n) => n.backward(x, dy, grads),
        }
    }
}

impl<T: Scalar> Params<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&join(prefix, "gamma"), ParamKind::Weight, &self.gamma);
        f(&join(prefix, "beta"), ParamKind::Weight, &self.beta);
        f(&join(prefix, "running_mean"), ParamKind::Buffer, &self.running_mean);
        f(&join(prefix, "running_var"), ParamKind::Buffer, &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), ParamKind::Weight, &mut self.gamma);
        f(&join(prefix, "beta"), ParamKind::Weight, &mut self.beta);
        f(&join(prefix, "running_mean"), ParamKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_var"), ParamKind::Buffer, &mut self.running_var);
    }
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        f(&join(prefix, "gamma"), ParamKind::Weight, &self.gamma);
        f(&join(prefix, "beta"), ParamKind::Weight, &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), ParamKind::Weight, &mut self.gamma);
        f(&join(prefix, "beta"), ParamKind::Weight, &mut self.beta);
    }
}

impl<T: Scalar> Params<T> for NormParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        match self {
            NormParams::BatchNormInference(n) => n.visit(prefix, f),
            NormParams::LayerNorm(n) => n.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        match self {
            NormParams::BatchNormInference(n) => n.visit_mut(prefix, f),
            NormParams::LayerNorm(n) => n.visit_mut(prefix, f),
        }
    }
}

impl<T: Scalar> Differentiable<T> for NormParams<T> {
    type Cache = Tensor<T>;

    fn forward_train(&self, x: &Tensor<T>, _counter: Option<&MacCounter>) -> Result<(Tensor<T>, Tensor<T>)> {
        require_f64::<T>()?;
        Ok((self.forward(x)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        NormParams::backward(self, x, dy, grads)
    }
}
