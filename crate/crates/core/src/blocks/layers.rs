use crate::error::Result;
use crate::nn::{composite_params, maxpool2d, maxpool2d_backward, Activation, BatchNorm2d, Conv2d, Grads};
use crate::tensor::{MacCounter, Scalar, Tensor};

/// Bias-free convolution followed by inference BatchNorm.
#[derive(Clone, Debug)]
pub struct ConvBn<T: Scalar = f32> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

composite_params!(ConvBn { conv => "conv", bn => "bn" });

#[derive(Clone, Debug)]
pub struct ConvBnCache<T: Scalar> {
    x: Tensor<T>,
    z: Tensor<T>,
}

impl<T: Scalar> ConvBn<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::same(in_channels, out_channels, kernel, stride),
            bn: BatchNorm2d::new(out_channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        self.bn.forward(&self.conv.forward(x, counter)?)
    }

    pub fn forward_cached(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let z = self.conv.forward(x, counter)?;
        let y = self.bn.forward(&z)?;
        Ok((y, ConvBnCache { x: x.clone(), z }))
    }

    pub fn backward(&self, cache: &ConvBnCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let dz = grads.scoped("bn", |g| self.bn.backward(&cache.z, dy, g))?;
        grads.scoped("conv", |g| self.conv.backward(&cache.x, &dz, g))
    }
}

/// `ConvBn` then ReLU; keeps the pre-activation for the ReLU gradient.
#[derive(Clone, Debug)]
pub struct ConvBnReluCache<T: Scalar> {
    inner: ConvBnCache<T>,
    pre: Tensor<T>,
}

impl<T: Scalar> ConvBn<T> {
    pub fn forward_relu(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let mut y = self.forward(x, counter)?;
        Activation::Relu.forward_inplace(&mut y);
        Ok(y)
    }

    pub fn forward_relu_cached(
        &self,
        x: &Tensor<T>,
        counter: Option<&MacCounter>,
    ) -> Result<(Tensor<T>, ConvBnReluCache<T>)> {
        let (pre, inner) = self.forward_cached(x, counter)?;
        let y = Activation::Relu.forward(&pre);
        Ok((y, ConvBnReluCache { inner, pre }))
    }

    pub fn backward_relu(&self, cache: &ConvBnReluCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let dpre = Activation::Relu.backward(&cache.pre, dy)?;
        self.backward(&cache.inner, &dpre, grads)
    }
}

/// 3x3 max pooling, padding 1.
#[derive(Clone, Copy, Debug)]
pub struct MaxPoolBlock {
    pub stride: usize,
}

impl MaxPoolBlock {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
        maxpool2d(x, 3, self.stride, 1)
    }

    pub fn backward<T: Scalar>(&self, input_shape: &[usize], argmax: &[u32], dy: &Tensor<T>) -> Result<Tensor<T>> {
        maxpool2d_backward(input_shape, dy, argmax)
    }
}
