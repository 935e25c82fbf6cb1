use crate::error::Result;
use crate::nn::{composite_params, Grads};
use crate::tensor::{MacCounter, Scalar, Tensor};

use super::layers::{ConvBn, ConvBnCache, ConvBnReluCache};

/// `1x1` reduce, `K x K` spatial (carrying the stride), `1x1` expand, each
/// followed by BatchNorm and ReLU, plus a shortcut. The shortcut is the
/// identity when shapes match and a strided `1x1` conv + BatchNorm otherwise.
#[derive(Clone, Debug)]
pub struct BottleNeck<T: Scalar = f32> {
    pub reduce: ConvBn<T>,
    pub spatial: ConvBn<T>,
    pub expand: ConvBn<T>,
    pub shortcut: Option<ConvBn<T>>,
}

composite_params!(BottleNeck {
    reduce => "reduce",
    spatial => "spatial",
    expand => "expand",
    shortcut => "shortcut",
});

#[derive(Clone, Debug)]
pub struct BottleNeckCache<T: Scalar> {
    reduce: ConvBnReluCache<T>,
    spatial: ConvBnReluCache<T>,
    expand: ConvBnReluCache<T>,
    shortcut: Option<ConvBnCache<T>>,
}

impl<T: Scalar> BottleNeck<T> {
    pub fn new(in_channels: usize, out_channels: usize, mid: usize, kernel: usize, stride: usize) -> Self {
        let projected = stride != 1 || in_channels != out_channels;
        Self {
            reduce: ConvBn::new(in_channels, mid, 1, 1),
            spatial: ConvBn::new(mid, mid, kernel, stride),
            expand: ConvBn::new(mid, out_channels, 1, 1),
            shortcut: projected.then(|| ConvBn::new(in_channels, out_channels, 1, stride)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let h = self.reduce.forward_relu(x, counter)?;
        let h = self.spatial.forward_relu(&h, counter)?;
        let mut y = self.expand.forward_relu(&h, counter)?;
        match &self.shortcut {
            Some(sc) => y.add_assign(&sc.forward(x, counter)?)?,
            None => y.add_assign(x)?,
        }
        Ok(y)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor<T>,
        counter: Option<&MacCounter>,
    ) -> Result<(Tensor<T>, BottleNeckCache<T>)> {
        let (h, reduce) = self.reduce.forward_relu_cached(x, counter)?;
        let (h, spatial) = self.spatial.forward_relu_cached(&h, counter)?;
        let (mut y, expand) = self.expand.forward_relu_cached(&h, counter)?;
        let shortcut = match &self.shortcut {
            Some(sc) => {
                let (s, cache) = sc.forward_cached(x, counter)?;
                y.add_assign(&s)?;
                Some(cache)
            }
            None => {
                y.add_assign(x)?;
                None
            }
        };
        Ok((
            y,
            BottleNeckCache {
                reduce,
                spatial,
                expand,
                shortcut,
            },
        ))
    }

    pub fn backward(&self, cache: &BottleNeckCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let d = grads.scoped("expand", |g| self.expand.backward_relu(&cache.expand, dy, g))?;
        let d = grads.scoped("spatial", |g| self.spatial.backward_relu(&cache.spatial, &d, g))?;
        let mut dx = grads.scoped("reduce", |g| self.reduce.backward_relu(&cache.reduce, &d, g))?;
        match (&self.shortcut, &cache.shortcut) {
            (Some(sc), Some(c)) => dx.add_assign(&grads.scoped("shortcut", |g| sc.backward(c, dy, g))?)?,
            _ => dx.add_assign(dy)?,
        }
        Ok(dx)
    }
}
