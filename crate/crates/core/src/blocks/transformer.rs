use crate::error::Result;
use crate::nn::{
    avgpool2d, avgpool2d_backward, composite_params, nchw_to_tokens, tokens_to_nchw, Activation, AttentionCache, Grads,
    LayerNorm, Linear, SpatialReductionAttention,
};
use crate::tensor::{MacCounter, Scalar, Tensor};

use super::layers::{ConvBn, ConvBnCache};

/// Expansion of the hidden MLP layer.
pub const MLP_RATIO: usize = 3;

/// Pre-norm Transformer block on `B x N x C` tokens:
/// `x + attn(norm1(x))`, then `+ mlp(norm2(.))` with a GeLU MLP.
#[derive(Clone, Debug)]
pub struct TransformerBlock<T: Scalar = f32> {
    pub norm1: LayerNorm<T>,
    pub attn: SpatialReductionAttention<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

composite_params!(TransformerBlock {
    norm1 => "norm1",
    attn => "attn",
    norm2 => "norm2",
    fc1 => "fc1",
    fc2 => "fc2",
});

#[derive(Clone, Debug)]
pub struct TransformerCache<T: Scalar> {
    x: Tensor<T>,
    attn: AttentionCache<T>,
    x1: Tensor<T>,
    n2: Tensor<T>,
    h: Tensor<T>,
    g: Tensor<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(channels: usize, sr_ratio: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(channels),
            attn: SpatialReductionAttention::new(channels, sr_ratio)?,
            norm2: LayerNorm::new(channels),
            fc1: Linear::new(channels, MLP_RATIO * channels, true),
            fc2: Linear::new(MLP_RATIO * channels, channels, true),
        })
    }

    pub fn channels(&self) -> usize {
        self.attn.channels()
    }

    pub fn forward(&self, x: &Tensor<T>, hw: (usize, usize), counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let a = self.attn.forward(&self.norm1.forward(x)?, hw, counter)?;
        let mut x1 = a;
        x1.add_assign(x)?;
        let mut h = self.fc1.forward(&self.norm2.forward(&x1)?, counter)?;
        Activation::Gelu.forward_inplace(&mut h);
        let mut y = self.fc2.forward(&h, counter)?;
        y.add_assign(&x1)?;
        Ok(y)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor<T>,
        hw: (usize, usize),
        counter: Option<&MacCounter>,
    ) -> Result<(Tensor<T>, TransformerCache<T>)> {
        let (a, attn) = self.attn.forward_cached(&self.norm1.forward(x)?, hw, counter)?;
        let x1 = a.add(x)?;
        let n2 = self.norm2.forward(&x1)?;
        let h = self.fc1.forward(&n2, counter)?;
        let g = Activation::Gelu.forward(&h);
        let y = self.fc2.forward(&g, counter)?.add(&x1)?;
        let cache = TransformerCache {
            x: x.clone(),
            attn,
            x1,
            n2,
            h,
            g,
        };
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &TransformerCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let dg = grads.scoped("fc2", |g| self.fc2.backward(&cache.g, dy, g))?;
        let dh = Activation::Gelu.backward(&cache.h, &dg)?;
        let dn2 = grads.scoped("fc1", |g| self.fc1.backward(&cache.n2, &dh, g))?;
        let mut dx1 = grads.scoped("norm2", |g| self.norm2.backward(&cache.x1, &dn2, g))?;
        dx1.add_assign(dy)?;
        let dn1 = grads.scoped("attn", |g| self.attn.backward(&cache.attn, &dx1, g))?;
        let mut dx = grads.scoped("norm1", |g| self.norm1.backward(&cache.x, &dn1, g))?;
        dx.add_assign(&dx1)?;
        Ok(dx)
    }

    /// Runs on a `B x C x H x W` map by flattening to tokens and back.
    pub fn forward_map(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let (h, w) = (x.dim(2), x.dim(3));
        tokens_to_nchw(&self.forward(&nchw_to_tokens(x)?, (h, w), counter)?, h, w)
    }

    pub fn forward_map_cached(
        &self,
        x: &Tensor<T>,
        counter: Option<&MacCounter>,
    ) -> Result<(Tensor<T>, TransformerCache<T>)> {
        let (h, w) = (x.dim(2), x.dim(3));
        let (y, cache) = self.forward_cached(&nchw_to_tokens(x)?, (h, w), counter)?;
        Ok((tokens_to_nchw(&y, h, w)?, cache))
    }

    pub fn backward_map(&self, cache: &TransformerCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let (h, w) = (dy.dim(2), dy.dim(3));
        tokens_to_nchw(&self.backward(cache, &nchw_to_tokens(dy)?, grads)?, h, w)
    }
}

/// Transformer block used as a network stage element: optional 2x2 avgpool
/// downsampling and a `1x1` conv + BatchNorm when the width changes.
#[derive(Clone, Debug)]
pub struct TransformerStage<T: Scalar = f32> {
    pub downsample: bool,
    pub entry: Option<ConvBn<T>>,
    pub block: TransformerBlock<T>,
}

composite_params!(TransformerStage { entry => "entry", block => "block" });

#[derive(Clone, Debug)]
pub struct TransformerStageCache<T: Scalar> {
    input_shape: Vec<usize>,
    entry: Option<ConvBnCache<T>>,
    block: TransformerCache<T>,
}

impl<T: Scalar> TransformerStage<T> {
    pub fn new(in_channels: usize, channels: usize, stride: usize, sr_ratio: usize) -> Result<Self> {
        Ok(Self {
            downsample: stride == 2,
            entry: (in_channels != channels).then(|| ConvBn::new(in_channels, channels, 1, 1)),
            block: TransformerBlock::new(channels, sr_ratio)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        let pooled;
        let mut h = x;
        if self.downsample {
            pooled = avgpool2d(x, 2, 2)?;
            h = &pooled;
        }
        match &self.entry {
            Some(e) => self.block.forward_map(&e.forward(h, counter)?, counter),
            None => self.block.forward_map(h, counter),
        }
    }

    pub fn forward_cached(
        &self,
        x: &Tensor<T>,
        counter: Option<&MacCounter>,
    ) -> Result<(Tensor<T>, TransformerStageCache<T>)> {
        let mut h = if self.downsample {
            avgpool2d(x, 2, 2)?
        } else {
            x.clone()
        };
        let entry = match &self.entry {
            Some(e) => {
                let (y, c) = e.forward_cached(&h, counter)?;
                h = y;
                Some(c)
            }
            None => None,
        };
        let (y, block) = self.block.forward_map_cached(&h, counter)?;
        Ok((
            y,
            TransformerStageCache {
                input_shape: x.shape().to_vec(),
                entry,
                block,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &TransformerStageCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let mut d = grads.scoped("block", |g| self.block.backward_map(&cache.block, dy, g))?;
        if let (Some(e), Some(c)) = (&self.entry, &cache.entry) {
            d = grads.scoped("entry", |g| e.backward(c, &d, g))?;
        }
        if self.downsample {
            d = avgpool2d_backward(&cache.input_shape, &d, 2, 2)?;
        }
        Ok(d)
    }
}
