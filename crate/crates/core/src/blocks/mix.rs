use crate::error::Result;
use crate::nn::{avgpool2d, avgpool2d_backward, channel_concat, channel_split, composite_params, Grads};
use crate::tensor::{MacCounter, Scalar, Tensor};

use super::bottleneck::{BottleNeck, BottleNeckCache};
use super::config::BlockKind;
use super::layers::{ConvBn, ConvBnCache};
use super::transformer::{TransformerBlock, TransformerCache};

/// Hybrid block mixing a Transformer part (width `R * C_out`) with a
/// BottleNeck part (width `(1 - R) * C_out`).
///
/// * A: `1x1` projection to `C_out`, channel split, both branches in parallel.
/// * B: projection to `R * C_out`, BottleNeck, then Transformer on its output.
/// * C: projection to `R * C_out`, Transformer, then BottleNeck on its output.
///
/// The sequential variants concatenate both sub-block outputs, so each
/// contributes its width to `C_out`. Stride 2 avg-pools at the block input;
/// stride 1 with equal widths adds an identity shortcut around the block.
#[derive(Clone, Debug)]
pub struct MixBlock<T: Scalar = f32> {
    pub variant: BlockKind,
    pub downsample: bool,
    pub residual: bool,
    pub proj: ConvBn<T>,
    pub transformer: TransformerBlock<T>,
    pub bottleneck: BottleNeck<T>,
}

composite_params!(MixBlock {
    proj => "proj",
    transformer => "transformer",
    bottleneck => "bottleneck",
});

#[derive(Clone, Debug)]
pub struct MixCache<T: Scalar> {
    input_shape: Vec<usize>,
    proj: ConvBnCache<T>,
    transformer: TransformerCache<T>,
    bottleneck: BottleNeckCache<T>,
}

impl<T: Scalar> MixBlock<T> {
    /// `widths` is `(transformer, bottleneck)`; see [`super::BlockConfig::branch_widths`].
    pub fn new(
        variant: BlockKind,
        in_channels: usize,
        widths: (usize, usize),
        stride: usize,
        sr_ratio: usize,
        kernel: usize,
    ) -> Result<Self> {
        let (tw, bw) = widths;
        let out = tw + bw;
        let (proj_out, bottleneck_in) = match variant {
            BlockKind::MixA => (out, bw),
            _ => (tw, tw),
        };
        Ok(Self {
            variant,
            downsample: stride == 2,
            residual: stride == 1 && in_channels == out,
            proj: ConvBn::new(in_channels, proj_out, 1, 1),
            transformer: TransformerBlock::new(tw, sr_ratio)?,
            bottleneck: BottleNeck::new(bottleneck_in, bw, bw / 4, kernel, 1),
        })
    }

    fn transformer_width(&self) -> usize {
        self.transformer.channels()
    }

    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        self.forward_cached(x, counter).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, MixCache<T>)> {
        let pooled = if self.downsample {
            Some(avgpool2d(x, 2, 2)?)
        } else {
            None
        };
        let (p, proj) = self.proj.forward_cached(pooled.as_ref().unwrap_or(x), counter)?;
        let (mut y, transformer, bottleneck) = match self.variant {
            BlockKind::MixA => {
                let (pt, pb) = channel_split(&p, self.transformer_width())?;
                let (t, tc) = self.transformer.forward_map_cached(&pt, counter)?;
                let (b, bc) = self.bottleneck.forward_cached(&pb, counter)?;
                (channel_concat(&t, &b)?, tc, bc)
            }
            BlockKind::MixB => {
                let (b, bc) = self.bottleneck.forward_cached(&p, counter)?;
                let (t, tc) = self.transformer.forward_map_cached(&b, counter)?;
                (channel_concat(&b, &t)?, tc, bc)
            }
            _ => {
                let (t, tc) = self.transformer.forward_map_cached(&p, counter)?;
                let (b, bc) = self.bottleneck.forward_cached(&t, counter)?;
                (channel_concat(&t, &b)?, tc, bc)
            }
        };
        if self.residual {
            y.add_assign(x)?;
        }
        let cache = MixCache {
            input_shape: x.shape().to_vec(),
            proj,
            transformer,
            bottleneck,
        };
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &MixCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let tw = self.transformer_width();
        let bottleneck_back = |g: &mut Grads<T>, d: &Tensor<T>| {
            g.scoped("bottleneck", |g| self.bottleneck.backward(&cache.bottleneck, d, g))
        };
        let transformer_back = |g: &mut Grads<T>, d: &Tensor<T>| {
            g.scoped("transformer", |g| {
                self.transformer.backward_map(&cache.transformer, d, g)
            })
        };
        let dp = match self.variant {
            BlockKind::MixA => {
                let (dt, db) = channel_split(dy, tw)?;
                let dpt = transformer_back(grads, &dt)?;
                let dpb = bottleneck_back(grads, &db)?;
                channel_concat(&dpt, &dpb)?
            }
            BlockKind::MixB => {
                let bw = dy.dim(1) - tw;
                let (mut db, dt) = channel_split(dy, bw)?;
                db.add_assign(&transformer_back(grads, &dt)?)?;
                bottleneck_back(grads, &db)?
            }
            _ => {
                let (mut dt, db) = channel_split(dy, tw)?;
                dt.add_assign(&bottleneck_back(grads, &db)?)?;
                transformer_back(grads, &dt)?
            }
        };
        let mut dx = grads.scoped("proj", |g| self.proj.backward(&cache.proj, &dp, g))?;
        if self.downsample {
            dx = avgpool2d_backward(&cache.input_shape, &dx, 2, 2)?;
        }
        if self.residual {
            dx.add_assign(dy)?;
        }
        Ok(dx)
    }
}
