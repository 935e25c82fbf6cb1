//! The block zoo: convolution stems, BottleNeck, Transformer and the three
//! hybrid mix blocks, all operating on `B x C x H x W` maps.

mod bottleneck;
mod config;
mod layers;
mod mix;
mod transformer;

pub use bottleneck::{BottleNeck, BottleNeckCache};
pub use config::{BlockConfig, BlockKind, OpDesc, OpKind, TraceEntry};
pub use layers::{ConvBn, ConvBnCache, MaxPoolBlock};
pub use mix::{MixBlock, MixCache};
pub use transformer::{TransformerBlock, TransformerCache, TransformerStage, TransformerStageCache, MLP_RATIO};

use crate::error::{Error, Result};
use crate::nn::{Differentiable, Grads, ParamKind, Params};
use crate::tensor::{require_f64, MacCounter, Scalar, Tensor};

use layers::ConvBnReluCache;

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Inner<T: Scalar> {
    Conv(ConvBn<T>),
    MaxPool(MaxPoolBlock),
    BottleNeck(BottleNeck<T>),
    Transformer(TransformerStage<T>),
    Mix(MixBlock<T>),
}

/// A built block: its configuration plus zero-initialised layers.
#[derive(Clone, Debug)]
pub struct Block<T: Scalar = f32> {
    config: BlockConfig,
    inner: Inner<T>,
}

/// Intermediates kept for [`Block::backward`].
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum BlockCache<T: Scalar> {
    Conv(ConvBnReluCache<T>),
    MaxPool { input_shape: Vec<usize>, argmax: Vec<u32> },
    BottleNeck(BottleNeckCache<T>),
    Transformer(TransformerStageCache<T>),
    Mix(MixCache<T>),
}

impl<T: Scalar> Block<T> {
    /// Validates `config`; errors name `path`.
    pub fn new(config: BlockConfig, path: &str) -> Result<Self> {
        config.check(path)?;
        let c = &config;
        let inner = match c.kind {
            BlockKind::Conv => Inner::Conv(ConvBn::new(c.in_channels, c.out_channels, c.kernel, c.stride)),
            BlockKind::MaxPool => Inner::MaxPool(MaxPoolBlock { stride: c.stride }),
            BlockKind::BottleNeck => Inner::BottleNeck(BottleNeck::new(
                c.in_channels,
                c.out_channels,
                c.out_channels / 4,
                c.kernel,
                c.stride,
            )),
            BlockKind::Transformer => Inner::Transformer(TransformerStage::new(
                c.in_channels,
                c.out_channels,
                c.stride,
                c.sr_ratio,
            )?),
            BlockKind::MixA | BlockKind::MixB | BlockKind::MixC => Inner::Mix(MixBlock::new(
                c.kind,
                c.in_channels,
                c.branch_widths().unwrap(),
                c.stride,
                c.sr_ratio,
                c.kernel,
            )?),
        };
        Ok(Self { config, inner })
    }

    pub fn config(&self) -> &BlockConfig {
        &self.config
    }

    pub fn kind(&self) -> BlockKind {
        self.config.kind
    }

    pub fn trace(&self, h: usize, w: usize) -> Result<Vec<TraceEntry>> {
        self.config.trace(h, w)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 || x.dim(1) != self.config.in_channels {
            return Err(Error::Shape {
                op: "block",
                lhs: x.shape().to_vec(),
                rhs: vec![0, self.config.in_channels, 0, 0],
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        match &self.inner {
            Inner::Conv(l) => l.forward_relu(x, counter),
            Inner::MaxPool(p) => p.forward(x).map(|(y, _)| y),
            Inner::BottleNeck(b) => b.forward(x, counter),
            Inner::Transformer(t) => t.forward(x, counter),
            Inner::Mix(m) => m.forward(x, counter),
        }
    }

    /// Forward pass that keeps intermediates; works at any precision.
    pub fn forward_cached(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, BlockCache<T>)> {
        self.check_input(x)?;
        Ok(match &self.inner {
            Inner::Conv(l) => {
                let (y, c) = l.forward_relu_cached(x, counter)?;
                (y, BlockCache::Conv(c))
            }
            Inner::MaxPool(p) => {
                let (y, argmax) = p.forward(x)?;
                (
                    y,
                    BlockCache::MaxPool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                )
            }
            Inner::BottleNeck(b) => {
                let (y, c) = b.forward_cached(x, counter)?;
                (y, BlockCache::BottleNeck(c))
            }
            Inner::Transformer(t) => {
                let (y, c) = t.forward_cached(x, counter)?;
                (y, BlockCache::Transformer(c))
            }
            Inner::Mix(m) => {
                let (y, c) = m.forward_cached(x, counter)?;
                (y, BlockCache::Mix(c))
            }
        })
    }

    pub fn backward(&self, cache: &BlockCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        require_f64::<T>()?;
        match (&self.inner, cache) {
            (Inner::Conv(l), BlockCache::Conv(c)) => l.backward_relu(c, dy, grads),
            (Inner::MaxPool(p), BlockCache::MaxPool { input_shape, argmax }) => p.backward(input_shape, argmax, dy),
            (Inner::BottleNeck(b), BlockCache::BottleNeck(c)) => b.backward(c, dy, grads),
            (Inner::Transformer(t), BlockCache::Transformer(c)) => t.backward(c, dy, grads),
            (Inner::Mix(m), BlockCache::Mix(c)) => m.backward(c, dy, grads),
            _ => Err(Error::invalid(
                "block backward",
                "cache was produced by a different block kind",
            )),
        }
    }
}

impl<T: Scalar> Params<T> for Block<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        match &self.inner {
            Inner::Conv(l) => l.visit(prefix, f),
            Inner::MaxPool(_) => {}
            Inner::BottleNeck(b) => b.visit(prefix, f),
            Inner::Transformer(t) => t.visit(prefix, f),
            Inner::Mix(m) => m.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        match &mut self.inner {
            Inner::Conv(l) => l.visit_mut(prefix, f),
            Inner::MaxPool(_) => {}
            Inner::BottleNeck(b) => b.visit_mut(prefix, f),
            Inner::Transformer(t) => t.visit_mut(prefix, f),
            Inner::Mix(m) => m.visit_mut(prefix, f),
        }
    }
}

impl<T: Scalar> Differentiable<T> for Block<T> {
    type Cache = BlockCache<T>;

    fn forward_train(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<(Tensor<T>, BlockCache<T>)> {
        require_f64::<T>()?;
        self.forward_cached(x, counter)
    }

    fn backward(&self, cache: &BlockCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        Block::backward(self, cache, dy, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, randomize_params, GradcheckConfig};
    use crate::nn::Activation;
    use crate::tensor::{rand_normal, Rng};

    fn tiny_configs() -> Vec<BlockConfig> {
        vec![
            BlockConfig::conv(16, 32, 3, 2),
            BlockConfig::maxpool(16, 2),
            BlockConfig::bottleneck(64, 64, 1, 3),
            BlockConfig::bottleneck(32, 64, 2, 3),
            BlockConfig::transformer(64, 64, 1, 1),
            BlockConfig::transformer(32, 64, 2, 2),
            BlockConfig::mix(BlockKind::MixA, 64, 64, 1, 0.5, 1, 3),
            BlockConfig::mix(BlockKind::MixB, 64, 64, 1, 0.5, 1, 3),
            BlockConfig::mix(BlockKind::MixC, 64, 64, 1, 0.5, 1, 3),
            BlockConfig::mix(BlockKind::MixC, 32, 64, 2, 0.5, 2, 3),
        ]
    }

    #[test]
    fn output_shapes_follow_config() {
        for cfg in tiny_configs() {
            for hw in [8, 14] {
                let block = Block::<f32>::new(cfg.clone(), "b").unwrap();
                let x = Tensor::zeros(&[2, cfg.in_channels, hw, hw]);
                let y = block.forward(&x, None).unwrap();
                let (ho, wo) = cfg.output_hw(hw, hw).unwrap();
                assert_eq!(y.shape(), &[2, cfg.out_channels, ho, wo], "{cfg:?}");
                let traced = block.trace(hw, hw).unwrap().last().unwrap().op.output();
                assert_eq!(traced, [cfg.out_channels, ho, wo]);
            }
        }
    }

    #[test]
    fn identity_wired_bottleneck() {
        let mut b = BottleNeck::<f64>::new(4, 4, 4, 3, 1);
        b.reduce.conv.weight = Tensor::eye(4).reshape(&[4, 4, 1, 1]).unwrap();
        b.expand.conv.weight = Tensor::eye(4).reshape(&[4, 4, 1, 1]).unwrap();
        for c in 0..4 {
            b.spatial.conv.weight.data_mut()[(c * 4 + c) * 9 + 4] = 1.0;
        }
        for cb in [&mut b.reduce, &mut b.spatial, &mut b.expand] {
            cb.bn.eps = 0.0;
        }
        let x: Tensor<f64> = rand_normal(&mut Rng::new(1), &[1, 4, 5, 5], 1.0);
        let y = b.forward(&x, None).unwrap();
        let want = Activation::Relu.forward(&x).add(&x).unwrap();
        assert!(y.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn rejects_bad_widths_with_path() {
        let err = Block::<f32>::new(BlockConfig::mix(BlockKind::MixC, 48, 48, 1, 0.5, 1, 3), "stage5.0").unwrap_err();
        assert!(err.to_string().contains("stage5.0"), "{err}");
        assert!(Block::<f32>::new(BlockConfig::mix(BlockKind::MixB, 64, 64, 1, 0.25, 1, 3), "x").is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = BlockConfig::mix(BlockKind::MixA, 64, 64, 1, 0.5, 1, 3);
        let run = || {
            let mut rng = Rng::new(3);
            let mut b = Block::<f64>::new(cfg.clone(), "").unwrap();
            randomize_params(&mut b, &mut rng);
            let x = rand_normal(&mut rng, &[1, 64, 8, 8], 1.0);
            b.forward(&x, None).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn every_block_passes_gradcheck() {
        for cfg in tiny_configs() {
            let mut rng = Rng::new(11);
            let mut b = Block::<f64>::new(cfg.clone(), "").unwrap();
            randomize_params(&mut b, &mut rng);
            let x = rand_normal(&mut rng, &[1, cfg.in_channels, 8, 8], 1.0);
            let report = gradcheck(&mut b, &x, &GradcheckConfig::default()).unwrap();
            assert!(report.pass, "{cfg:?}: {report}");
        }
    }

    #[test]
    fn f32_backward_is_rejected() {
        let b = Block::<f32>::new(BlockConfig::bottleneck(8, 8, 1, 3), "").unwrap();
        let x = Tensor::zeros(&[1, 8, 4, 4]);
        assert!(matches!(b.forward_train(&x, None), Err(Error::Precision(_))));
    }
}
