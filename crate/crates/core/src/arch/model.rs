use crate::blocks::Block;
use crate::error::{Error, Result};
use crate::nn::{global_avgpool, join, Linear, ParamKind, Params};
use crate::tensor::{rand_normal, trunc_normal, MacCounter, Rng, Scalar, Tensor};

use super::ArchSpec;

/// Std of the truncated normal used for linear and attention weights.
pub const LINEAR_INIT_STD: f64 = 0.02;

/// Standard initialisation: conv weights `N(0, 2 / fan_out)`, linear and
/// attention weights truncated normal with std 0.02, biases zero and
/// norms identity (the constructors' defaults, left untouched).
pub fn init_weights<T: Scalar, M: Params<T>>(module: &mut M, rng: &mut Rng) {
    module.visit_mut("", &mut |path, kind, t| {
        if kind != ParamKind::Weight || !path.ends_with("weight") {
            return;
        }
        match t.rank() {
            4 => {
                let fan_out = t.dim(0) * t.dim(2) * t.dim(3);
                *t = rand_normal(rng, t.shape(), (2.0 / fan_out as f64).sqrt());
            }
            2 => *t = trunc_normal(rng, t.shape(), LINEAR_INIT_STD),
            _ => {}
        }
    });
}

#[derive(Clone, Debug)]
struct Stage<T: Scalar> {
    name: String,
    blocks: Vec<Block<T>>,
}

/// An instantiated network: stem, five stages and a pooled linear head.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    spec: ArchSpec,
    stages: Vec<Stage<T>>,
    head: Linear<T>,
}

/// Output of every stage (stem first) plus the logits.
#[derive(Clone, Debug)]
pub struct Features<T: Scalar> {
    pub stages: Vec<(String, Tensor<T>)>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds every block with identity norms and zero weights.
    pub fn zeroed(spec: &ArchSpec) -> Result<Self> {
        spec.validate()?;
        let stages = spec
            .block_configs()
            .into_iter()
            .map(|(stage, cfgs)| {
                let blocks = cfgs
                    .into_iter()
                    .enumerate()
                    .map(|(i, cfg)| Block::new(cfg, &format!("{}.{i}", stage.name)))
                    .collect::<Result<_>>()?;
                Ok(Stage {
                    name: stage.name.clone(),
                    blocks,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            stages,
            head: Linear::new(spec.final_channels(), spec.num_classes, true),
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn head_mut(&mut self) -> &mut Linear<T> {
        &mut self.head
    }

    pub fn blocks(&self) -> impl Iterator<Item = (String, &Block<T>)> {
        self.stages.iter().flat_map(|s| {
            s.blocks
                .iter()
                .enumerate()
                .map(move |(i, b)| (format!("{}.{i}", s.name), b))
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 || x.dim(1) != 3 {
            return Err(Error::Shape {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: vec![0, 3, 0, 0],
            });
        }
        for d in [x.dim(2), x.dim(3)] {
            super::check_resolution(d)?;
        }
        Ok(())
    }

    pub fn forward_features(&self, x: &Tensor<T>, counter: Option<&MacCounter>) -> Result<Features<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for b in &stage.blocks {
                h = b.forward(&h, counter)?;
            }
            outs.push((stage.name.clone(), h.clone()));
        }
        let pooled = global_avgpool(&h)?;
        let logits = self.head.forward(&pooled, counter)?;
        Ok(Features { stages: outs, logits })
    }

    /// `B x 3 x H x W` images to `B x classes` logits.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_features(x, None)?.logits)
    }
}

impl<T: Scalar> Params<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &Tensor<T>)) {
        for s in &self.stages {
            s.blocks.visit(&join(prefix, &s.name), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut Tensor<T>)) {
        for s in &mut self.stages {
            s.blocks.visit_mut(&join(prefix, &s.name), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Validates `spec`, builds it and initialises the weights from `rng`.
pub fn instantiate<T: Scalar>(spec: &ArchSpec, rng: &mut Rng) -> Result<Model<T>> {
    let mut model = Model::zeroed(spec)?;
    init_weights(&mut model, rng);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::count_model;
    use crate::arch::{preset, ArchSpec, BlockSpec};

    fn small() -> ArchSpec {
        let mut s = ArchSpec::empty("small");
        s.stem.blocks.push(BlockSpec::conv(32, 3, 2));
        s.stages[1].blocks.push(BlockSpec::bottleneck(32, 2));
        s.stages[2].blocks.push(BlockSpec::bottleneck(64, 2));
        s.stages[3]
            .blocks
            .push(BlockSpec::mix(crate::blocks::BlockKind::MixC, 64, 2, 0.5, 1, 3));
        s.stages[4].blocks.push(BlockSpec::transformer(64, 2, 1));
        s.num_classes = 10;
        s
    }

    #[test]
    fn params_and_macs_match_the_cost_model() {
        let spec = small();
        let m: Model = instantiate(&spec, &mut Rng::new(0)).unwrap();
        let cost = count_model(&spec, 64).unwrap();
        assert_eq!(m.num_params() as u64, cost.params());
        let counter = MacCounter::new();
        let x = Tensor::zeros(&[2, 3, 64, 64]);
        let f = m.forward_features(&x, Some(&counter)).unwrap();
        assert_eq!(counter.total(), 2 * cost.flops());
        assert_eq!(f.logits.shape(), &[2, 10]);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut m: Model = instantiate(&small(), &mut Rng::new(1)).unwrap();
        let head = m.head_mut();
        head.weight = Tensor::zeros(head.weight.shape());
        let y = m.forward(&Tensor::zeros(&[1, 3, 32, 32])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let m: Model = instantiate(&small(), &mut Rng::new(2)).unwrap();
        let x: Tensor = rand_normal(&mut Rng::new(3), &[2, 3, 32, 32], 1.0);
        let both = m.forward(&x).unwrap();
        for b in 0..2 {
            let one = Tensor::new(&[1, 3, 32, 32], x.data()[b * 3072..(b + 1) * 3072].to_vec()).unwrap();
            let y = m.forward(&one).unwrap();
            assert_eq!(y.data(), &both.data()[b * 10..(b + 1) * 10]);
        }
    }

    #[test]
    fn rejects_bad_resolution() {
        let m: Model = Model::zeroed(&small()).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 3, 40, 40])).is_err());
        assert!(m.forward(&Tensor::zeros(&[1, 4, 32, 32])).is_err());
    }

    #[test]
    fn init_statistics() {
        let m: Model<f64> = instantiate(&preset("resnet50").unwrap(), &mut Rng::new(5)).unwrap();
        let mut seen = 0;
        m.visit("", &mut |path, _, t| {
            let n = t.numel() as f64;
            let std = (t.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            if path == "head.weight" {
                // truncation at two sigma shrinks the std by about 12%
                assert!((std - 0.0176).abs() < 0.001, "{std}");
                assert!(t.data().iter().all(|v| v.abs() <= 0.04));
                seen += 1;
            } else if path == "stage5.0.reduce.conv.weight" {
                let want = (2.0 / (512.0f64)).sqrt();
                assert!((std / want - 1.0).abs() < 0.05, "{std} vs {want}");
                seen += 1;
            } else if path.ends_with("gamma") || path.ends_with("running_var") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else if path.ends_with("beta") || path.ends_with("bias") || path.ends_with("running_mean") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        });
        assert_eq!(seen, 2);
    }
}
