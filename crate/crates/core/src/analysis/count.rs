use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::arch::ArchSpec;
use crate::blocks::{BlockConfig, OpDesc, OpKind};
use crate::error::{Error, Result};

/// Trainable parameters and multiply-accumulates of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: u64,
    pub flops: u64,
}

impl Cost {
    pub const ZERO: Cost = Cost { params: 0, flops: 0 };

    pub fn new(params: u64, flops: u64) -> Self {
        Self { params, flops }
    }

    /// Params in thousands.
    pub fn params_k(&self) -> f64 {
        self.params as f64 / 1e3
    }

    pub fn params_m(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn flops_m(&self) -> f64 {
        self.flops as f64 / 1e6
    }

    pub fn flops_g(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        Cost::new(self.params + rhs.params, self.flops + rhs.flops)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        *self = *self + rhs;
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

/// Closed-form cost of one primitive op. One multiply-accumulate counts as
/// one FLOP; norms, activations, pooling, softmax and adds are free.
pub fn count_op(op: &OpDesc) -> Cost {
    let [c, h, w] = op.input.map(|v| v as u64);
    let n = h * w;
    let [_, ho, wo] = op.output().map(|v| v as u64);
    match op.kind {
        OpKind::Conv { out, kernel, bias, .. } => {
            let (out, k2) = (out as u64, (kernel * kernel) as u64);
            Cost::new(c * out * k2 + if bias { out } else { 0 }, ho * wo * out * c * k2)
        }
        OpKind::Linear { out, bias } => {
            let out = out as u64;
            Cost::new(c * out + if bias { out } else { 0 }, n * c * out)
        }
        OpKind::Attention { sr } => {
            let s = sr as u64;
            let nk = if s > 1 { (h / s) * (w / s) } else { n };
            // q, k, v and output projections, all with bias
            let mut cost = Cost::new(4 * (c * c + c), 2 * n * c * c + 2 * nk * c * c);
            // scores and weighted sum
            cost.flops += 2 * n * nk * c;
            if s > 1 {
                // reduction conv (k = stride = S, bias) and its LayerNorm
                cost += Cost::new(c * c * s * s + c + 2 * c, nk * c * c * s * s);
            }
            cost
        }
        OpKind::BatchNorm | OpKind::LayerNorm => Cost::new(2 * c, 0),
        OpKind::Act(_)
        | OpKind::AvgPool { .. }
        | OpKind::MaxPool { .. }
        | OpKind::Split { .. }
        | OpKind::Concat { .. }
        | OpKind::Add => Cost::ZERO,
    }
}

/// Hierarchical cost breakdown. Leaves are primitive ops; every inner node
/// holds exactly the sum of its children.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub path: String,
    pub kind: String,
    pub cost: Cost,
    /// Per-sample `C x H x W`.
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub children: Vec<CostReport>,
}

impl CostReport {
    fn leaf(path: String, op: &OpDesc) -> Self {
        Self {
            path,
            kind: op.name(),
            cost: count_op(op),
            input: op.input,
            output: op.output(),
            children: Vec::new(),
        }
    }

    /// Inner node whose cost is the sum of `children`.
    pub fn node(
        path: impl Into<String>,
        kind: impl Into<String>,
        input: [usize; 3],
        output: [usize; 3],
        children: Vec<CostReport>,
    ) -> Self {
        Self {
            path: path.into(),
            kind: kind.into(),
            cost: children.iter().map(|c| c.cost).sum(),
            input,
            output,
            children,
        }
    }

    pub fn params(&self) -> u64 {
        self.cost.params
    }

    pub fn flops(&self) -> u64 {
        self.cost.flops
    }

    pub fn find(&self, path: &str) -> Option<&CostReport> {
        if self.path == path {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(path))
    }

    /// Pre-order walk with depth.
    pub fn walk(&self, f: &mut dyn FnMut(usize, &CostReport)) {
        self.walk_at(0, f);
    }

    fn walk_at(&self, depth: usize, f: &mut dyn FnMut(usize, &CostReport)) {
        f(depth, self);
        for c in &self.children {
            c.walk_at(depth + 1, f);
        }
    }

    /// Whether every inner node equals the sum of its children.
    pub fn is_additive(&self) -> bool {
        self.children.is_empty()
            || (self.children.iter().map(|c| c.cost).sum::<Cost>() == self.cost
                && self.children.iter().all(CostReport::is_additive))
    }
}

/// Cost of one block on a `C_in x h x w` input; children are the block's
/// traced ops, with paths under `path`.
pub fn count_block(cfg: &BlockConfig, h: usize, w: usize, path: &str) -> Result<CostReport> {
    let trace = cfg.trace(h, w).map_err(|e| match e {
        Error::Config { msg, .. } => Error::config(path, msg),
        e => e,
    })?;
    let output = trace.last().map(|e| e.op.output()).unwrap_or([cfg.in_channels, h, w]);
    let children = trace
        .iter()
        .map(|e| CostReport::leaf(crate::nn::join(path, &e.path), &e.op))
        .collect();
    Ok(CostReport::node(
        path,
        cfg.kind.name(),
        [cfg.in_channels, h, w],
        output,
        children,
    ))
}

/// Cost of a whole network at a square `resolution`: stem and stages, then
/// the classifier head. The root path is the spec name.
pub fn count_model(spec: &ArchSpec, resolution: usize) -> Result<CostReport> {
    crate::arch::check_resolution(resolution)?;
    spec.validate()?;
    let mut shape = [3, resolution, resolution];
    let mut stages = Vec::new();
    for (stage, cfgs) in spec.block_configs() {
        let stage_in = shape;
        let mut blocks = Vec::new();
        for (i, cfg) in cfgs.into_iter().enumerate() {
            let r = count_block(&cfg, shape[1], shape[2], &format!("{}.{i}", stage.name))?;
            shape = r.output;
            blocks.push(r);
        }
        stages.push(CostReport::node(stage.name.clone(), "stage", stage_in, shape, blocks));
    }
    let c = shape[0];
    let head_ops = [
        OpDesc {
            kind: OpKind::AvgPool {
                kernel: shape[1],
                stride: shape[1].max(1),
            },
            input: shape,
        },
        OpDesc {
            kind: OpKind::Linear {
                out: spec.num_classes,
                bias: true,
            },
            input: [c, 1, 1],
        },
    ];
    let head_children = vec![
        CostReport::leaf("head.pool".into(), &head_ops[0]),
        CostReport::leaf("head.fc".into(), &head_ops[1]),
    ];
    stages.push(CostReport::node(
        "head",
        "head",
        shape,
        [spec.num_classes, 1, 1],
        head_children,
    ));
    Ok(CostReport::node(
        spec.name.clone(),
        "model",
        [3, resolution, resolution],
        [spec.num_classes, 1, 1],
        stages,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;

    #[test]
    fn pointwise_unit_conv() {
        let op = OpDesc {
            kind: OpKind::Conv {
                out: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                bias: false,
            },
            input: [1, 1, 1],
        };
        assert_eq!(count_op(&op), Cost::new(1, 1));
    }

    #[test]
    fn bottleneck_closed_form() {
        let r = count_block(&BlockConfig::bottleneck(256, 256, 1, 3), 56, 56, "b").unwrap();
        let convs = 256 * 64 + 64 * 64 * 9 + 64 * 256;
        assert_eq!(r.flops(), 3136 * convs);
        // conv weights plus two scalars per BatchNorm channel
        assert_eq!(r.params(), convs + 2 * (64 + 64 + 256));
        assert!(r.is_additive());
    }

    #[test]
    fn projection_shortcut_is_counted() {
        let plain = count_block(&BlockConfig::bottleneck(64, 64, 1, 3), 8, 8, "").unwrap();
        let strided = count_block(&BlockConfig::bottleneck(64, 64, 2, 3), 8, 8, "").unwrap();
        assert!(strided.find("shortcut.conv").is_some());
        assert_eq!(strided.params(), plain.params() + 64 * 64 + 2 * 64);
    }

    #[test]
    fn mixb_and_mixc_cost_the_same() {
        for (c, hw) in [(256, 56), (2048, 7)] {
            let b = BlockConfig::mix(BlockKind::MixB, c, c, 1, 0.5, 1, 3);
            let cc = BlockConfig {
                kind: BlockKind::MixC,
                ..b.clone()
            };
            assert_eq!(
                count_block(&b, hw, hw, "").unwrap().cost,
                count_block(&cc, hw, hw, "").unwrap().cost
            );
        }
    }

    #[test]
    fn reduced_attention_is_cheaper() {
        let at = |sr| OpDesc {
            kind: OpKind::Attention { sr },
            input: [64, 16, 16],
        };
        let (full, reduced) = (count_op(&at(1)), count_op(&at(2)));
        assert!(reduced.flops < full.flops);
        assert_eq!(reduced.params, full.params + 64 * 64 * 4 + 64 + 128);
    }
}
