use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{Activation, HEAD_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    /// `K x K` convolution + BatchNorm + ReLU.
    Conv,
    /// 3x3 max pooling with padding 1.
    MaxPool,
    BottleNeck,
    /// Token-level Transformer block on the flattened map.
    Transformer,
    /// Parallel: projection, channel split, Transformer and BottleNeck branches.
    MixA,
    /// Sequential, local then global: BottleNeck, then Transformer.
    MixB,
    /// Sequential, global then local: Transformer, then BottleNeck.
    MixC,
}

impl BlockKind {
    pub const ALL: [BlockKind; 7] = [
        BlockKind::Conv,
        BlockKind::MaxPool,
        BlockKind::BottleNeck,
        BlockKind::Transformer,
        BlockKind::MixA,
        BlockKind::MixB,
        BlockKind::MixC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Conv => "conv",
            BlockKind::MaxPool => "maxpool",
            BlockKind::BottleNeck => "bottleneck",
            BlockKind::Transformer => "transformer",
            BlockKind::MixA => "mixa",
            BlockKind::MixB => "mixb",
            BlockKind::MixC => "mixc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    pub fn is_mix(self) -> bool {
        matches!(self, BlockKind::MixA | BlockKind::MixB | BlockKind::MixC)
    }

    /// Contains an attention layer.
    pub fn has_attention(self) -> bool {
        self.is_mix() || self == BlockKind::Transformer
    }

    pub fn is_pooling(self) -> bool {
        self == BlockKind::MaxPool
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to build a block and to count its cost without weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Spatial kernel of convs, max-pools and the local branch of mix blocks.
    pub kernel: usize,
    /// Share of output channels produced by the Transformer part (mix blocks).
    pub shrink: Option<f64>,
    /// Key/value spatial reduction inside attention.
    pub sr_ratio: usize,
}

impl BlockConfig {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind: BlockKind::Conv,
            in_channels,
            out_channels,
            stride,
            kernel,
            shrink: None,
            sr_ratio: 1,
        }
    }

    pub fn maxpool(channels: usize, stride: usize) -> Self {
        Self {
            kernel: 3,
            kind: BlockKind::MaxPool,
            ..Self::conv(channels, channels, 3, stride)
        }
    }

    pub fn bottleneck(in_channels: usize, out_channels: usize, stride: usize, kernel: usize) -> Self {
        Self {
            kind: BlockKind::BottleNeck,
            ..Self::conv(in_channels, out_channels, kernel, stride)
        }
    }

    pub fn transformer(in_channels: usize, channels: usize, stride: usize, sr_ratio: usize) -> Self {
        Self {
            kind: BlockKind::Transformer,
            sr_ratio,
            ..Self::conv(in_channels, channels, 1, stride)
        }
    }

    pub fn mix(
        kind: BlockKind,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        shrink: f64,
        sr_ratio: usize,
        kernel: usize,
    ) -> Self {
        assert!(kind.is_mix(), "{kind} is not a mix block");
        Self {
            kind,
            in_channels,
            out_channels,
            stride,
            kernel,
            shrink: Some(shrink),
            sr_ratio,
        }
    }

    /// `(transformer width, bottleneck width)` of a mix block.
    pub fn branch_widths(&self) -> Option<(usize, usize)> {
        let r = self.shrink?;
        let t = (r * self.out_channels as f64).round() as usize;
        Some((t, self.out_channels.saturating_sub(t)))
    }

    /// Block-level identity shortcut around a mix block.
    pub fn has_residual(&self) -> bool {
        self.kind.is_mix() && self.stride == 1 && self.in_channels == self.out_channels
    }

    /// Structural problems; empty when the block can be built.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.in_channels == 0 || self.out_channels == 0 {
            out.push("channel counts must be positive".to_string());
        }
        if !matches!(self.stride, 1 | 2) {
            out.push(format!("stride {} is not 1 or 2", self.stride));
        }
        if self.kernel == 0 {
            out.push("kernel must be positive".to_string());
        }
        if self.kind.is_mix() != self.shrink.is_some() {
            out.push(if self.kind.is_mix() {
                format!("{} needs a shrinking ratio", self.kind)
            } else {
                format!("{} takes no shrinking ratio", self.kind)
            });
        }
        if self.kind.has_attention() && self.sr_ratio == 0 {
            out.push("spatial reduction ratio must be at least 1".to_string());
        }
        match self.kind {
            BlockKind::MaxPool if self.in_channels != self.out_channels => {
                out.push("max-pool cannot change the channel count".to_string())
            }
            BlockKind::BottleNeck if self.out_channels % 4 != 0 => {
                out.push(format!("bottleneck width {} is not divisible by 4", self.out_channels))
            }
            BlockKind::Transformer if self.out_channels % HEAD_DIM != 0 => out.push(format!(
                "transformer width {} is not divisible by the head dim {HEAD_DIM}",
                self.out_channels
            )),
            _ => {}
        }
        if let Some(r) = self.shrink {
            if !(r > 0.0 && r < 1.0) {
                out.push(format!("shrinking ratio {r} is outside (0, 1)"));
            } else {
                let exact = r * self.out_channels as f64;
                let (t, b) = self.branch_widths().unwrap();
                if (exact - t as f64).abs() > 1e-9 {
                    out.push(format!("R*C_out = {exact} is not a whole channel count"));
                } else if t % HEAD_DIM != 0 {
                    out.push(format!(
                        "transformer branch width {t} is not divisible by the head dim {HEAD_DIM}"
                    ));
                }
                if b == 0 || b % 4 != 0 {
                    out.push(format!("bottleneck branch width {b} is not a positive multiple of 4"));
                }
            }
            if self.kind == BlockKind::MixB && r != 0.5 {
                out.push(format!("mixb requires R = 0.5 (equal branch widths), got {r}"));
            }
        }
        out
    }

    pub fn check(&self, path: &str) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(path, problems.join("; ")))
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let conv = |k: usize, pad: usize| crate::nn::conv_output_hw(h, w, k, self.stride, pad);
        match self.kind {
            BlockKind::Conv | BlockKind::BottleNeck => conv(self.kernel, self.kernel / 2),
            BlockKind::MaxPool => conv(3, 1),
            _ => conv(self.stride, 0),
        }
    }

    /// Ordered primitive ops executed by the block on a `C_in x h x w` input.
    pub fn trace(&self, h: usize, w: usize) -> Result<Vec<TraceEntry>> {
        self.check("")?;
        let mut t = Tracer::default();
        let c_in = self.in_channels;
        match self.kind {
            BlockKind::Conv => {
                let s = t.conv("conv", [c_in, h, w], self.out_channels, self.kernel, self.stride)?;
                let s = t.push("bn", OpKind::BatchNorm, s);
                t.push("relu", OpKind::Act(Activation::Relu), s);
            }
            BlockKind::MaxPool => {
                t.push(
                    "pool",
                    OpKind::MaxPool {
                        kernel: 3,
                        stride: self.stride,
                        padding: 1,
                    },
                    [c_in, h, w],
                );
            }
            BlockKind::BottleNeck => {
                bottleneck_trace(
                    &mut t,
                    "",
                    [c_in, h, w],
                    self.out_channels,
                    self.out_channels / 4,
                    self.kernel,
                    self.stride,
                )?;
            }
            BlockKind::Transformer => {
                let mut s = [c_in, h, w];
                if self.stride == 2 {
                    s = t.push("pool", OpKind::AvgPool { kernel: 2, stride: 2 }, s);
                }
                if c_in != self.out_channels {
                    s = t.conv("entry.conv", s, self.out_channels, 1, 1)?;
                    s = t.push("entry.bn", OpKind::BatchNorm, s);
                }
                transformer_trace(&mut t, "block", s, self.sr_ratio)?;
            }
            BlockKind::MixA | BlockKind::MixB | BlockKind::MixC => {
                let (tw, bw) = self.branch_widths().unwrap();
                let mut s = [c_in, h, w];
                if self.stride == 2 {
                    s = t.push("pool", OpKind::AvgPool { kernel: 2, stride: 2 }, s);
                }
                let proj_out = if self.kind == BlockKind::MixA {
                    self.out_channels
                } else {
                    tw
                };
                s = t.conv("proj.conv", s, proj_out, 1, 1)?;
                s = t.push("proj.bn", OpKind::BatchNorm, s);
                let [_, ph, pw] = s;
                match self.kind {
                    BlockKind::MixA => {
                        t.push("split", OpKind::Split { at: tw }, s);
                        transformer_trace(&mut t, "transformer", [tw, ph, pw], self.sr_ratio)?;
                        bottleneck_trace(&mut t, "bottleneck", [bw, ph, pw], bw, bw / 4, self.kernel, 1)?;
                    }
                    BlockKind::MixB => {
                        let b = bottleneck_trace(&mut t, "bottleneck", s, bw, bw / 4, self.kernel, 1)?;
                        transformer_trace(&mut t, "transformer", b, self.sr_ratio)?;
                    }
                    _ => {
                        let g = transformer_trace(&mut t, "transformer", s, self.sr_ratio)?;
                        bottleneck_trace(&mut t, "bottleneck", g, bw, bw / 4, self.kernel, 1)?;
                    }
                }
                let first = if self.kind == BlockKind::MixB { bw } else { tw };
                let out = t.push(
                    "concat",
                    OpKind::Concat {
                        other: self.out_channels - first,
                    },
                    [first, ph, pw],
                );
                if self.has_residual() {
                    t.push("residual", OpKind::Add, out);
                }
            }
        }
        Ok(t.ops)
    }
}

fn bottleneck_trace(
    t: &mut Tracer,
    prefix: &str,
    input: [usize; 3],
    out: usize,
    mid: usize,
    kernel: usize,
    stride: usize,
) -> Result<[usize; 3]> {
    let p = |n: &str| {
        if prefix.is_empty() {
            n.to_string()
        } else {
            format!("{prefix}.{n}")
        }
    };
    let mut s = input;
    for (name, c, k, st) in [
        ("reduce", mid, 1, 1),
        ("spatial", mid, kernel, stride),
        ("expand", out, 1, 1),
    ] {
        s = t.conv(&p(&format!("{name}.conv")), s, c, k, st)?;
        s = t.push(&p(&format!("{name}.bn")), OpKind::BatchNorm, s);
        s = t.push(&p(&format!("{name}.relu")), OpKind::Act(Activation::Relu), s);
    }
    if stride != 1 || input[0] != out {
        let sc = t.conv(&p("shortcut.conv"), input, out, 1, stride)?;
        t.push(&p("shortcut.bn"), OpKind::BatchNorm, sc);
    }
    Ok(t.push(&p("add"), OpKind::Add, s))
}

fn transformer_trace(t: &mut Tracer, prefix: &str, input: [usize; 3], sr: usize) -> Result<[usize; 3]> {
    let [c, h, w] = input;
    if c % HEAD_DIM != 0 {
        return Err(Error::invalid(
            "trace",
            format!("attention width {c} is not divisible by {HEAD_DIM}"),
        ));
    }
    if h < sr || w < sr {
        return Err(Error::invalid(
            "trace",
            format!("spatial reduction {sr} does not fit a {h}x{w} token grid"),
        ));
    }
    let p = |n: &str| format!("{prefix}.{n}");
    let s = t.push(&p("norm1"), OpKind::LayerNorm, input);
    let s = t.push(&p("attn"), OpKind::Attention { sr }, s);
    let s = t.push(&p("add1"), OpKind::Add, s);
    let s = t.push(&p("norm2"), OpKind::LayerNorm, s);
    let s = t.push(&p("fc1"), OpKind::Linear { out: 3 * c, bias: true }, s);
    let s = t.push(&p("gelu"), OpKind::Act(Activation::Gelu), s);
    let s = t.push(&p("fc2"), OpKind::Linear { out: c, bias: true }, s);
    Ok(t.push(&p("add2"), OpKind::Add, s))
}

#[derive(Default)]
struct Tracer {
    ops: Vec<TraceEntry>,
}

impl Tracer {
    fn push(&mut self, path: &str, kind: OpKind, input: [usize; 3]) -> [usize; 3] {
        let op = OpDesc { kind, input };
        let out = op.output();
        self.ops.push(TraceEntry {
            path: path.to_string(),
            op,
        });
        out
    }

    fn conv(&mut self, path: &str, input: [usize; 3], out: usize, kernel: usize, stride: usize) -> Result<[usize; 3]> {
        crate::nn::conv_output_hw(input[1], input[2], kernel, stride, kernel / 2)?;
        Ok(self.push(
            path,
            OpKind::Conv {
                out,
                kernel,
                stride,
                padding: kernel / 2,
                bias: false,
            },
            input,
        ))
    }
}

/// One primitive op with its per-sample `C x H x W` input. Token tensors use
/// `C x H x W` too, with `H*W` tokens of width `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpDesc {
    pub kind: OpKind,
    pub input: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm,
    LayerNorm,
    Linear {
        out: usize,
        bias: bool,
    },
    /// Spatial-reduction multi-head attention, projections included.
    Attention {
        sr: usize,
    },
    Act(Activation),
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Channel split; both parts continue, so the output shape is the input's.
    Split {
        at: usize,
    },
    /// Appends `other` channels to the input.
    Concat {
        other: usize,
    },
    /// Residual addition.
    Add,
}

impl OpDesc {
    pub fn output(&self) -> [usize; 3] {
        let [c, h, w] = self.input;
        let spatial = |k: usize, s: usize, p: usize| ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
        match self.kind {
            OpKind::Conv {
                out,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (ho, wo) = spatial(kernel, stride, padding);
                [out, ho, wo]
            }
            OpKind::Linear { out, .. } => [out, h, w],
            OpKind::AvgPool { kernel, stride } => {
                let (ho, wo) = spatial(kernel, stride, 0);
                [c, ho, wo]
            }
            OpKind::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (ho, wo) = spatial(kernel, stride, padding);
                [c, ho, wo]
            }
            OpKind::Concat { other } => [c + other, h, w],
            _ => self.input,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            OpKind::Conv { kernel, stride, .. } => format!("conv{kernel}x{kernel}/s{stride}"),
            OpKind::BatchNorm => "batchnorm".into(),
            OpKind::LayerNorm => "layernorm".into(),
            OpKind::Linear { .. } => "linear".into(),
            OpKind::Attention { sr } => format!("attention/sr{sr}"),
            OpKind::Act(Activation::Relu) => "relu".into(),
            OpKind::Act(Activation::Gelu) => "gelu".into(),
            OpKind::AvgPool { kernel, .. } => format!("avgpool{kernel}x{kernel}"),
            OpKind::MaxPool { kernel, .. } => format!("maxpool{kernel}x{kernel}"),
            OpKind::Split { .. } => "split".into(),
            OpKind::Concat { .. } => "concat".into(),
            OpKind::Add => "add".into(),
        }
    }

    pub fn is_attention(&self) -> bool {
        matches!(self.kind, OpKind::Attention { .. })
    }

    /// Convolution with a spatial (`K > 1`) kernel.
    pub fn is_spatial_conv(&self) -> bool {
        matches!(self.kind, OpKind::Conv { kernel, .. } if kernel > 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    /// Dotted position inside the block, mirroring parameter paths.
    pub path: String,
    pub op: OpDesc,
}
