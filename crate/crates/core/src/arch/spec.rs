use crate::blocks::{BlockConfig, BlockKind};
use crate::error::{Error, Result, Violations};

/// Output resolution divisor expected after the stem and after each stage.
pub const STAGE_DIVISORS: [usize; 6] = [2, 2, 4, 8, 16, 32];

pub const STAGE_NAMES: [&str; 6] = ["stem", "stage1", "stage2", "stage3", "stage4", "stage5"];

/// One block as written in a spec; input channels follow from the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Ignored for max-pool, which keeps its input width.
    pub out_channels: usize,
    pub stride: usize,
    /// Shrinking ratio: share of the output produced by the Transformer part.
    pub shrink: Option<f64>,
    pub sr_ratio: Option<usize>,
    pub kernel: Option<usize>,
    /// Declared input width; when present it must match the chain.
    pub in_channels: Option<usize>,
}

impl BlockSpec {
    fn base(kind: BlockKind, out_channels: usize, stride: usize) -> Self {
        Self {
            kind,
            out_channels,
            stride,
            shrink: None,
            sr_ratio: None,
            kernel: None,
            in_channels: None,
        }
    }

    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kernel: Some(kernel),
            ..Self::base(BlockKind::Conv, out_channels, stride)
        }
    }

    pub fn maxpool(stride: usize) -> Self {
        Self::base(BlockKind::MaxPool, 0, stride)
    }

    pub fn bottleneck(out_channels: usize, stride: usize) -> Self {
        Self::base(BlockKind::BottleNeck, out_channels, stride)
    }

    pub fn transformer(channels: usize, stride: usize, sr_ratio: usize) -> Self {
        Self {
            sr_ratio: Some(sr_ratio),
            ..Self::base(BlockKind::Transformer, channels, stride)
        }
    }

    pub fn mix(
        kind: BlockKind,
        out_channels: usize,
        stride: usize,
        shrink: f64,
        sr_ratio: usize,
        kernel: usize,
    ) -> Self {
        Self {
            shrink: Some(shrink),
            sr_ratio: Some(sr_ratio),
            kernel: Some(kernel),
            ..Self::base(kind, out_channels, stride)
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn output_channels(&self, in_channels: usize) -> usize {
        if self.kind == BlockKind::MaxPool {
            in_channels
        } else {
            self.out_channels
        }
    }

    /// Resolves defaults (kernel 3, no reduction) against the input width.
    pub fn to_config(&self, in_channels: usize) -> BlockConfig {
        BlockConfig {
            kind: self.kind,
            in_channels,
            out_channels: self.output_channels(in_channels),
            stride: self.stride,
            kernel: self.kernel.unwrap_or(3),
            shrink: self.shrink,
            sr_ratio: self.sr_ratio.unwrap_or(1),
        }
    }

    fn option_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sr_ratio.is_some() && !self.kind.has_attention() {
            out.push(format!("{} takes no spatial reduction ratio", self.kind));
        }
        if self.kind == BlockKind::MaxPool && self.kernel.is_some_and(|k| k != 3) {
            out.push("max-pool kernel is fixed at 3".into());
        }
        if self.kind == BlockKind::Transformer && self.kernel.is_some() {
            out.push("transformer takes no kernel".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub name: String,
    /// Expected input-resolution divisor at the stage output.
    pub divisor: usize,
    pub blocks: Vec<BlockSpec>,
}

impl StageSpec {
    /// Blocks that count towards the stage depth (pooling excluded).
    pub fn depth(&self) -> usize {
        self.blocks.iter().filter(|b| !b.kind.is_pooling()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub stem: StageSpec,
    /// `stage1` to `stage5`.
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    /// Declared depths of stages 2 to 5, checked by [`ArchSpec::validate`].
    pub declared_depths: Option<[usize; 4]>,
}

impl ArchSpec {
    /// Empty skeleton with the six named stages.
    pub fn empty(name: impl Into<String>) -> Self {
        let mut stages: Vec<StageSpec> = STAGE_NAMES
            .iter()
            .zip(STAGE_DIVISORS)
            .map(|(n, d)| StageSpec {
                name: n.to_string(),
                divisor: d,
                blocks: Vec::new(),
            })
            .collect();
        let stem = stages.remove(0);
        Self {
            name: name.into(),
            stem,
            stages,
            num_classes: 1000,
            declared_depths: None,
        }
    }

    pub fn all_stages(&self) -> impl Iterator<Item = &StageSpec> {
        std::iter::once(&self.stem).chain(self.stages.iter())
    }

    pub fn stage(&self, name: &str) -> Option<&StageSpec> {
        self.all_stages().find(|s| s.name == name)
    }

    pub fn stage_mut(&mut self, name: &str) -> Option<&mut StageSpec> {
        std::iter::once(&mut self.stem)
            .chain(self.stages.iter_mut())
            .find(|s| s.name == name)
    }

    /// Depths of stages 2 to 5.
    pub fn stage_depths(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (o, s) in out.iter_mut().zip(self.stages.iter().skip(1)) {
            *o = s.depth();
        }
        out
    }

    /// Depth pattern as written in tables, e.g. `2-4-5-4`.
    pub fn depth_pattern(&self) -> String {
        self.stage_depths().map(|d| d.to_string()).join("-")
    }

    /// Per-stage block type of stages 2 to 5: `C` convolutional, `T`
    /// Transformer, `M` mixed; e.g. `C-C-C-M`.
    pub fn block_pattern(&self) -> String {
        self.stages
            .iter()
            .skip(1)
            .map(|s| {
                let kinds = s.blocks.iter().filter(|b| !b.kind.is_pooling()).map(|b| b.kind);
                let letters: Vec<char> = kinds
                    .map(|k| match k {
                        BlockKind::Transformer => 'T',
                        k if k.is_mix() => 'M',
                        _ => 'C',
                    })
                    .collect();
                // a stage is named after the block type that dominates it
                let count = |c: char| letters.iter().filter(|&&l| l == c).count();
                ['M', 'T', 'C']
                    .into_iter()
                    .max_by_key(|&c| (count(c), c == 'C'))
                    .unwrap_or('C')
                    .to_string()
            })
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Resolved block configs per stage, following the channel chain from
    /// the 3-channel input. Declared input widths are not consulted.
    pub fn block_configs(&self) -> Vec<(&StageSpec, Vec<BlockConfig>)> {
        let mut c = 3;
        self.all_stages()
            .map(|s| {
                let cfgs = s
                    .blocks
                    .iter()
                    .map(|b| {
                        let cfg = b.to_config(c);
                        c = cfg.out_channels;
                        cfg
                    })
                    .collect();
                (s, cfgs)
            })
            .collect()
    }

    /// Width entering the classifier.
    pub fn final_channels(&self) -> usize {
        self.block_configs()
            .iter()
            .flat_map(|(_, c)| c.last().map(|c| c.out_channels))
            .last()
            .unwrap_or(3)
    }

    pub fn violations(&self) -> Violations {
        let mut v = Violations::default();
        if self.num_classes == 0 {
            v.push("head", "num_classes must be positive");
        }
        if self.stages.len() != 5 {
            v.push(
                &self.name,
                format!("expected 5 stages after the stem, found {}", self.stages.len()),
            );
        }
        for (s, want) in self.all_stages().zip(STAGE_NAMES) {
            if s.name != want {
                v.push(&s.name, format!("stage out of order, expected {want}"));
            }
        }
        let mut c = 3;
        let mut divisor = 1;
        for (si, stage) in self.all_stages().enumerate() {
            let downsamples = si != 1;
            if stage.blocks.is_empty() && si != 1 {
                v.push(&stage.name, "stage has no blocks");
            }
            for (i, b) in stage.blocks.iter().enumerate() {
                let path = format!("{}.{i}", stage.name);
                let want = if downsamples && i == 0 { 2 } else { 1 };
                if b.stride != want {
                    v.push(
                        &path,
                        format!("stride {} where the stage layout requires {want}", b.stride),
                    );
                }
                if let Some(declared) = b.in_channels {
                    if declared != c {
                        v.push(
                            &path,
                            format!("declared input channels {declared} differ from the previous output {c}"),
                        );
                    }
                }
                let cfg = b.to_config(c);
                for p in b.option_problems().into_iter().chain(cfg.problems()) {
                    v.push(&path, p);
                }
                c = cfg.out_channels;
                divisor *= b.stride.max(1);
            }
            if divisor != stage.divisor {
                v.push(
                    &stage.name,
                    format!("output resolution is H/{divisor}, expected H/{}", stage.divisor),
                );
            }
        }
        if let Some(d) = self.declared_depths {
            let got = self.stage_depths();
            if got != d {
                v.push(
                    &self.name,
                    format!(
                        "stage depths {} differ from the declared {}",
                        join_dash(&got),
                        join_dash(&d)
                    ),
                );
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

fn join_dash(d: &[usize]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-")
}

/// Resolutions must be positive multiples of the total downsampling.
pub fn check_resolution(resolution: usize) -> Result<()> {
    if resolution == 0 || resolution % 32 != 0 {
        return Err(Error::invalid(
            "resolution",
            format!("{resolution} is not a positive multiple of 32"),
        ));
    }
    Ok(())
}
