use crate::blocks::BlockKind;
use crate::error::{Error, Result};

use super::{ArchSpec, BlockSpec};

pub const PRESET_NAMES: [&str; 17] = [
    "trt-vit-a",
    "trt-vit-b",
    "trt-vit-c",
    "trt-vit-d",
    "resnet50",
    "refined-resnet50",
    "mixnet-v",
    "refined-mixnet-v",
    "mixnet-a",
    "mixnet-b",
    "mixnet-c",
    "ablation-ccmm",
    "ablation-cmmm",
    "ratio-r25",
    "ratio-r50",
    "ratio-r75",
    "ratio-r100",
];

/// `n` copies of `block`, the first with stride 2.
fn downsampling_run(block: BlockSpec, n: usize) -> Vec<BlockSpec> {
    (0..n)
        .map(|i| block.clone().with_stride(if i == 0 { 2 } else { 1 }))
        .collect()
}

fn set_stage(spec: &mut ArchSpec, name: &str, blocks: Vec<BlockSpec>) {
    spec.stage_mut(name).expect("known stage").blocks = blocks;
}

/// Deep stem: 3x3/2 at 32 channels, then two stride-1 3x3 convs ending at 64.
fn trt_stem(spec: &mut ArchSpec) {
    set_stage(spec, "stem", vec![BlockSpec::conv(32, 3, 2)]);
    set_stage(
        spec,
        "stage1",
        vec![BlockSpec::conv(32, 3, 1), BlockSpec::conv(64, 3, 1)],
    );
}

struct TrtLayout {
    widths: [usize; 4],
    /// BottleNeck counts in stages 2 to 4.
    bottlenecks: [usize; 3],
    /// Extra stride-1 MixBlockC (R=0.5, S=2, K=7) closing stage 4.
    stage4_mix: usize,
    final_blocks: usize,
}

const TRT_A: TrtLayout = TrtLayout {
    widths: [160, 320, 640, 1280],
    bottlenecks: [2, 4, 5],
    stage4_mix: 0,
    final_blocks: 4,
};

fn trt_body(name: &str, l: &TrtLayout, final_block: BlockSpec) -> ArchSpec {
    let mut spec = ArchSpec::empty(name);
    trt_stem(&mut spec);
    for (i, stage) in ["stage2", "stage3", "stage4"].into_iter().enumerate() {
        let mut blocks = downsampling_run(BlockSpec::bottleneck(l.widths[i], 1), l.bottlenecks[i]);
        if stage == "stage4" {
            blocks.extend((0..l.stage4_mix).map(|_| BlockSpec::mix(BlockKind::MixC, l.widths[2], 1, 0.5, 2, 7)));
        }
        set_stage(&mut spec, stage, blocks);
    }
    set_stage(&mut spec, "stage5", downsampling_run(final_block, l.final_blocks));
    spec.declared_depths = Some(spec.stage_depths());
    spec
}

fn trt(name: &str, l: &TrtLayout) -> ArchSpec {
    trt_body(name, l, BlockSpec::mix(BlockKind::MixC, l.widths[3], 1, 0.5, 1, 7))
}

fn resnet(name: &str, depths: [usize; 4]) -> ArchSpec {
    let mut spec = ArchSpec::empty(name);
    set_stage(&mut spec, "stem", vec![BlockSpec::conv(64, 7, 2)]);
    let widths = [256, 512, 1024, 2048];
    for (i, stage) in ["stage2", "stage3", "stage4", "stage5"].into_iter().enumerate() {
        let blocks = if i == 0 {
            let mut b = vec![BlockSpec::maxpool(2)];
            b.extend((0..depths[0]).map(|_| BlockSpec::bottleneck(widths[0], 1)));
            b
        } else {
            downsampling_run(BlockSpec::bottleneck(widths[i], 1), depths[i])
        };
        set_stage(&mut spec, stage, blocks);
    }
    spec.declared_depths = Some(depths);
    spec
}

/// TRT-ViT-A layout with Transformer blocks in the final stage.
fn mixnet_v(name: &str, depths: [usize; 4]) -> ArchSpec {
    let l = TrtLayout {
        bottlenecks: [depths[0], depths[1], depths[2]],
        final_blocks: depths[3],
        ..TRT_A
    };
    trt_body(name, &l, BlockSpec::transformer(l.widths[3], 1, 1))
}

fn mixnet(name: &str, kind: BlockKind) -> ArchSpec {
    trt_body(name, &TRT_A, BlockSpec::mix(kind, TRT_A.widths[3], 1, 0.5, 1, 7))
}

fn ratio(name: &str, shrink: f64) -> ArchSpec {
    trt_body(
        name,
        &TRT_A,
        BlockSpec::mix(BlockKind::MixC, TRT_A.widths[3], 1, shrink, 1, 7),
    )
}

/// TRT-ViT-A with mixed blocks replacing the BottleNecks of the late stages:
/// stage 4 always, stage 3 too when `stage3`.
fn ablation(name: &str, stage3: bool) -> ArchSpec {
    let mut spec = trt("", &TRT_A);
    spec.name = name.to_string();
    let w = TRT_A.widths;
    set_stage(
        &mut spec,
        "stage4",
        downsampling_run(
            BlockSpec::mix(BlockKind::MixC, w[2], 1, 0.5, 2, 7),
            TRT_A.bottlenecks[2],
        ),
    );
    if stage3 {
        set_stage(
            &mut spec,
            "stage3",
            downsampling_run(
                BlockSpec::mix(BlockKind::MixC, w[1], 1, 0.5, 4, 7),
                TRT_A.bottlenecks[1],
            ),
        );
    }
    spec
}

/// Built-in architecture by name (see [`PRESET_NAMES`]).
pub fn preset(name: &str) -> Result<ArchSpec> {
    let spec = match name {
        "trt-vit-a" => trt(name, &TRT_A),
        "trt-vit-b" => trt(
            name,
            &TrtLayout {
                widths: [192, 384, 768, 1536],
                bottlenecks: [3, 4, 7],
                stage4_mix: 0,
                final_blocks: 4,
            },
        ),
        "trt-vit-c" => trt(
            name,
            &TrtLayout {
                widths: [192, 384, 768, 1536],
                bottlenecks: [3, 4, 7],
                stage4_mix: 2,
                final_blocks: 6,
            },
        ),
        "trt-vit-d" => trt(
            name,
            &TrtLayout {
                widths: [256, 512, 1024, 2048],
                bottlenecks: [4, 5, 7],
                stage4_mix: 2,
                final_blocks: 5,
            },
        ),
        "resnet50" => resnet(name, [3, 4, 6, 3]),
        "refined-resnet50" => resnet(name, [2, 3, 6, 5]),
        "mixnet-v" => mixnet_v(name, [3, 5, 6, 3]),
        "refined-mixnet-v" => mixnet_v(name, [2, 3, 6, 4]),
        "mixnet-a" => mixnet(name, BlockKind::MixA),
        "mixnet-b" => mixnet(name, BlockKind::MixB),
        "mixnet-c" => mixnet(name, BlockKind::MixC),
        "ablation-ccmm" => ablation(name, false),
        "ablation-cmmm" => ablation(name, true),
        "ratio-r25" => ratio(name, 0.25),
        "ratio-r50" => ratio(name, 0.5),
        "ratio-r75" => ratio(name, 0.75),
        "ratio-r100" => mixnet_v(name, [2, 4, 5, 4]),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}
