//! The analytical counter against an instrumented forward pass.

use mixvit::analysis::count_block;
use mixvit::blocks::{Block, BlockConfig, BlockKind};
use mixvit::nn::Params;
use mixvit::{MacCounter, Tensor};
use proptest::prelude::*;

fn side() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![4usize, 6, 8])
}

fn stride() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 2])
}

fn config(kind: BlockKind) -> BoxedStrategy<BlockConfig> {
    let widths = || prop::sample::select(vec![32usize, 64, 96, 128]);
    let kernels = || prop::sample::select(vec![1usize, 3, 5]);
    match kind {
        BlockKind::Conv => (1usize..24, 1usize..24, kernels(), stride())
            .prop_map(|(i, o, k, s)| BlockConfig::conv(i, o, k, s))
            .boxed(),
        BlockKind::MaxPool => (1usize..24, stride())
            .prop_map(|(c, s)| BlockConfig::maxpool(c, s))
            .boxed(),
        BlockKind::BottleNeck => (1usize..40, 1usize..16, stride(), kernels())
            .prop_map(|(i, o, s, k)| BlockConfig::bottleneck(i, 4 * o, s, k))
            .boxed(),
        BlockKind::Transformer => (1usize..48, widths(), stride(), 1usize..3)
            .prop_map(|(i, c, s, sr)| BlockConfig::transformer(i, c, s, sr))
            .boxed(),
        k => (
            1usize..48,
            prop::sample::select(vec![64usize, 128]),
            stride(),
            prop::sample::select(vec![0.25, 0.5, 0.75]),
            1usize..3,
            kernels(),
        )
            .prop_map(move |(i, c, s, r, sr, kk)| {
                BlockConfig::mix(k, i, c, s, if k == BlockKind::MixB { 0.5 } else { r }, sr, kk)
            })
            .prop_filter("buildable", |cfg| cfg.problems().is_empty())
            .boxed(),
    }
}

fn check(cfg: &BlockConfig, hw: usize) -> Result<(), TestCaseError> {
    let block = Block::<f32>::new(cfg.clone(), "b").unwrap();
    let cost = count_block(cfg, hw, hw, "b").unwrap();
    let counter = MacCounter::new();
    block
        .forward(&Tensor::zeros(&[1, cfg.in_channels, hw, hw]), Some(&counter))
        .unwrap();
    prop_assert_eq!(counter.total(), cost.flops(), "flops of {:?} at {}", cfg, hw);
    prop_assert_eq!(block.num_params() as u64, cost.params(), "params of {:?}", cfg);
    prop_assert!(cost.is_additive());
    Ok(())
}

macro_rules! oracle {
    ($name:ident, $kind:expr) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn $name(cfg in config($kind), hw in side()) {
                check(&cfg, hw)?;
            }
        }
    };
}

oracle!(conv_counts_match, BlockKind::Conv);
oracle!(maxpool_counts_match, BlockKind::MaxPool);
oracle!(bottleneck_counts_match, BlockKind::BottleNeck);
oracle!(transformer_counts_match, BlockKind::Transformer);
oracle!(mixa_counts_match, BlockKind::MixA);
oracle!(mixb_counts_match, BlockKind::MixB);
oracle!(mixc_counts_match, BlockKind::MixC);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn mixb_and_mixc_cost_the_same(i in 1usize..48, s in stride(), sr in 1usize..3, k in prop::sample::select(vec![1usize, 3, 5]), hw in side()) {
        let b = BlockConfig::mix(BlockKind::MixB, i, 64, s, 0.5, sr, k);
        let c = BlockConfig { kind: BlockKind::MixC, ..b.clone() };
        prop_assert_eq!(count_block(&b, hw, hw, "").unwrap().cost, count_block(&c, hw, hw, "").unwrap().cost);
    }

    #[test]
    fn bottleneck_flops_scale_with_area(c in 1usize..16, hw in 1usize..5) {
        let cfg = BlockConfig::bottleneck(4 * c, 4 * c, 1, 3);
        let one = count_block(&cfg, 2 * hw, 2 * hw, "").unwrap().flops();
        let four = count_block(&cfg, 4 * hw, 4 * hw, "").unwrap().flops();
        prop_assert_eq!(4 * one, four);
    }
}
