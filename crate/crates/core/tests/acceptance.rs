//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Always exits 0 so the workspace test run stays usable; read the lines.

use std::time::{Duration, Instant};

use mixvit::analysis::{count_block, count_model, density_grid, grid_config, GRID_MAPS};
use mixvit::arch::{instantiate, preset, Model, ModelWeights};
use mixvit::bench::{
    join_metrics, read_latency_csv, write_latency_csv, PUBLISHED_BLOCK_LATENCIES, PUBLISHED_MODEL_LATENCIES,
};
use mixvit::blocks::{Block, BlockConfig, BlockKind, OpDesc};
use mixvit::nn::gradcheck::{
    gradcheck, randomize_params, ActivationOp, AttentionOp, AvgPoolOp, GradcheckConfig, GradcheckReport, MaxPoolOp,
    SoftmaxOp, SplitConcatOp,
};
use mixvit::nn::{
    Activation, BatchNorm2d, Conv2d, Differentiable, LayerNorm, Linear, NormParams, Params, SpatialReductionAttention,
};
use mixvit::tensor::rand_normal;
use mixvit::{MacCounter, Rng, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

// Published block grid: (params K, FLOPs M, TeraParams, TeraFLOPS) at
// 256x56, 512x28, 1024x14, 2048x7.
const PRINTED_TRANSFORMER: [(f64, f64, f64, f64); 4] = [
    (658.0, 7098.0, 7.5, 81.0),
    (2627.0, 2688.0, 179.0, 184.0),
    (10498.0, 2135.0, 2142.0, 435.0),
    (41960.0, 2066.0, 11988.0, 599.0),
];
const PRINTED_BOTTLENECK: [(f64, f64, f64, f64); 4] = [
    (70.0, 218.0, 120.0, 378.0),
    (279.0, 218.0, 733.0, 573.0),
    (1114.0, 218.0, 3173.0, 620.0),
    (4456.0, 218.0, 13723.0, 670.0),
];
const PRINTED_MIXA: [(f64, f64, f64, f64); 4] = [
    (216.0, 3195.0, 7.9, 117.0),
    (860.0, 989.0, 182.0, 206.0),
    (3400.0, 712.0, 2200.0, 456.0),
    (13710.0, 676.0, 12694.0, 625.0),
];
const PRINTED_MIXBC: [(f64, f64, f64, f64); 4] = [
    (216.0, 3195.0, 8.1, 122.0),
    (860.0, 989.0, 191.0, 219.0),
    (3400.0, 712.0, 2288.0, 474.0),
    (13710.0, 676.0, 13057.0, 644.0),
];

fn printed(target: &str) -> &'static [(f64, f64, f64, f64); 4] {
    match target {
        "transformer" => &PRINTED_TRANSFORMER,
        "bottleneck" => &PRINTED_BOTTLENECK,
        "mixa" => &PRINTED_MIXA,
        _ => &PRINTED_MIXBC,
    }
}

fn grid_cost(kind: BlockKind, i: usize) -> (f64, f64) {
    let (c, side) = GRID_MAPS[i];
    let r = count_block(&grid_config(kind, c), side, side, "").unwrap();
    (r.cost.params_k(), r.cost.flops_m())
}

fn block_counts() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    let mut ok = true;
    for (kind, table) in [
        (BlockKind::Transformer, &PRINTED_TRANSFORMER),
        (BlockKind::BottleNeck, &PRINTED_BOTTLENECK),
    ] {
        for (i, &(p, f, _, _)) in table.iter().enumerate() {
            let (gp, gf) = grid_cost(kind, i);
            worst = (worst.0.max(rel(gp, p)), worst.1.max(rel(gf, f)));
            ok &= rel(gp, p) <= 0.03 && rel(gf, f) <= 0.02;
        }
    }
    outcome(
        ok,
        format!(
            "max params err {:.2}% (<=3%), max flops err {:.2}% (<=2%)",
            100.0 * worst.0,
            100.0 * worst.1
        ),
    )
}

fn mix_block_counts() -> Outcome {
    let mut worst = 0.0f64;
    let mut same = true;
    for (i, &(c, side)) in GRID_MAPS.iter().enumerate() {
        worst = worst.max(rel(grid_cost(BlockKind::MixA, i).1, PRINTED_MIXA[i].1));
        worst = worst.max(rel(grid_cost(BlockKind::MixC, i).1, PRINTED_MIXBC[i].1));
        let b = count_block(&grid_config(BlockKind::MixB, c), side, side, "").unwrap();
        let cc = count_block(&grid_config(BlockKind::MixC, c), side, side, "").unwrap();
        same &= b.cost == cc.cost;
    }
    outcome(
        worst <= 0.20 && same,
        format!("max flops err {:.2}% (<=20%), mixb == mixc: {same}", 100.0 * worst),
    )
}

fn density_metrics() -> Vec<(String, Outcome)> {
    let recs = read_latency_csv(PUBLISHED_BLOCK_LATENCIES.as_bytes()).unwrap();
    let joined = join_metrics(&density_grid().unwrap(), &recs).unwrap();
    let mut misses = Vec::new();
    let mut subset_ok = true;
    let mut checked = 0;
    for row in &joined.rows {
        let i = GRID_MAPS
            .iter()
            .position(|&(c, s)| c == row.c_in && s == row.h)
            .unwrap();
        let (_, _, tp, tf) = printed(&row.target)[i];
        for (name, got, want) in [("TeraParams", row.teraparams, tp), ("TeraFLOPS", row.teraflops, tf)] {
            checked += 1;
            let e = rel(got, want);
            if e > 0.02 {
                misses.push(format!(
                    "{} {}x{} {name} {got:.1} vs {want} ({:.1}%)",
                    row.target,
                    row.c_in,
                    row.h,
                    100.0 * e
                ));
                subset_ok &= !matches!(row.target.as_str(), "transformer" | "bottleneck");
            }
        }
    }
    let all = if misses.is_empty() {
        outcome(checked == 32, format!("{checked}/32 values within 2%"))
    } else {
        outcome(
            false,
            format!(
                "{} of {checked} values off by more than 2%: {}",
                misses.len(),
                misses.join("; ")
            ),
        )
    };
    vec![
        ("density-metrics".into(), all),
        (
            "density-metrics (transformer and bottleneck rows)".into(),
            outcome(subset_ok && checked == 32, "16 values within 2%"),
        ),
    ]
}

fn model_counts() -> Outcome {
    // (name, params M, FLOPs G, tolerance)
    let targets = [
        ("resnet50", 25.6, 4.1, 0.02),
        ("trt-vit-a", 29.3, 2.7, 0.10),
        ("trt-vit-b", 43.1, 4.0, 0.10),
        ("trt-vit-c", 67.3, 5.9, 0.10),
        ("trt-vit-d", 103.0, 9.7, 0.10),
        ("refined-resnet50", 34.1, 4.1, 0.10),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, p, f, tol) in targets {
        let c = count_model(&preset(name).unwrap(), 224).unwrap().cost;
        let (ep, ef) = (rel(c.params_m(), p), rel(c.flops_g(), f));
        ok &= ep <= tol && ef <= tol;
        parts.push(format!("{name} {:.2}M/{:.3}G", c.params_m(), c.flops_g()));
    }
    outcome(ok, parts.join(", "))
}

fn random_config(kind: BlockKind, rng: &mut Rng) -> BlockConfig {
    let pick = |rng: &mut Rng, xs: &[usize]| xs[rng.below(xs.len())];
    let stride = pick(rng, &[1, 2]);
    let kernel = pick(rng, &[1, 3, 5]);
    let cin = 1 + rng.below(40);
    loop {
        let cfg = match kind {
            BlockKind::Conv => BlockConfig::conv(cin, 1 + rng.below(24), kernel, stride),
            BlockKind::MaxPool => BlockConfig::maxpool(cin, stride),
            BlockKind::BottleNeck => BlockConfig::bottleneck(cin, 4 * (1 + rng.below(16)), stride, kernel),
            BlockKind::Transformer => BlockConfig::transformer(cin, pick(rng, &[32, 64, 96]), stride, 1 + rng.below(2)),
            k => {
                let r = if k == BlockKind::MixB {
                    0.5
                } else {
                    [0.25, 0.5, 0.75][rng.below(3)]
                };
                BlockConfig::mix(k, cin, pick(rng, &[64, 128]), stride, r, 1 + rng.below(2), kernel)
            }
        };
        if cfg.problems().is_empty() {
            return cfg;
        }
    }
}

fn cost_oracle() -> Outcome {
    let mut rng = Rng::new(0x5eed);
    let mut checked = 0;
    let mut bad = Vec::new();
    for kind in BlockKind::ALL {
        for _ in 0..50 {
            let cfg = random_config(kind, &mut rng);
            let hw = [4, 6, 8][rng.below(3)];
            let block = Block::<f32>::new(cfg.clone(), "").unwrap();
            let cost = count_block(&cfg, hw, hw, "").unwrap();
            let counter = MacCounter::new();
            block
                .forward(&Tensor::zeros(&[1, cfg.in_channels, hw, hw]), Some(&counter))
                .unwrap();
            checked += 1;
            if counter.total() != cost.flops() || block.num_params() as u64 != cost.params() {
                bad.push(format!("{cfg:?} at {hw}"));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} of {checked} configs disagree (50 per block kind) {}",
            bad.len(),
            bad.join("; ")
        ),
    )
}

fn check<M: Differentiable<f64>>(m: &mut M, x: &Tensor<f64>, seed: u64) -> GradcheckReport {
    let cfg = GradcheckConfig {
        seed,
        ..GradcheckConfig::default()
    };
    gradcheck(m, x, &cfg).unwrap()
}

fn gradcheck_target(name: &str, seed: u64) -> GradcheckReport {
    const C: usize = 64;
    const HW: usize = 8;
    let mut rng = Rng::new(seed);
    let map = |rng: &mut Rng| rand_normal::<f64>(rng, &[1, C, HW, HW], 1.0);
    let tokens = |rng: &mut Rng| rand_normal::<f64>(rng, &[1, HW * HW, C], 1.0);
    if let Some(kind) = BlockKind::parse(name) {
        let cfg = match kind {
            BlockKind::Conv => BlockConfig::conv(C, C, 3, 1),
            BlockKind::MaxPool => BlockConfig::maxpool(C, 2),
            BlockKind::BottleNeck => BlockConfig::bottleneck(C, C, 1, 3),
            BlockKind::Transformer => BlockConfig::transformer(C, C, 1, 2),
            k => BlockConfig::mix(k, C, C, 1, 0.5, 1, 3),
        };
        let mut b = Block::<f64>::new(cfg, name).unwrap();
        randomize_params(&mut b, &mut rng);
        let x = map(&mut rng);
        return check(&mut b, &x, seed);
    }
    match name {
        "conv2d" => {
            let mut op = Conv2d::<f64>::new(C, C, 3, 2, 1, true);
            randomize_params(&mut op, &mut rng);
            let x = map(&mut rng);
            check(&mut op, &x, seed)
        }
        "linear" => {
            let mut op = Linear::<f64>::new(C, C, true);
            randomize_params(&mut op, &mut rng);
            let x = tokens(&mut rng);
            check(&mut op, &x, seed)
        }
        "batchnorm" => {
            let mut op = NormParams::BatchNormInference(BatchNorm2d::<f64>::new(C));
            randomize_params(&mut op, &mut rng);
            let x = map(&mut rng);
            check(&mut op, &x, seed)
        }
        "layernorm" => {
            let mut op = NormParams::LayerNorm(LayerNorm::<f64>::new(C));
            randomize_params(&mut op, &mut rng);
            let x = tokens(&mut rng);
            check(&mut op, &x, seed)
        }
        "relu" => check(&mut ActivationOp(Activation::Relu), &map(&mut rng), seed),
        "gelu" => check(&mut ActivationOp(Activation::Gelu), &map(&mut rng), seed),
        "softmax" => check(&mut SoftmaxOp, &tokens(&mut rng), seed),
        "avgpool" => check(&mut AvgPoolOp { kernel: 2, stride: 2 }, &map(&mut rng), seed),
        "maxpool" => check(
            &mut MaxPoolOp {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            &map(&mut rng),
            seed,
        ),
        "split-concat" => check(&mut SplitConcatOp { at: C / 4 }, &map(&mut rng), seed),
        _ => {
            let sr = if name == "attention" { 1 } else { 2 };
            let mut op = AttentionOp {
                attn: SpatialReductionAttention::new(C, sr).unwrap(),
                hw: (HW, HW),
            };
            randomize_params(&mut op, &mut rng);
            let x = tokens(&mut rng);
            check(&mut op, &x, seed)
        }
    }
}

fn gradchecks() -> Outcome {
    let names = BlockKind::ALL.iter().map(|k| k.name()).chain([
        "conv2d",
        "linear",
        "batchnorm",
        "layernorm",
        "relu",
        "gelu",
        "softmax",
        "avgpool",
        "maxpool",
        "split-concat",
        "attention",
        "attention-sr",
    ]);
    let mut worst = 0.0f64;
    let mut runs = 0;
    let mut failed = Vec::new();
    for name in names {
        for seed in 0..20 {
            let r = gradcheck_target(name, seed);
            runs += 1;
            worst = worst.max(r.max_rel_err);
            if !r.pass || r.max_rel_err > 1e-4 {
                failed.push(format!("{name} seed {seed}: {r}"));
            }
        }
    }
    outcome(
        failed.is_empty(),
        format!(
            "{runs} runs (20 seeds each), worst rel err {worst:.2e} (<=1e-4) {}",
            failed.join("; ")
        ),
    )
}

fn guideline_structure() -> Outcome {
    let mut problems = Vec::new();
    for name in ["trt-vit-a", "trt-vit-b", "trt-vit-c", "trt-vit-d"] {
        let spec = preset(name).unwrap();
        if spec
            .all_stages()
            .take(4)
            .any(|s| s.blocks.iter().any(|b| b.kind.has_attention()))
        {
            problems.push(format!("(a) {name} has attention before stage4"));
        }
    }
    for name in [
        "refined-resnet50",
        "refined-mixnet-v",
        "trt-vit-a",
        "trt-vit-b",
        "trt-vit-c",
        "trt-vit-d",
    ] {
        let d = preset(name).unwrap().stage_depths();
        if !(d[0] <= d[1] && d[1] <= d[2] && d[3] > d[0]) {
            problems.push(format!("(b) {name} depths {d:?}"));
        }
    }
    let b = BlockConfig::mix(BlockKind::MixB, 256, 256, 1, 0.5, 1, 7);
    let c = BlockConfig {
        kind: BlockKind::MixC,
        ..b.clone()
    };
    let attention_first = |cfg: &BlockConfig| {
        let t = cfg.trace(14, 14).unwrap();
        let pos = |f: fn(&OpDesc) -> bool| t.iter().position(|e| f(&e.op)).unwrap();
        pos(OpDesc::is_attention) < pos(OpDesc::is_spatial_conv)
    };
    if attention_first(&b) || !attention_first(&c) {
        problems.push("(c) mixb/mixc op order".into());
    }
    if count_block(&b, 14, 14, "").unwrap().cost != count_block(&c, 14, 14, "").unwrap().cost {
        problems.push("(c) mixb/mixc costs differ".into());
    }
    let recs = read_latency_csv(PUBLISHED_BLOCK_LATENCIES.as_bytes()).unwrap();
    let joined = join_metrics(&density_grid().unwrap(), &recs).unwrap();
    let tf = |target: &str, c: usize| {
        joined
            .rows
            .iter()
            .find(|r| r.target == target && r.c_in == c)
            .unwrap()
            .teraflops
    };
    let ratios: Vec<f64> = GRID_MAPS
        .iter()
        .map(|&(c, _)| tf("transformer", c) / tf("bottleneck", c))
        .collect();
    let rising = ratios.windows(2).all(|w| w[0] < w[1]);
    if !rising || (ratios[0] - 0.21).abs() > 0.02 || (ratios[3] - 0.89).abs() > 0.02 {
        problems.push(format!("(d) ratios {ratios:.3?}"));
    }
    let detail = if problems.is_empty() {
        format!("(a)-(c) hold, (d) ratios {ratios:.3?}")
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn end_to_end_shapes() -> Outcome {
    let widths = [
        ("trt-vit-a", [160, 320, 640, 1280]),
        ("trt-vit-b", [192, 384, 768, 1536]),
        ("trt-vit-c", [192, 384, 768, 1536]),
        ("trt-vit-d", [256, 512, 1024, 2048]),
    ];
    let mut problems = Vec::new();
    for (name, w) in widths {
        let spec = preset(name).unwrap();
        let want: Vec<Vec<usize>> = [(32, 112), (64, 112), (w[0], 56), (w[1], 28), (w[2], 14), (w[3], 7)]
            .iter()
            .map(|&(c, s)| vec![2, c, s, s])
            .collect();
        let x: Tensor = rand_normal(&mut Rng::new(7), &[2, 3, 224, 224], 1.0);
        let run = || {
            let model: Model = instantiate(&spec, &mut Rng::new(42)).unwrap();
            model.forward_features(&x, None).unwrap()
        };
        let first = run();
        let shapes: Vec<Vec<usize>> = first.stages.iter().map(|(_, t)| t.shape().to_vec()).collect();
        if shapes != want {
            problems.push(format!("{name} stage shapes {shapes:?}"));
        }
        if first.logits.shape() != [2, 1000] {
            problems.push(format!("{name} logits {:?}", first.logits.shape()));
        }
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&first.logits) != bits(&run().logits) {
            problems.push(format!("{name} not reproducible"));
        }
    }
    let detail = if problems.is_empty() {
        "4 presets, batch 2 at 224x224".to_string()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn round_trips() -> Outcome {
    let mut problems = Vec::new();
    let spec = preset("trt-vit-a").unwrap();
    let model: Model = instantiate(&spec, &mut Rng::new(9)).unwrap();
    let bytes = ModelWeights::from_module(&model).to_bytes();
    let back = ModelWeights::<f32>::from_bytes(&bytes).unwrap();
    if back.to_bytes() != bytes {
        problems.push("weights bytes changed after a round trip".to_string());
    }
    let mut rebuilt: Model = Model::zeroed(&spec).unwrap();
    back.apply_to(&mut rebuilt).unwrap();
    if ModelWeights::from_module(&rebuilt).to_bytes() != bytes {
        problems.push("weights applied to a fresh model differ".to_string());
    }
    for csv in [PUBLISHED_BLOCK_LATENCIES, PUBLISHED_MODEL_LATENCIES] {
        let recs = read_latency_csv(csv.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_latency_csv(&recs, &mut out).unwrap();
        if read_latency_csv(out.as_slice()).unwrap() != recs {
            problems.push("latency records changed after a round trip".to_string());
        }
    }
    let detail = if problems.is_empty() {
        format!("{} weight bytes stable, latency CSVs stable", bytes.len())
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

/// Runs one criterion; each result line is labelled.
type Check = fn() -> Vec<(String, Outcome)>;

fn main() {
    let checks: [(u64, Check); 9] = [
        (1, || vec![("block-counts".into(), block_counts())]),
        (1, || vec![("mix-block-counts".into(), mix_block_counts())]),
        (1, density_metrics),
        (5, || vec![("model-counts".into(), model_counts())]),
        (30, || vec![("cost-oracle".into(), cost_oracle())]),
        (120, || vec![("gradcheck".into(), gradchecks())]),
        (1, || vec![("guideline-structure".into(), guideline_structure())]),
        (120, || vec![("end-to-end-shapes".into(), end_to_end_shapes())]),
        (5, || vec![("round-trips".into(), round_trips())]),
    ];
    let mut passed = 0;
    let mut total = 0;
    for (secs, run) in checks {
        let start = Instant::now();
        let results = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(secs);
        for (label, o) in results {
            let pass = o.pass && in_time;
            total += 1;
            passed += pass as usize;
            let timing = if in_time {
                String::new()
            } else {
                format!(" over the {secs}s budget")
            };
            println!(
                "{label} {} [{:.2}s{timing}] {}",
                if pass { "PASS" } else { "FAIL" },
                elapsed.as_secs_f64(),
                o.detail
            );
        }
    }
    println!("acceptance: {passed}/{total} lines pass");
}
