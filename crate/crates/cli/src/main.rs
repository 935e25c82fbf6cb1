mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mixvit::analysis::{
    cost_table, count_model, density_grid, guideline_report, metrics_table, CostReport, Guideline, Table,
};
use mixvit::arch::{
    emit_spec, instantiate, load_weights, resolve, save_weights, ArchSpec, BlockSpec, Model, STAGE_DIVISORS,
};
use mixvit::bench::{
    bench_target, export_latency_csv, import_latency_csv, join_metrics, read_latency_csv, BenchConfig, BenchTarget,
    LatencyRecord, Statistic, PUBLISHED_ABLATION_LATENCIES, PUBLISHED_BLOCK_LATENCIES, PUBLISHED_MODEL_LATENCIES,
};
use mixvit::blocks::{Block, BlockConfig, BlockKind};
use mixvit::nn::gradcheck::{
    gradcheck, randomize_params, ActivationOp, AttentionOp, AvgPoolOp, GradcheckConfig, GradcheckReport, MaxPoolOp,
    SoftmaxOp, SplitConcatOp,
};
use mixvit::nn::{Activation, Differentiable, Params, SpatialReductionAttention};
use mixvit::tensor::rand_normal;
use mixvit::{Rng, Tensor};

use output::{render, Format};

/// Cost model, benchmarks and gradient checks for hybrid CNN/Transformer
/// backbones.
#[derive(Parser)]
#[command(name = "mixvit", version)]
struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage-by-stage layout of a preset or spec file.
    Describe { target: String },
    /// Print a preset in the spec text format.
    Spec { target: String },
    /// Parameter and FLOP counts.
    Count {
        target: String,
        #[arg(long, default_value_t = 224)]
        res: usize,
        /// Tree depth to print: 0 model, 1 stages, 2 blocks, 3 ops.
        #[arg(long, default_value_t = 1)]
        depth: usize,
    },
    /// Time a preset or a single block on this machine.
    Bench(BenchArgs),
    /// Join latency records with analytical counts.
    Metrics {
        /// Latency CSV files to import.
        #[arg(long)]
        latency: Vec<PathBuf>,
        /// Only the block grid.
        #[arg(long, conflicts_with = "models")]
        blocks: bool,
        /// Only whole models.
        #[arg(long)]
        models: bool,
    },
    /// Finite-difference gradient check of a block kind, a primitive op, or `all`.
    Gradcheck {
        target: String,
        /// Smallest maps (4x4) for a quick pass.
        #[arg(long)]
        tiny: bool,
        #[arg(long, default_value_t = 64)]
        c: usize,
        #[arg(long, default_value_t = 8)]
        hw: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Logits of one raw little-endian f32 `3 x res x res` image.
    Infer {
        target: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 224)]
        res: usize,
    },
    /// Cost tables behind a design guideline (g1 to g4).
    Compare {
        guideline: String,
        /// Latency CSV files; the published ones are used when omitted.
        #[arg(long)]
        latency: Vec<PathBuf>,
    },
    /// Write freshly initialised weights.
    Init {
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Preset, spec file, or block kind.
    target: String,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// median, mean or min.
    #[arg(long, default_value = "median")]
    stat: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model input resolution.
    #[arg(long, default_value_t = 224)]
    res: usize,
    /// Block width (block targets).
    #[arg(long, default_value_t = 256)]
    c: usize,
    /// Block map side (block targets).
    #[arg(long, default_value_t = 56)]
    hw: usize,
    /// Also write the record to this latency CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    let f = cli.format;
    match cli.command {
        Command::Describe { target } => Ok(render(&[describe(&resolve(&target)?)], f)),
        Command::Spec { target } => Ok(emit_spec(&resolve(&target)?)),
        Command::Count { target, res, depth } => {
            let report = count_model(&resolve(&target)?, res)?;
            Ok(render(&[cost_table(&report, depth)], f))
        }
        Command::Bench(args) => bench(args, f),
        Command::Metrics {
            latency,
            blocks,
            models,
        } => metrics(&latency, blocks, models, f),
        Command::Gradcheck {
            target,
            tiny,
            c,
            hw,
            seed,
            seeds,
        } => run_gradcheck(&target, c, if tiny { 4 } else { hw }, seed, seeds, f),
        Command::Infer {
            target,
            weights,
            input,
            res,
        } => infer(&resolve(&target)?, &weights, &input, res, f),
        Command::Compare { guideline, latency } => {
            let g: Guideline = guideline.parse()?;
            let records = if latency.is_empty() {
                let mut r = read_latency_csv(PUBLISHED_BLOCK_LATENCIES.as_bytes())?;
                r.extend(read_latency_csv(PUBLISHED_MODEL_LATENCIES.as_bytes())?);
                r.extend(read_latency_csv(PUBLISHED_ABLATION_LATENCIES.as_bytes())?);
                r
            } else {
                import_all(&latency)?
            };
            Ok(render(&guideline_report(g, &records)?, f))
        }
        Command::Init { target, seed, out } => {
            let spec = resolve(&target)?;
            let model: Model = instantiate(&spec, &mut Rng::new(seed))?;
            save_weights(&model, &out).with_context(|| format!("writing {}", out.display()))?;
            Ok(format!(
                "wrote {} ({} params) to {}\n",
                spec.name,
                model.num_params(),
                out.display()
            ))
        }
    }
}

fn block_label(b: &BlockSpec) -> String {
    match b.kind {
        BlockKind::Conv => format!("conv{0}x{0}", b.kernel.unwrap_or(3)),
        BlockKind::MaxPool => "maxpool3x3".into(),
        BlockKind::BottleNeck => match b.kernel {
            Some(k) if k != 3 => format!("bottleneck(K={k})"),
            _ => "bottleneck".into(),
        },
        BlockKind::Transformer => format!("transformer(S={})", b.sr_ratio.unwrap_or(1)),
        kind => format!(
            "{kind}(R={},S={},K={})",
            b.shrink.unwrap_or_default(),
            b.sr_ratio.unwrap_or(1),
            b.kernel.unwrap_or(3)
        ),
    }
}

fn describe(spec: &ArchSpec) -> Table {
    let mut t = Table::new(
        format!("{} (depths {})", spec.name, spec.depth_pattern()),
        &["stage", "output_size", "channels", "blocks"],
    );
    for ((stage, cfgs), div) in spec.block_configs().into_iter().zip(STAGE_DIVISORS) {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for b in &stage.blocks {
            let label = block_label(b);
            match groups.last_mut() {
                Some((l, n)) if *l == label => *n += 1,
                _ => groups.push((label, 1)),
            }
        }
        let blocks = groups
            .iter()
            .map(|(l, n)| format!("{l} ×{n}"))
            .collect::<Vec<_>>()
            .join(" + ");
        let channels = cfgs.last().map_or(String::new(), |c| c.out_channels.to_string());
        t.push(vec![
            stage.name.clone(),
            format!("H/{div} x W/{div}"),
            channels,
            if blocks.is_empty() { "-".into() } else { blocks },
        ]);
    }
    t.push(vec![
        "head".into(),
        "1 x 1".into(),
        spec.num_classes.to_string(),
        "global avgpool + linear".into(),
    ]);
    t
}

fn bench(a: BenchArgs, f: Format) -> Result<String> {
    let statistic = Statistic::parse(&a.stat).with_context(|| format!("unknown statistic `{}`", a.stat))?;
    let cfg = BenchConfig {
        warmup: a.warmup,
        iterations: a.iters,
        batch: a.batch,
        statistic,
    };
    let target = match BlockKind::parse(&a.target) {
        Some(kind) => BenchTarget::Block {
            config: single_block(kind, a.c),
            h: a.hw,
            w: a.hw,
        },
        None => BenchTarget::Model {
            spec: resolve(&a.target)?,
            resolution: a.res,
        },
    };
    let m = bench_target(&target, &cfg, &mut Rng::new(a.seed))?;
    if let Some(out) = &a.out {
        export_latency_csv(std::slice::from_ref(&m.record), out)?;
    }
    let r = &m.record;
    let mut t = Table::new(
        format!("{} latency, {} timed calls", r.target, m.samples_ms.len()),
        &[
            "target",
            "kind",
            "c_in",
            "c_out",
            "h",
            "w",
            "batch",
            "latency_ms",
            "min_ms",
            "mean_ms",
            "source",
            "env",
        ],
    );
    t.push(vec![
        r.target.clone(),
        r.kind.clone(),
        r.c_in.to_string(),
        r.c_out.to_string(),
        r.h.to_string(),
        r.w.to_string(),
        r.batch.to_string(),
        format!("{:.4}", r.latency_ms),
        format!("{:.4}", m.min()),
        format!("{:.4}", m.mean()),
        "measured-local".into(),
        r.env.clone(),
    ]);
    Ok(render(&[t], f))
}

/// Width-preserving stride-1 block of `kind` at width `c`.
fn single_block(kind: BlockKind, c: usize) -> BlockConfig {
    match kind {
        BlockKind::Conv => BlockConfig::conv(c, c, 3, 1),
        BlockKind::MaxPool => BlockConfig::maxpool(c, 1),
        BlockKind::BottleNeck => BlockConfig::bottleneck(c, c, 1, 3),
        BlockKind::Transformer => BlockConfig::transformer(c, c, 1, 1),
        k => BlockConfig::mix(k, c, c, 1, 0.5, 1, 3),
    }
}

fn import_all(paths: &[PathBuf]) -> Result<Vec<LatencyRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(import_latency_csv(p).with_context(|| format!("importing {}", p.display()))?);
    }
    Ok(out)
}

fn metrics(paths: &[PathBuf], blocks_only: bool, models_only: bool, f: Format) -> Result<String> {
    if paths.is_empty() {
        bail!(
            "no latency source: pass --latency <csv> with imported records (e.g. data/block_grid_t4.csv) \
             or measure first with `mixvit bench <target> --out <csv>`"
        );
    }
    let records = import_all(paths)?;
    let mut costs: Vec<CostReport> = Vec::new();
    if !models_only {
        costs.extend(density_grid()?);
    }
    if !blocks_only {
        let mut seen = std::collections::BTreeSet::new();
        for r in records.iter().filter(|r| r.kind == "model") {
            if seen.insert((r.target.clone(), r.h)) {
                if let Ok(spec) = resolve(&r.target) {
                    costs.push(count_model(&spec, r.h)?);
                }
            }
        }
        // bench records of single blocks carry their own shape
        for r in records.iter().filter(|r| r.kind != "model" && r.target == r.kind) {
            if let Some(kind) = BlockKind::parse(&r.kind) {
                if r.c_in == r.c_out {
                    let cost = mixvit::analysis::count_block(&single_block(kind, r.c_in), r.h, r.w, &r.target)?;
                    if !costs.iter().any(|c| c.path == cost.path && c.input == cost.input) {
                        costs.push(cost);
                    }
                }
            }
        }
    }
    let joined = join_metrics(&costs, &records)?;
    let mut t = metrics_table(&joined.rows);
    for r in &joined.unmatched_records {
        t.notes.push(format!(
            "unmatched record: {} {} {}x{}x{} ({} ms)",
            r.target, r.kind, r.c_in, r.h, r.w, r.latency_ms
        ));
    }
    Ok(render(&[t], f))
}

fn check_one<M: Differentiable<f64>>(m: &mut M, x: &Tensor<f64>, seed: u64) -> Result<GradcheckReport> {
    let cfg = GradcheckConfig {
        seed,
        ..GradcheckConfig::default()
    };
    Ok(gradcheck(m, x, &cfg)?)
}

const OPS: [&str; 8] = [
    "relu",
    "gelu",
    "softmax",
    "avgpool",
    "maxpool",
    "split",
    "attention",
    "attention-sr",
];

fn gradcheck_target(target: &str, c: usize, hw: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let map = |rng: &mut Rng, c: usize| rand_normal::<f64>(rng, &[1, c, hw, hw], 1.0);
    if let Some(kind) = BlockKind::parse(target) {
        let mut b = Block::<f64>::new(single_block(kind, c), target)?;
        randomize_params(&mut b, &mut rng);
        let x = map(&mut rng, c);
        return check_one(&mut b, &x, seed);
    }
    match target {
        "relu" | "gelu" => {
            let act = if target == "relu" {
                Activation::Relu
            } else {
                Activation::Gelu
            };
            let x = map(&mut rng, c);
            check_one(&mut ActivationOp(act), &x, seed)
        }
        "softmax" => {
            let x = rand_normal(&mut rng, &[hw * hw, c], 1.0);
            check_one(&mut SoftmaxOp, &x, seed)
        }
        "avgpool" => check_one(&mut AvgPoolOp { kernel: 2, stride: 2 }, &map(&mut rng, c), seed),
        "maxpool" => check_one(
            &mut MaxPoolOp {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            &map(&mut rng, c),
            seed,
        ),
        "split" => check_one(&mut SplitConcatOp { at: c / 4 }, &map(&mut rng, c), seed),
        "attention" | "attention-sr" => {
            let sr = if target == "attention" { 1 } else { 2 };
            let mut op = AttentionOp {
                attn: SpatialReductionAttention::new(c, sr)?,
                hw: (hw, hw),
            };
            randomize_params(&mut op, &mut rng);
            let x = rand_normal(&mut rng, &[1, hw * hw, c], 1.0);
            check_one(&mut op, &x, seed)
        }
        _ => bail!(
            "unknown gradcheck target `{target}`; use a block kind, one of {}, or `all`",
            OPS.join(", ")
        ),
    }
}

fn run_gradcheck(target: &str, c: usize, hw: usize, seed: u64, seeds: u64, f: Format) -> Result<String> {
    let targets: Vec<String> = if target == "all" {
        BlockKind::ALL
            .iter()
            .map(|k| k.name().to_string())
            .chain(OPS.iter().map(|s| s.to_string()))
            .collect()
    } else {
        vec![target.to_string()]
    };
    let mut t = Table::new(
        format!("gradient check, C={c}, {hw}x{hw}"),
        &[
            "target",
            "seed",
            "result",
            "max_rel_err",
            "max_abs_err",
            "checked",
            "skipped",
        ],
    );
    let mut failed = 0;
    for name in &targets {
        for s in seed..seed + seeds.max(1) {
            let r = gradcheck_target(name, c, hw, s)?;
            failed += usize::from(!r.pass);
            t.push(vec![
                name.clone(),
                s.to_string(),
                if r.pass { "PASS" } else { "FAIL" }.into(),
                format!("{:.3e}", r.max_rel_err),
                format!("{:.3e}", r.max_abs_err),
                format!("{}/{}", r.checked, r.total_coords),
                r.skipped.to_string(),
            ]);
        }
    }
    let text = render(&[t], f);
    if failed > 0 {
        print!("{text}");
        bail!("{failed} gradient check(s) failed");
    }
    Ok(text)
}

fn infer(spec: &ArchSpec, weights: &PathBuf, input: &PathBuf, res: usize, f: Format) -> Result<String> {
    let mut model: Model = Model::zeroed(spec)?;
    load_weights::<f32>(weights)
        .with_context(|| format!("reading {}", weights.display()))?
        .apply_to(&mut model)?;
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let want = 3 * res * res * 4;
    if bytes.len() != want {
        bail!(
            "input holds {} bytes, a 3x{res}x{res} f32 image needs {want}",
            bytes.len()
        );
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let x = Tensor::new(&[1, 3, res, res], data)?;
    let logits = model.forward(&x)?;
    let mut t = Table::new(format!("{} logits", spec.name), &["class", "logit"]);
    for (i, v) in logits.data().iter().enumerate() {
        t.push(vec![i.to_string(), format!("{v:e}")]);
    }
    Ok(render(&[t], f))
}
