use std::fmt;

use crate::arch::preset;
use crate::bench::{join_metrics, LatencyRecord};
use crate::blocks::{BlockConfig, BlockKind};
use crate::error::{Error, Result};

use super::{count_block, count_model, CostReport, Table};

/// Feature maps of the block grid: `(channels, side)`.
pub const GRID_MAPS: [(usize, usize); 4] = [(256, 56), (512, 28), (1024, 14), (2048, 7)];

/// Grid rows: target name and block kind. MixBlockB and MixBlockC share a
/// row since their costs are identical.
pub const GRID_TARGETS: [(&str, BlockKind); 4] = [
    ("transformer", BlockKind::Transformer),
    ("bottleneck", BlockKind::BottleNeck),
    ("mixa", BlockKind::MixA),
    ("mixb/c", BlockKind::MixC),
];

pub const ACCURACY_NA: &str = "n/a (training out of scope)";

/// Stride-1, width-preserving block of the grid: 3x3 spatial kernels,
/// R = 0.5, no spatial reduction.
pub fn grid_config(kind: BlockKind, channels: usize) -> BlockConfig {
    match kind {
        BlockKind::Transformer => BlockConfig::transformer(channels, channels, 1, 1),
        BlockKind::BottleNeck => BlockConfig::bottleneck(channels, channels, 1, 3),
        k => BlockConfig::mix(k, channels, channels, 1, 0.5, 1, 3),
    }
}

/// Cost roots of every grid cell, with the target name as path.
pub fn density_grid() -> Result<Vec<CostReport>> {
    let mut out = Vec::new();
    for (target, kind) in GRID_TARGETS {
        for (c, side) in GRID_MAPS {
            out.push(count_block(&grid_config(kind, c), side, side, target)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guideline {
    /// Transformer blocks belong in the late stages.
    G1,
    /// Shallow-then-deep stage depths.
    G2,
    /// Mixed blocks beat pure Transformer blocks.
    G3,
    /// Global-then-local ordering inside mixed blocks.
    G4,
}

impl Guideline {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1" => Some(Guideline::G1),
            "g2" => Some(Guideline::G2),
            "g3" => Some(Guideline::G3),
            "g4" => Some(Guideline::G4),
            _ => None,
        }
    }
}

impl fmt::Display for Guideline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Guideline::G1 => "g1",
            Guideline::G2 => "g2",
            Guideline::G3 => "g3",
            Guideline::G4 => "g4",
        };
        f.write_str(s)
    }
}

fn model_latency(latencies: &[LatencyRecord], name: &str) -> String {
    latencies
        .iter()
        .find(|r| r.kind == "model" && r.target == name)
        .map(|r| format!("{}", r.latency_ms))
        .unwrap_or_default()
}

fn model_table(title: &str, names: &[&str], pattern_col: &str, latencies: &[LatencyRecord]) -> Result<Table> {
    let mut t = Table::new(
        title,
        &["model", pattern_col, "FLOPs(G)", "params(M)", "latency_ms", "top1_acc"],
    );
    for &name in names {
        let spec = preset(name)?;
        let cost = count_model(&spec, 224)?;
        let pattern = if pattern_col == "stage_depth" {
            spec.depth_pattern()
        } else {
            spec.block_pattern()
        };
        t.push(vec![
            name.to_string(),
            pattern,
            format!("{:.2}", cost.cost.flops_g()),
            format!("{:.2}", cost.cost.params_m()),
            model_latency(latencies, name),
            ACCURACY_NA.to_string(),
        ]);
    }
    t.notes
        .push("224x224 input; latency column empty when no record matches".into());
    Ok(t)
}

fn grid_tables(latencies: &[LatencyRecord]) -> Result<Vec<Table>> {
    let grid = density_grid()?;
    let joined = join_metrics(&grid, latencies)?;
    let mut t = Table::new(
        "block density grid",
        &[
            "block",
            "feature_map",
            "params(K)",
            "flops(M)",
            "latency_ms",
            "teraparams",
            "teraflops",
        ],
    );
    for g in &grid {
        let row = joined
            .rows
            .iter()
            .find(|r| r.target == g.path && r.c_in == g.input[0] && r.h == g.input[1]);
        let [c, h, w] = g.input;
        let opt = |f: &dyn Fn(&crate::analysis::MetricRow) -> String| row.map(f).unwrap_or_default();
        t.push(vec![
            g.path.clone(),
            format!("{c}x{h}x{w}"),
            format!("{:.0}", g.cost.params_k()),
            format!("{:.0}", g.cost.flops_m()),
            opt(&|r| format!("{}", r.latency_ms)),
            opt(&|r| format!("{:.1}", r.teraparams)),
            opt(&|r| format!("{:.1}", r.teraflops)),
        ]);
    }
    t.notes
        .push("teraparams = params[K]/latency[ms], teraflops = flops[M]/latency[ms]".into());

    let mut ratio = Table::new("transformer / bottleneck teraflops", &["feature_map", "ratio"]);
    for (c, side) in GRID_MAPS {
        let find = |target: &str| {
            joined
                .rows
                .iter()
                .find(|r| r.target == target && r.c_in == c && r.h == side)
                .map(|r| r.teraflops)
        };
        if let (Some(t), Some(b)) = (find("transformer"), find("bottleneck")) {
            ratio.push(vec![format!("{c}x{side}x{side}"), format!("{:.3}", t / b)]);
        }
    }
    Ok(vec![t, ratio])
}

/// Side-by-side traces of MixBlockB and MixBlockC with equal settings.
pub fn order_comparison(channels: usize, side: usize) -> Result<Table> {
    let b = BlockConfig::mix(BlockKind::MixB, channels, channels, 1, 0.5, 1, 7);
    let c = BlockConfig {
        kind: BlockKind::MixC,
        ..b.clone()
    };
    let (tb, tc) = (b.trace(side, side)?, c.trace(side, side)?);
    let (cb, cc) = (
        count_block(&b, side, side, "mixb")?,
        count_block(&c, side, side, "mixc")?,
    );
    let mut t = Table::new(
        format!("mixb vs mixc, {channels}x{side}x{side}, R=0.5 S=1 K=7"),
        &["step", "mixb", "mixc"],
    );
    let describe =
        |e: Option<&crate::blocks::TraceEntry>| e.map(|e| format!("{} ({})", e.path, e.op.name())).unwrap_or_default();
    for i in 0..tb.len().max(tc.len()) {
        t.push(vec![i.to_string(), describe(tb.get(i)), describe(tc.get(i))]);
    }
    t.push(vec!["params".into(), cb.params().to_string(), cc.params().to_string()]);
    t.push(vec!["flops".into(), cb.flops().to_string(), cc.flops().to_string()]);
    let first =
        |tr: &[crate::blocks::TraceEntry], f: fn(&crate::blocks::OpDesc) -> bool| tr.iter().position(|e| f(&e.op));
    let attention_first = |tr: &[crate::blocks::TraceEntry]| {
        first(tr, crate::blocks::OpDesc::is_attention) < first(tr, crate::blocks::OpDesc::is_spatial_conv)
    };
    t.notes.push(format!(
        "mixb: {} first; mixc: {} first; equal cost: {}",
        if attention_first(&tb) {
            "attention"
        } else {
            "convolution"
        },
        if attention_first(&tc) {
            "attention"
        } else {
            "convolution"
        },
        cb.cost == cc.cost
    ));
    Ok(t)
}

/// Cost tables behind one design guideline. Latency columns are filled
/// from `latencies` where a record matches; accuracy is never available.
pub fn guideline_report(g: Guideline, latencies: &[LatencyRecord]) -> Result<Vec<Table>> {
    match g {
        Guideline::G1 => grid_tables(latencies),
        Guideline::G2 => Ok(vec![model_table(
            "stage depth",
            &["resnet50", "refined-resnet50", "mixnet-v", "refined-mixnet-v"],
            "stage_depth",
            latencies,
        )?]),
        Guideline::G3 => Ok(vec![
            model_table(
                "block type",
                &["resnet50", "mixnet-v", "mixnet-a", "mixnet-b", "mixnet-c"],
                "block_type",
                latencies,
            )?,
            model_table(
                "stage type",
                &["trt-vit-a", "ablation-ccmm", "ablation-cmmm"],
                "block_type",
                latencies,
            )?,
        ]),
        Guideline::G4 => Ok(vec![
            order_comparison(1280, 7)?,
            model_table(
                "shrinking ratio",
                &["ratio-r100", "ratio-r75", "ratio-r50", "ratio-r25"],
                "block_type",
                latencies,
            )?,
        ]),
    }
}

impl std::str::FromStr for Guideline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Guideline::parse(s).ok_or_else(|| Error::invalid("guideline", format!("`{s}` is not one of g1, g2, g3, g4")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{read_latency_csv, PUBLISHED_ABLATION_LATENCIES, PUBLISHED_BLOCK_LATENCIES};

    #[test]
    fn g1_orders_density() {
        let recs = read_latency_csv(PUBLISHED_BLOCK_LATENCIES.as_bytes()).unwrap();
        let tables = guideline_report(Guideline::G1, &recs).unwrap();
        let grid = &tables[0];
        let tf = grid.column("teraflops").unwrap();
        let val = |target: &str, i: usize| -> f64 {
            grid.rows.iter().filter(|r| r[0] == target).nth(i).unwrap()[tf]
                .parse()
                .unwrap()
        };
        for i in 0..4 {
            assert!(val("bottleneck", i) > val("mixb/c", i));
            assert!(val("mixb/c", i) > val("transformer", i));
            assert!(val("mixa", i) > val("transformer", i));
        }
        // MixBlockA projects to the full output width before splitting, so
        // it counts more FLOPs than B/C and only trails them at 56x56
        assert!(val("mixb/c", 0) > val("mixa", 0));
        assert!(val("mixb/c", 3) < val("mixa", 3));
        let ratios: Vec<f64> = tables[1].rows.iter().map(|r| r[1].parse().unwrap()).collect();
        assert_eq!(ratios.len(), 4);
        assert!(ratios.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");
    }

    #[test]
    fn g2_lists_refined_resnet() {
        let recs = read_latency_csv(PUBLISHED_ABLATION_LATENCIES.as_bytes()).unwrap();
        let t = &guideline_report(Guideline::G2, &recs).unwrap()[0];
        let row = t.rows.iter().find(|r| r[0] == "refined-resnet50").unwrap();
        assert_eq!(row[1], "2-3-6-5");
        assert!((row[3].parse::<f64>().unwrap() - 34.1).abs() < 0.1);
        assert_eq!(row[4], "4.4");
        assert_eq!(row[5], ACCURACY_NA);
    }

    #[test]
    fn g4_shows_swapped_order() {
        let t = &guideline_report(Guideline::G4, &[]).unwrap()[0];
        assert!(t.notes[0].contains("mixb: convolution first; mixc: attention first; equal cost: true"));
    }
}
