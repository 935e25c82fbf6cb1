//! Latency measurement, latency CSV files and the join of latencies with
//! analytical counts.

mod record;
mod run;

pub use record::{
    export_latency_csv, import_latency_csv, read_latency_csv, write_latency_csv, LatencyRecord, Source, CSV_HEADER,
};
pub use run::{bench_target, BenchConfig, BenchTarget, Measurement, Statistic};

use crate::analysis::{teraflops, teraparams, CostReport, MetricRow};
use crate::error::Result;

/// Published T4/TensorRT latencies of the block grid (batch 16).
pub const PUBLISHED_BLOCK_LATENCIES: &str = include_str!("../../../../data/block_grid_t4.csv");
/// Published T4/TensorRT latencies of whole models (batch 8).
pub const PUBLISHED_MODEL_LATENCIES: &str = include_str!("../../../../data/models_t4.csv");
/// Published T4/TensorRT latencies of the ablation models (batch 8).
pub const PUBLISHED_ABLATION_LATENCIES: &str = include_str!("../../../../data/ablation_t4.csv");

/// Result of [`join_metrics`]. Every latency record lands in exactly one of
/// `rows` and `unmatched_records`.
#[derive(Clone, Debug, Default)]
pub struct Joined {
    pub rows: Vec<MetricRow>,
    pub unmatched_records: Vec<LatencyRecord>,
    /// Paths of cost reports no record referred to.
    pub unmatched_costs: Vec<String>,
}

type Key<'a> = (&'a str, &'a str, usize, usize, usize, usize);

fn cost_key(r: &CostReport) -> Key<'_> {
    (&r.path, &r.kind, r.input[0], r.output[0], r.input[1], r.input[2])
}

fn record_key(r: &LatencyRecord) -> Key<'_> {
    (&r.target, &r.kind, r.c_in, r.c_out, r.h, r.w)
}

/// Matches records to cost roots on `(target, kind, c_in, c_out, h, w)`,
/// where a cost root's target is its path and `h, w` its input extent.
/// Counts are per sample while latencies cover the whole batch.
pub fn join_metrics(costs: &[CostReport], records: &[LatencyRecord]) -> Result<Joined> {
    let mut out = Joined::default();
    let mut used = vec![false; costs.len()];
    for rec in records {
        let Some(i) = costs.iter().position(|c| cost_key(c) == record_key(rec)) else {
            out.unmatched_records.push(rec.clone());
            continue;
        };
        used[i] = true;
        let cost = costs[i].cost;
        out.rows.push(MetricRow {
            target: rec.target.clone(),
            kind: rec.kind.clone(),
            c_in: rec.c_in,
            c_out: rec.c_out,
            h: rec.h,
            w: rec.w,
            batch: rec.batch,
            params_k: cost.params_k(),
            flops_m: cost.flops_m(),
            latency_ms: rec.latency_ms,
            teraparams: teraparams(cost.params_k(), rec.latency_ms)?,
            teraflops: teraflops(cost.flops_m(), rec.latency_ms)?,
            env: rec.env.clone(),
        });
    }
    out.unmatched_costs = costs
        .iter()
        .zip(used)
        .filter(|(_, u)| !u)
        .map(|(c, _)| c.path.clone())
        .collect();
    Ok(out)
}
