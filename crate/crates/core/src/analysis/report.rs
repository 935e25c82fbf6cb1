use std::fmt::Write as _;

use serde::Serialize;

use super::{CostReport, MetricRow};

/// Column schema shared by cost and metric reports.
pub const REPORT_COLUMNS: [&str; 11] = [
    "path",
    "kind",
    "Cin",
    "Cout",
    "H",
    "W",
    "params",
    "flops",
    "latency_ms",
    "teraparams",
    "teraflops",
];

/// A titled grid of strings, rendered as Markdown or CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Free-text lines printed under the table in Markdown.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        Self {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            writeln!(out, "### {}\n", self.title).unwrap();
        }
        let line = |cells: &[String]| format!("| {} |", cells.join(" | "));
        writeln!(out, "{}", line(&self.headers)).unwrap();
        writeln!(out, "|{}", "---|".repeat(self.headers.len())).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", line(r)).unwrap();
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                writeln!(out, "{n}").unwrap();
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

fn fixed(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

/// Cost tree down to `max_depth` (0 = root only), in the report schema.
/// Latency-derived columns stay empty.
pub fn cost_table(report: &CostReport, max_depth: usize) -> Table {
    let mut t = Table::new(
        format!("{} cost (params, MACs per sample)", report.path),
        &REPORT_COLUMNS,
    );
    report.walk(&mut |depth, r| {
        if depth > max_depth {
            return;
        }
        t.push(vec![
            r.path.clone(),
            r.kind.clone(),
            r.input[0].to_string(),
            r.output[0].to_string(),
            r.input[1].to_string(),
            r.input[2].to_string(),
            r.params().to_string(),
            r.flops().to_string(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    });
    t.notes.push(format!(
        "total: {:.2}M params, {:.3}G FLOPs (1 MAC = 1 FLOP)",
        report.cost.params_m(),
        report.cost.flops_g()
    ));
    t
}

/// Joined metric rows in the report schema. `params` and `flops` are in
/// K and M, matching the density units.
pub fn metrics_table(rows: &[MetricRow]) -> Table {
    let mut t = Table::new("latency density", &REPORT_COLUMNS);
    for r in rows {
        t.push(vec![
            r.target.clone(),
            r.kind.clone(),
            r.c_in.to_string(),
            r.c_out.to_string(),
            r.h.to_string(),
            r.w.to_string(),
            fixed(r.params_k, 1),
            fixed(r.flops_m, 1),
            fixed(r.latency_ms, 3),
            fixed(r.teraparams, 2),
            fixed(r.teraflops, 2),
        ]);
    }
    t.notes.push(
        "units: params in K, flops in M, teraparams = params[K]/latency[ms], teraflops = flops[M]/latency[ms]".into(),
    );
    t
}
