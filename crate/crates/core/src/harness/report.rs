//! Report assembly and the on-disk file contract:
//! `metrics.csv`, `gas.csv`, `timings.csv`, `rounds.jsonl`, `report.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::cas::{Cid, OpKind, StoreTiming};
use crate::fl_core::{encode_weights, MetricsReport};
use crate::ledger::Receipt;
use crate::protocol::{Incident, RoundMetrics, RoundOutcome, RunArtifacts, MANAGER};
use crate::sealbox;

pub const METRICS_CSV: &str = "metrics.csv";
pub const GAS_CSV: &str = "gas.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const ROUNDS_JSONL: &str = "rounds.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const FINAL_WEIGHTS: &str = "final_weights.flw";
pub const TIMING_SUMMARY_CSV: &str = "timing_summary.csv";

#[derive(Debug, Clone, Serialize)]
pub struct GasRow {
    pub tx_index: u64,
    pub sender: String,
    pub function: String,
    pub status: String,
    pub gas_used: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FunctionGas {
    pub calls: u64,
    pub total: u64,
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GasSummary {
    pub total: u64,
    pub per_function: BTreeMap<String, FunctionGas>,
    pub rows: Vec<GasRow>,
}

/// Counts and bytes per (role, op). Durations are wall-clock and live only
/// in `timings.csv`, so this section stays reproducible.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StoreOpSummary {
    pub ops: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_source: String,
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundOutcome>,
    pub round_metrics: Vec<RoundMetrics>,
    pub final_metrics: Option<MetricsReport>,
    pub centralized: Option<MetricsReport>,
    pub final_weights_digest: Cid,
    pub gas: GasSummary,
    pub store_ops: BTreeMap<String, StoreOpSummary>,
    pub incidents: Vec<Incident>,
}

fn role(actor: &str) -> &'static str {
    if actor == MANAGER {
        "manager"
    } else {
        "collaborator"
    }
}

pub fn gas_rows(receipts: &[Receipt]) -> Vec<GasRow> {
    receipts
        .iter()
        .map(|r| GasRow {
            tx_index: r.tx_index,
            sender: r.sender.to_string(),
            function: r.function.clone(),
            status: r.status.label(),
            gas_used: r.gas_used,
        })
        .collect()
}

impl RunReport {
    pub fn build(config: &ExperimentConfig, config_source: &str, run: &RunArtifacts) -> Self {
        let rows = gas_rows(&run.receipts);
        let mut per_function: BTreeMap<String, FunctionGas> = BTreeMap::new();
        for r in &rows {
            let e = per_function.entry(r.function.clone()).or_insert(FunctionGas {
                min: u64::MAX,
                ..Default::default()
            });
            e.calls += 1;
            e.total += r.gas_used;
            e.min = e.min.min(r.gas_used);
            e.max = e.max.max(r.gas_used);
        }
        let mut store_ops: BTreeMap<String, StoreOpSummary> = BTreeMap::new();
        for t in &run.timings {
            let phase = if t.round == 0 { "bootstrap" } else { "rounds" };
            let key = format!("{}/{}/{}", role(&t.actor), t.op_kind.as_str(), phase);
            let e = store_ops.entry(key).or_default();
            e.ops += 1;
            e.bytes += t.payload_len as u64;
        }
        RunReport {
            config_source: config_source.to_string(),
            config: config.clone(),
            rounds: run.outcomes.clone(),
            round_metrics: run.round_metrics.clone(),
            final_metrics: run.final_metrics().cloned(),
            centralized: run.centralized.clone(),
            final_weights_digest: sealbox::digest(&encode_weights(&run.final_weights)),
            gas: GasSummary {
                total: rows.iter().map(|r| r.gas_used).sum(),
                per_function,
                rows,
            },
            store_ops,
            incidents: run.incidents.clone(),
        }
    }
}

fn metrics_header(n_classes: usize) -> String {
    let mut h = String::from("round,node_scope,accuracy,macro_f1,weighted_f1");
    for c in 0..n_classes {
        write!(h, ",precision_{c},recall_{c},f1_{c},support_{c}").expect("string write");
    }
    h
}

fn metrics_row(out: &mut String, round: u32, scope: &str, m: &MetricsReport) {
    write!(out, "{round},{scope},{},{},{}", m.accuracy, m.macro_f1, m.weighted_f1)
        .expect("string write");
    for c in &m.per_class {
        write!(out, ",{},{},{},{}", c.precision, c.recall, c.f1, c.support).expect("string write");
    }
    out.push('\n');
}

pub fn metrics_csv(report: &RunReport) -> String {
    let n_classes = report.config.dataset.class_proportions.len();
    let mut out = metrics_header(n_classes);
    out.push('\n');
    for rm in &report.round_metrics {
        metrics_row(&mut out, rm.round, "global", &rm.metrics);
    }
    if let Some(c) = &report.centralized {
        metrics_row(&mut out, report.config.rounds, "centralized", c);
    }
    out
}

pub fn gas_csv(rows: &[GasRow]) -> String {
    let mut out = String::from("tx_index,sender,function,status,gas_used\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.tx_index, r.sender, r.function, r.status, r.gas_used)
            .expect("string write");
    }
    out
}

pub fn timings_csv(timings: &[StoreTiming]) -> String {
    let mut out = String::from("actor,op_kind,payload_len,duration_us,round\n");
    for t in timings {
        let op = match t.op_kind {
            OpKind::Add => "add",
            OpKind::Cat => "cat",
        };
        writeln!(out, "{},{},{},{},{}", t.actor, op, t.payload_len, t.duration_us, t.round)
            .expect("string write");
    }
    out
}

#[derive(Serialize)]
struct RoundLine<'a> {
    round: u32,
    submitters: &'a [crate::flsc::Address],
    rejected: &'a [crate::protocol::Rejection],
    global_commit: Cid,
}

pub fn rounds_jsonl(outcomes: &[RoundOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        let line = RoundLine {
            round: o.round,
            submitters: &o.submitters,
            rejected: &o.rejected,
            global_commit: o.global_commit,
        };
        out.push_str(&serde_json::to_string(&line).expect("round line serializes"));
        out.push('\n');
    }
    out
}

/// Write every report file into `dir` (created if needed).
pub fn write_reports(dir: &Path, report: &RunReport, run: &RunArtifacts) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(METRICS_CSV), metrics_csv(report))?;
    std::fs::write(dir.join(GAS_CSV), gas_csv(&report.gas.rows))?;
    std::fs::write(dir.join(TIMINGS_CSV), timings_csv(&run.timings))?;
    std::fs::write(dir.join(TIMING_SUMMARY_CSV), timing_summary_csv(&run.timings))?;
    std::fs::write(dir.join(ROUNDS_JSONL), rounds_jsonl(&run.outcomes))?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::write(dir.join(REPORT_JSON), json)?;
    std::fs::write(dir.join(FINAL_WEIGHTS), encode_weights(&run.final_weights))?;
    Ok(())
}

/// Mean and population std of `(role, op)` durations for the delay report.
pub fn timing_summary_csv(timings: &[StoreTiming]) -> String {
    let mut groups: BTreeMap<(&str, &str), Vec<&StoreTiming>> = BTreeMap::new();
    for t in timings.iter().filter(|t| t.round > 0) {
        groups
            .entry((role(&t.actor), t.op_kind.as_str()))
            .or_default()
            .push(t);
    }
    let mut out = String::from("role,op_kind,count,mean_us,std_us\n");
    for ((r, op), rows) in groups {
        let (mean, std) = crate::cas::duration_stats(rows.iter().copied()).unwrap_or((0.0, 0.0));
        writeln!(out, "{r},{op},{},{mean:.3},{std:.3}", rows.len()).expect("string write");
    }
    out
}
