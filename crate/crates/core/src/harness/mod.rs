//! Command-line front end: config ingestion, runs, sweeps and reports.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::cas::Cid;
use crate::fl_core::Method;
use crate::protocol::{run_experiment, ProtocolError, RunArtifacts};
use config::{ConfigError, ExperimentConfig, FailureSpec};
use report::{write_reports, RunReport};

pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("run failed: {0}")]
    Run(#[from] ProtocolError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("digest mismatch: file hashes to {actual}, expected {expected}")]
    DigestMismatch { expected: Cid, actual: Cid },
}

impl HarnessError {
    /// 1 for bad input, 2 for failures while executing.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(ConfigError::Read { .. }) => 2,
            HarnessError::Config(_) | HarnessError::Usage(_) => 1,
            HarnessError::Run(ProtocolError::Config(_)) => 1,
            HarnessError::Run(_) | HarnessError::Io { .. } | HarnessError::DigestMismatch { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Run one experiment and write its reports into `out`.
pub fn execute(
    cfg: &ExperimentConfig,
    config_source: &str,
    out: &Path,
) -> Result<(RunReport, RunArtifacts), HarnessError> {
    let mut cfg = cfg.clone();
    cfg.output_dir = Some(out.to_path_buf());
    let run = run_experiment(&cfg)?;
    cfg.output_dir = None;
    let report = RunReport::build(&cfg, config_source, &run);
    write_reports(out, &report, &run).map_err(io_err(out))?;
    Ok((report, run))
}

pub fn cli_run(config_path: &Path, out: &Path) -> Result<RunReport, HarnessError> {
    let (cfg, text) = ExperimentConfig::load(config_path)?;
    Ok(execute(&cfg, &text, out)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NCollaborators,
    FailuresCount,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::NCollaborators => "n_collaborators",
            SweepParam::FailuresCount => "failures_count",
        }
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n_collaborators" => Ok(SweepParam::NCollaborators),
            "failures_count" => Ok(SweepParam::FailuresCount),
            other => Err(HarnessError::Usage(format!(
                "cannot sweep `{other}`; expected n_collaborators or failures_count"
            ))),
        }
    }
}

pub fn parse_values(list: &str) -> Result<Vec<usize>, HarnessError> {
    let values: Vec<usize> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| HarnessError::Usage(format!("`{s}` is not a non-negative integer")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(HarnessError::Usage("--values must list at least one value".into()));
    }
    Ok(values)
}

/// Derive the config for one sweep point. Failures crash the first `k`
/// collaborators at round 1.
pub fn sweep_point(
    base: &ExperimentConfig,
    vary: SweepParam,
    value: usize,
    method: Method,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = base.clone();
    cfg.method = method;
    match vary {
        SweepParam::NCollaborators => cfg.n_collaborators = value,
        SweepParam::FailuresCount => {
            cfg.failures = (0..value).map(|node| FailureSpec { node, round: 1 }).collect();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: usize,
    pub method: Method,
    pub report: RunReport,
}

pub fn summary_csv(vary: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "vary,value,method,n_collaborators,failures,final_accuracy,final_macro_f1,final_weighted_f1,centralized_accuracy,total_gas,mean_submitters\n",
    );
    for r in rows {
        let cfg = &r.report.config;
        let fm = r.report.final_metrics.as_ref();
        let mean_submitters = r.report.rounds.iter().map(|o| o.submitters.len()).sum::<usize>() as f64
            / r.report.rounds.len().max(1) as f64;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            vary.as_str(),
            r.value,
            r.method.as_str(),
            cfg.n_collaborators,
            cfg.failures.len(),
            fm.map_or(f64::NAN, |m| m.accuracy),
            fm.map_or(f64::NAN, |m| m.macro_f1),
            fm.map_or(f64::NAN, |m| m.weighted_f1),
            r.report.centralized.as_ref().map_or(f64::NAN, |m| m.accuracy),
            r.report.gas.total,
            mean_submitters,
        )
        .expect("string write");
    }
    out
}

/// Run `jobs` concurrently on a bounded pool, keeping input order.
fn run_all<T: Send, R: Send>(jobs: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut results: Vec<Option<R>> = (0..jobs.len()).map(|_| None).collect();
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate());
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((i, job)) = next else { break };
                let r = f(job);
                slots.lock().expect("slot lock")[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Sweep one parameter for both aggregation methods. Each point lands in
/// `out/<param>-<value>/<method>/`, plus `out/summary.csv`.
pub fn cli_sweep(
    config_path: &Path,
    vary: SweepParam,
    values: &[usize],
    out: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Usage("--values must list at least one value".into()));
    }
    let (base, text) = ExperimentConfig::load(config_path)?;
    let mut points = Vec::new();
    for &value in values {
        for method in [Method::FedAvg, Method::FedProx] {
            let cfg = sweep_point(&base, vary, value, method)?;
            let dir = out
                .join(format!("{}-{value}", vary.as_str()))
                .join(method.as_str());
            points.push((value, method, cfg, dir));
        }
    }
    let results = run_all(points, |(value, method, cfg, dir)| {
        let source = format!(
            "{text}\n# sweep override: {} = {value}, method = {}\n",
            vary.as_str(),
            method.as_str()
        );
        execute(&cfg, &source, &dir).map(|(report, _)| SweepRow {
            value,
            method,
            report,
        })
    });
    let rows: Vec<SweepRow> = results.into_iter().collect::<Result<_, _>>()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let summary = out.join(SUMMARY_CSV);
    std::fs::write(&summary, summary_csv(vary, &rows)).map_err(io_err(&summary))?;
    Ok(rows)
}

/// Offline digest check of a file against a hex digest.
pub fn cli_verify(weights: &Path, digest_hex: &str) -> Result<Cid, HarnessError> {
    let expected: Cid = digest_hex
        .parse()
        .map_err(|e| HarnessError::Usage(format!("--digest: {e}")))?;
    let bytes = std::fs::read(weights).map_err(io_err(weights))?;
    let actual = Cid::of(&bytes);
    if actual != expected {
        return Err(HarnessError::DigestMismatch { expected, actual });
    }
    Ok(actual)
}
