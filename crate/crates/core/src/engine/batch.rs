//! Many experiments at once, and resumable campaigns on disk.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{ClosedLoop, ExperimentSpec, TraceRecord};
use crate::analytics::{campaign_report, CampaignReport, RunSummary};
use crate::error::{Error, Result};
use crate::schema::{parse_json, spec_hash, to_json_pretty};
use crate::trace_csv::TraceFile;

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("--parallelism", e.to_string()))
}

/// Runs every spec; results come back in input order whatever the
/// parallelism.
pub fn run_batch(
    specs: &[ExperimentSpec],
    base_dir: Option<&Path>,
    parallelism: usize,
) -> Result<Vec<Result<Vec<TraceRecord>>>> {
    let pool = pool(parallelism)?;
    Ok(pool.install(|| {
        specs
            .par_iter()
            .map(|s| ClosedLoop::from_spec(s, base_dir)?.run())
            .collect()
    }))
}

/// Outcome of [`run_campaign`].
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub report: CampaignReport,
    /// Runs simulated by this invocation.
    pub simulated: usize,
    /// Runs whose summaries were already on disk.
    pub skipped: usize,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn summary_path(runs_dir: &Path, hash: &str) -> PathBuf {
    runs_dir.join(format!("{hash}.summary.json"))
}

fn load_summary(path: &Path) -> Option<RunSummary> {
    let text = std::fs::read_to_string(path).ok()?;
    parse_json(&text).ok()
}

/// Runs a campaign into `out_dir/runs/<hash>.csv` plus a summary per run,
/// then writes `report.json` and `report.txt`. Runs whose summary already
/// exists are not recomputed, and the report is always rebuilt from the
/// summaries, so an interrupted and resumed campaign ends identical to an
/// uninterrupted one.
pub fn run_campaign(
    specs: &[ExperimentSpec],
    base_dir: Option<&Path>,
    out_dir: &Path,
    parallelism: usize,
) -> Result<CampaignOutcome> {
    let embedded = specs
        .iter()
        .map(|s| s.self_contained(base_dir))
        .collect::<Result<Vec<_>>>()?;
    for s in &embedded {
        s.resolve(base_dir)?;
    }
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;

    let hashes: Vec<String> = embedded.iter().map(spec_hash).collect();
    let mut todo: Vec<usize> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, h) in hashes.iter().enumerate() {
        if seen.insert(h.clone()) && load_summary(&summary_path(&runs_dir, h)).is_none() {
            todo.push(i);
        }
    }
    let skipped = seen.len() - todo.len();

    let pool = pool(parallelism)?;
    let results: Vec<Result<()>> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let spec = &embedded[i];
                let trace = ClosedLoop::from_spec(spec, base_dir)?.run()?;
                let csv = TraceFile::new(Some(spec.clone()), trace.clone()).to_csv();
                write_atomic(&runs_dir.join(format!("{}.csv", hashes[i])), &csv)?;
                let summary = RunSummary::new(spec, &trace)?;
                write_atomic(&summary_path(&runs_dir, &hashes[i]), &to_json_pretty(&summary))
            })
            .collect()
    });
    results.into_iter().collect::<Result<()>>()?;

    let summaries = hashes
        .iter()
        .map(|h| {
            let path = summary_path(&runs_dir, h);
            load_summary(&path).ok_or_else(|| Error::Trace(format!("missing or unreadable {}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = campaign_report(&summaries);
    write_atomic(&out_dir.join("report.json"), &report.to_json())?;
    write_atomic(&out_dir.join("report.txt"), &report.to_table())?;
    Ok(CampaignOutcome {
        report,
        simulated: todo.len(),
        skipped,
    })
}
