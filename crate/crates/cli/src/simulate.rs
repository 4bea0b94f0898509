use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use expoprop_sim::simgen::{run_replicate, write_table, MetricsReport, ReplicateResult};
use expoprop_sim::ScenarioConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimulateConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, read_json, write_atomic, write_json, RunManifest};

/// One finished replicate on disk, tagged with the cell it belongs to so a
/// resumed run never mixes cells.
#[derive(Debug, Serialize, Deserialize)]
struct StoredReplicate {
    scenario: ScenarioConfig,
    result: ReplicateResult,
}

fn cell_dir(out_dir: &Path, cell: usize) -> PathBuf {
    out_dir.join("replicates").join(format!("cell_{cell:02}"))
}

fn replicate_path(dir: &Path, r: usize) -> PathBuf {
    dir.join(format!("rep_{r:05}.json"))
}

/// Refuse to resume into a directory produced by a different configuration.
pub fn check_resume(out_dir: &Path, config_hash: &str) -> CliResult<()> {
    let manifest = RunManifest::path(out_dir);
    if !manifest.exists() || !out_dir.join("replicates").exists() {
        return Ok(());
    }
    let previous: RunManifest = read_json(&manifest)?;
    if previous.config_hash != config_hash {
        return Err(CliError::config(format!(
            "{} holds replicates of a different configuration (hash {}); use a fresh output directory",
            out_dir.display(),
            previous.config_hash
        )));
    }
    Ok(())
}

fn run_cell(cell: usize, scenario: &ScenarioConfig, out_dir: &Path) -> CliResult<MetricsReport> {
    let dir = cell_dir(out_dir, cell);
    ensure_dir(&dir)?;
    let mut done = BTreeMap::new();
    for r in 0..scenario.replicates {
        let path = replicate_path(&dir, r);
        if path.exists() {
            let stored: StoredReplicate = read_json(&path)?;
            if stored.scenario == *scenario && stored.result.replicate == r {
                done.insert(r, stored.result);
            }
        }
    }
    let pending: Vec<usize> = (0..scenario.replicates)
        .filter(|r| !done.contains_key(r))
        .collect();
    log::info!(
        "cell {cell}: {} of {} replicates already done",
        done.len(),
        scenario.replicates
    );
    let fresh: Vec<ReplicateResult> = pending
        .par_iter()
        .map(|&r| {
            let result = run_replicate(scenario, r)?;
            let stored = StoredReplicate {
                scenario: scenario.clone(),
                result,
            };
            write_json(&replicate_path(&dir, r), &stored)?;
            log::debug!("cell {cell} replicate {r} done");
            Ok(stored.result)
        })
        .collect::<CliResult<_>>()?;
    let all: Vec<ReplicateResult> = done.into_values().chain(fresh).collect();
    Ok(MetricsReport::from_replicates(scenario, all)?)
}

fn tidy_replicates(reports: &[MetricsReport]) -> String {
    let mut out = String::from(
        "cell,theta,tau2,correlated,skewed,replicate,arm,theta_hat,lower,upper,error\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (k, rep) in reports.iter().enumerate() {
        let s = &rep.scenario;
        for r in &rep.replicates {
            for a in &r.arms {
                let _ = writeln!(
                    out,
                    "{k},{},{},{},{},{},{},{},{},{},{}",
                    s.theta_true,
                    s.tau2,
                    s.correlated,
                    s.skewed,
                    r.replicate,
                    a.arm.label(),
                    opt(a.theta_hat),
                    opt(a.lower),
                    opt(a.upper),
                    a.error.as_deref().unwrap_or("").replace(',', ";")
                );
            }
        }
    }
    out
}

pub fn run(cfg: &SimulateConfig, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let cells = cfg.scenarios()?;
    let mut reports = Vec::with_capacity(cells.len());
    for (k, scenario) in cells.iter().enumerate() {
        reports.push(run_cell(k, scenario, out_dir)?);
    }
    let table_path = out_dir.join("table.csv");
    let mut table = Vec::new();
    write_table(&mut table, &reports).map_err(|e| CliError::io(&table_path, e))?;
    write_atomic(&table_path, &table)?;
    let tidy_path = out_dir.join("replicates.csv");
    write_atomic(&tidy_path, tidy_replicates(&reports).as_bytes())?;
    let reports_path = out_dir.join("reports.json");
    write_json(&reports_path, &reports)?;
    Ok(vec![table_path, tidy_path, reports_path])
}
