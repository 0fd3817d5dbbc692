//! Grid execution writing the long-format results file incrementally.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::Path;

use crate::error::Result;
use crate::io::config::GridConfig;
use crate::io::results::{read_results, rows_for, ResultRow, ResultsWriter};
use crate::sim::run_grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateSummary {
    pub scenarios_run: usize,
    pub scenarios_resumed: usize,
    pub rows_written: usize,
}

/// Runs the configured grid into `output`. Each scenario's rows are flushed
/// as soon as it finishes. With `resume`, scenarios already complete in an
/// existing `output` are kept and skipped; partial ones are rerun.
pub fn simulate(config: &GridConfig, output: &Path, threads: usize, resume: bool) -> Result<SimulateSummary> {
    let (grid, opts) = config.to_grid()?;
    let rows_per_scenario = grid.models.len() * grid.estimators.len();

    let mut kept: Vec<ResultRow> = Vec::new();
    let mut done: HashSet<u64> = HashSet::new();
    if resume && output.exists() {
        let existing = read_results(File::open(output)?)?;
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for r in &existing {
            *counts.entry(r.scenario_id).or_default() += 1;
        }
        done = counts.into_iter().filter(|&(_, c)| c == rows_per_scenario).map(|(id, _)| id).collect();
        kept = existing.into_iter().filter(|r| done.contains(&r.scenario_id)).collect();
    }

    let file = OpenOptions::new().create(true).write(true).truncate(true).open(output)?;
    let mut writer = ResultsWriter::new(BufWriter::new(file), true)?;
    writer.write_rows(&kept)?;

    let mut rows_written = kept.len();
    let mut scenarios_run = 0;
    run_grid(&grid, &opts, threads, &done, |results| {
        let rows: Vec<ResultRow> = results.iter().flat_map(rows_for).collect();
        rows_written += rows.len();
        scenarios_run += 1;
        writer.write_rows(&rows)
    })?;
    Ok(SimulateSummary { scenarios_run, scenarios_resumed: done.len(), rows_written })
}
