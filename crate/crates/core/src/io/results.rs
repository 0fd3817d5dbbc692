//! Long-format simulation results: one row per (scenario, model, estimator).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::trial_csv::csv_io;
use crate::sim::{type1_acceptable, ScenarioResult};

pub const RESULTS_HEADER: [&str; 17] = [
    "scenario_id",
    "n_clusters",
    "cluster_size",
    "cv",
    "pi0",
    "icc",
    "family",
    "link",
    "estimator",
    "n_rep",
    "n_conv",
    "conv_rate",
    "esd",
    "mean_se",
    "pct_bias",
    "type1",
    "acceptable",
];

/// One results row. Missing metrics are empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: u64,
    pub n_clusters: usize,
    pub cluster_size: f64,
    pub cv: f64,
    pub pi0: f64,
    pub icc: f64,
    pub family: String,
    pub link: String,
    pub estimator: String,
    pub n_rep: usize,
    pub n_conv: usize,
    pub conv_rate: f64,
    pub esd: Option<f64>,
    pub mean_se: Option<f64>,
    pub pct_bias: Option<f64>,
    pub type1: Option<f64>,
    pub acceptable: bool,
}

impl ResultRow {
    /// Value of a grouping column as text.
    pub fn column(&self, name: &str) -> Option<String> {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        Some(match name {
            "scenario_id" => self.scenario_id.to_string(),
            "n_clusters" => self.n_clusters.to_string(),
            "cluster_size" => self.cluster_size.to_string(),
            "cv" => self.cv.to_string(),
            "pi0" => self.pi0.to_string(),
            "icc" => self.icc.to_string(),
            "family" => self.family.clone(),
            "link" => self.link.clone(),
            "estimator" => self.estimator.clone(),
            "n_rep" => self.n_rep.to_string(),
            "n_conv" => self.n_conv.to_string(),
            "conv_rate" => self.conv_rate.to_string(),
            "esd" => fmt_opt(self.esd),
            "mean_se" => fmt_opt(self.mean_se),
            "pct_bias" => fmt_opt(self.pct_bias),
            "type1" => fmt_opt(self.type1),
            "acceptable" => self.acceptable.to_string(),
            _ => return None,
        })
    }
}

pub fn rows_for(result: &ScenarioResult) -> Vec<ResultRow> {
    let s = &result.scenario;
    result
        .estimators
        .iter()
        .map(|e| ResultRow {
            scenario_id: s.index,
            n_clusters: s.n_clusters,
            cluster_size: s.cluster_size.nominal(),
            cv: s.cluster_size.cv(),
            pi0: s.pi0,
            icc: s.icc,
            family: result.spec.family().to_string(),
            link: result.spec.link().to_string(),
            estimator: e.kind.to_string(),
            n_rep: result.n_replicates,
            n_conv: result.n_converged,
            conv_rate: result.convergence_rate,
            esd: result.esd,
            mean_se: e.mean_se,
            pct_bias: e.percent_bias,
            type1: e.type1_error,
            acceptable: e.acceptable(),
        })
        .collect()
}

/// Appends rows to an open results stream, writing the header first if asked.
pub struct ResultsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(writer: W, write_header: bool) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        if write_header {
            inner.write_record(RESULTS_HEADER).map_err(csv_io)?;
        }
        Ok(ResultsWriter { inner })
    }

    pub fn write_rows(&mut self, rows: &[ResultRow]) -> Result<()> {
        for r in rows {
            self.inner.serialize(r).map_err(csv_io)?;
        }
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads and validates a results file: exact header, parseable rows, and an
/// `acceptable` flag consistent with `type1`.
pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Schema(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::Schema(format!("expected header '{}'", RESULTS_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<ResultRow>() {
        let row = rec.map_err(|e| Error::Schema(e.to_string()))?;
        let expected = row.type1.is_some_and(type1_acceptable);
        if row.acceptable != expected {
            return Err(Error::Schema(format!(
                "scenario {} estimator {}: acceptable flag disagrees with type1",
                row.scenario_id, row.estimator
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
