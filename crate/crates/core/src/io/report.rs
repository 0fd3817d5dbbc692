//! Grouped summaries of a results file for plotting.

use std::io::Write;

use crate::error::{Error, Result};
use crate::io::results::{ResultRow, RESULTS_HEADER};
use crate::io::trial_csv::csv_io;

/// Columns that may be used for grouping.
pub const GROUP_COLUMNS: [&str; 9] =
    ["scenario_id", "n_clusters", "cluster_size", "cv", "pi0", "icc", "family", "link", "estimator"];

const SUMMARY_COLUMNS: [&str; 7] =
    ["n_rows", "mean_conv_rate", "mean_type1", "min_type1", "max_type1", "mean_pct_bias", "frac_acceptable"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: Vec<String>,
    pub n_rows: usize,
    pub mean_conv_rate: f64,
    pub mean_type1: Option<f64>,
    pub min_type1: Option<f64>,
    pub max_type1: Option<f64>,
    pub mean_pct_bias: Option<f64>,
    pub frac_acceptable: f64,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Groups rows by the given columns, in order of first appearance.
pub fn summarize(rows: &[ResultRow], by: &[String]) -> Result<Vec<SummaryRow>> {
    if by.is_empty() {
        return Err(Error::Usage("--by needs at least one column".into()));
    }
    for col in by {
        if !GROUP_COLUMNS.contains(&col.as_str()) {
            return Err(Error::Usage(format!("cannot group by '{col}'; choose from {}", GROUP_COLUMNS.join(","))));
        }
    }
    let mut groups: Vec<(Vec<String>, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let key: Vec<String> = by.iter().map(|c| r.column(c).expect("checked column")).collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, members)| {
            let conv: Vec<f64> = members.iter().map(|r| r.conv_rate).collect();
            let t1: Vec<f64> = members.iter().filter_map(|r| r.type1).collect();
            let bias: Vec<f64> = members.iter().filter_map(|r| r.pct_bias).collect();
            let acceptable = members.iter().filter(|r| r.acceptable).count();
            SummaryRow {
                key,
                n_rows: members.len(),
                mean_conv_rate: mean(&conv).unwrap_or(f64::NAN),
                mean_type1: mean(&t1),
                min_type1: t1.iter().copied().reduce(f64::min),
                max_type1: t1.iter().copied().reduce(f64::max),
                mean_pct_bias: mean(&bias),
                frac_acceptable: acceptable as f64 / members.len() as f64,
            }
        })
        .collect())
}

pub fn write_summary<W: Write>(by: &[String], rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = by.iter().map(String::as_str).chain(SUMMARY_COLUMNS).collect();
    w.write_record(&header).map_err(csv_io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = r.key.clone();
        rec.extend([
            r.n_rows.to_string(),
            r.mean_conv_rate.to_string(),
            opt(r.mean_type1),
            opt(r.min_type1),
            opt(r.max_type1),
            opt(r.mean_pct_bias),
            r.frac_acceptable.to_string(),
        ]);
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a comma-separated `--by` list.
pub fn parse_by(spec: &str) -> Vec<String> {
    spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

// the results header and the grouping columns must stay in step
const _: () = assert!(RESULTS_HEADER.len() == GROUP_COLUMNS.len() + 8);
