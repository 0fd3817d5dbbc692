//! Individual-level trial CSV with header `cluster_id,arm,outcome`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::data::{Arm, Cluster, TrialDataset};
use crate::error::{Error, Result};

pub const TRIAL_HEADER: [&str; 3] = ["cluster_id", "arm", "outcome"];

/// Reads a trial CSV. Clusters are ordered by id, so row order does not matter.
pub fn read_trial_csv<R: Read>(reader: R) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e))?.clone();
    if header.iter().collect::<Vec<_>>() != TRIAL_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header '{}', found '{}'",
                TRIAL_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut clusters: BTreeMap<String, (Arm, Vec<u8>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty cluster_id".into() });
        }
        let arm = parse_binary(&rec[1], "arm", line)
            .and_then(|a| Arm::try_from(a).map_err(|e| Error::Parse { line, message: e.to_string() }))?;
        let y = parse_binary(&rec[2], "outcome", line)?;
        let entry = clusters.entry(id.clone()).or_insert((arm, Vec::new()));
        if entry.0 != arm {
            return Err(Error::Parse { line, message: format!("cluster {id} appears in both arms") });
        }
        entry.1.push(y);
    }
    if clusters.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    let clusters = clusters.into_iter().map(|(id, (arm, y))| Cluster::new(id, arm, y)).collect::<Result<Vec<_>>>()?;
    TrialDataset::new(clusters)
}

pub fn load_trial_csv(path: &Path) -> Result<TrialDataset> {
    let f = std::fs::File::open(path)?;
    read_trial_csv(std::io::BufReader::new(f))
}

/// Writes a dataset in the same format, one row per observation.
pub fn write_trial_csv<W: std::io::Write>(data: &TrialDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIAL_HEADER).map_err(csv_io)?;
    for c in data.clusters() {
        for &y in c.outcomes() {
            w.write_record([c.id(), &c.arm().to_string(), &y.to_string()]).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_binary(field: &str, name: &str, line: usize) -> Result<u8> {
    match field {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse { line, message: format!("{name} must be 0 or 1, got '{other}'") }),
    }
}

fn parse_err(line: usize, e: csv::Error) -> Error {
    Error::Parse { line, message: e.to_string() }
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
