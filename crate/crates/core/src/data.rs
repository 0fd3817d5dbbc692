//! Trial datasets: clusters with an arm label and binary outcomes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Intervention,
}

impl Arm {
    /// Value of the arm indicator in the design row.
    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Intervention => 1,
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.indicator()
    }
}

impl TryFrom<u8> for Arm {
    type Error = Error;
    fn try_from(v: u8) -> Result<Arm> {
        match v {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Intervention),
            other => Err(Error::InvalidData(format!("arm must be 0 or 1, got {other}"))),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.indicator())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    id: String,
    arm: Arm,
    outcomes: Vec<u8>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, arm: Arm, outcomes: Vec<u8>) -> Result<Self> {
        let id = id.into();
        if outcomes.is_empty() {
            return Err(Error::InvalidData(format!("cluster {id} has no observations")));
        }
        if let Some(bad) = outcomes.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidData(format!("cluster {id} has non-binary outcome {bad}")));
        }
        Ok(Cluster { id, arm, outcomes })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn size(&self) -> usize {
        self.outcomes.len()
    }

    pub fn events(&self) -> usize {
        self.outcomes.iter().map(|&y| y as usize).sum()
    }
}

/// Per-arm counts used for initialization and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub clusters: usize,
    pub observations: usize,
    pub events: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialDataset {
    clusters: Vec<Cluster>,
}

impl TrialDataset {
    /// Requires at least two clusters with both arms represented.
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        if clusters.len() < 2 {
            return Err(Error::InvalidData(format!("need at least 2 clusters, got {}", clusters.len())));
        }
        for arm in [Arm::Control, Arm::Intervention] {
            if !clusters.iter().any(|c| c.arm == arm) {
                return Err(Error::InvalidData(format!("no clusters in arm {arm}; the arm effect is inestimable")));
            }
        }
        Ok(TrialDataset { clusters })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn total_observations(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(Cluster::size).max().unwrap_or(0)
    }

    pub fn arm_summary(&self, arm: Arm) -> ArmSummary {
        let (clusters, observations, events) = self
            .clusters
            .iter()
            .filter(|c| c.arm == arm)
            .fold((0, 0, 0), |(c, o, e), cl| (c + 1, o + cl.size(), e + cl.events()));
        ArmSummary {
            clusters,
            observations,
            events,
            proportion: if observations > 0 { events as f64 / observations as f64 } else { f64::NAN },
        }
    }
}
