//! TOML simulation grid configuration.
//!
//! ```toml
//! seed = 20240601
//! replicates = 1000
//! output = "results.csv"
//! threads = 8
//! n_clusters = [10, 20]
//! cluster_sizes = [30, 50]
//! gamma_sizes = [{ mean = 30, cv = 0.5 }]
//! pi0 = [0.05, 0.3]
//! icc = [0.01, 0.05]
//! models = ["poisson-log", "gaussian-identity"]
//! estimators = ["Robust", "KC"]
//!
//! [fit]
//! max_iter = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::ClusterSize;
use crate::error::{Error, Result};
use crate::gee::{CorrelationStructure, FitOptions};
use crate::model::ModelSpec;
use crate::sandwich::{EstimatorKind, FG_DEFAULT_BOUND};
use crate::sim::{FactorialGrid, SimOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSizeConfig {
    pub mean: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub max_iter: Option<usize>,
    pub beta_tol: Option<f64>,
    pub score_tol: Option<f64>,
    pub max_step_halvings: Option<usize>,
    pub fg_bound: Option<f64>,
    pub alpha_level: Option<f64>,
    pub working_correlation: Option<CorrelationStructure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub n_clusters: Vec<usize>,
    #[serde(default)]
    pub cluster_sizes: Vec<usize>,
    #[serde(default)]
    pub gamma_sizes: Vec<GammaSizeConfig>,
    pub pi0: Vec<f64>,
    pub icc: Vec<f64>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_replicates() -> usize {
    1000
}

fn key_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl GridConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.to_grid()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Validates every key and builds the grid plus simulation options.
    pub fn to_grid(&self) -> Result<(FactorialGrid, SimOptions)> {
        if self.replicates == 0 {
            return Err(key_err("replicates", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(key_err("threads", "must be positive"));
        }
        if self.n_clusters.is_empty() {
            return Err(key_err("n_clusters", "must list at least one value"));
        }
        if let Some(n) = self.n_clusters.iter().find(|&&n| n < 2 || n % 2 != 0) {
            return Err(key_err("n_clusters", format!("{n} is not an even number of at least 2")));
        }
        if self.cluster_sizes.is_empty() && self.gamma_sizes.is_empty() {
            return Err(key_err("cluster_sizes", "give cluster_sizes or gamma_sizes"));
        }
        if self.cluster_sizes.contains(&0) {
            return Err(key_err("cluster_sizes", "sizes must be positive"));
        }
        for g in &self.gamma_sizes {
            if !(g.mean >= 2.0) || !(g.cv > 0.0) {
                return Err(key_err("gamma_sizes", format!("mean {} / cv {} out of range", g.mean, g.cv)));
            }
        }
        if self.pi0.is_empty() || self.pi0.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(key_err("pi0", "values must lie in (0, 1)"));
        }
        if self.icc.is_empty() || self.icc.iter().any(|&r| !(0.0..1.0).contains(&r)) {
            return Err(key_err("icc", "values must lie in [0, 1)"));
        }
        let models = if self.models.is_empty() {
            ModelSpec::all_two_arm()
        } else {
            self.models
                .iter()
                .map(|m| m.parse::<ModelSpec>().map_err(|e| key_err("models", e)))
                .collect::<Result<Vec<_>>>()?
        };
        let estimators = if self.estimators.is_empty() {
            EstimatorKind::ALL.to_vec()
        } else {
            self.estimators
                .iter()
                .map(|k| k.parse::<EstimatorKind>().map_err(|e| key_err("estimators", e)))
                .collect::<Result<Vec<_>>>()?
        };

        let defaults = FitOptions::<f64>::default();
        let f = &self.fit;
        let fit = FitOptions {
            max_iter: f.max_iter.unwrap_or(defaults.max_iter),
            beta_tol: f.beta_tol.unwrap_or(defaults.beta_tol),
            score_tol: f.score_tol.unwrap_or(defaults.score_tol),
            max_step_halvings: f.max_step_halvings.unwrap_or(defaults.max_step_halvings),
        };
        if !(fit.beta_tol > 0.0) {
            return Err(key_err("fit.beta_tol", "must be positive"));
        }
        if !(fit.score_tol > 0.0) {
            return Err(key_err("fit.score_tol", "must be positive"));
        }
        let fg_bound = f.fg_bound.unwrap_or(FG_DEFAULT_BOUND);
        if !(fg_bound > 0.0 && fg_bound <= 1.0) {
            return Err(key_err("fit.fg_bound", "must lie in (0, 1]"));
        }
        let alpha_level = f.alpha_level.unwrap_or(0.05);
        if !(alpha_level > 0.0 && alpha_level < 1.0) {
            return Err(key_err("fit.alpha_level", "must lie in (0, 1)"));
        }

        let cluster_sizes = self
            .cluster_sizes
            .iter()
            .map(|&size| ClusterSize::Fixed { size })
            .chain(self.gamma_sizes.iter().map(|g| ClusterSize::Gamma { mean: g.mean, cv: g.cv }))
            .collect();
        let grid = FactorialGrid {
            n_clusters: self.n_clusters.clone(),
            cluster_sizes,
            pi0: self.pi0.clone(),
            icc: self.icc.clone(),
            models,
            estimators,
            replicates: self.replicates,
            seed: self.seed,
        };
        grid.validate()?;
        let opts = SimOptions { fit, structure: f.working_correlation.unwrap_or_default(), fg_bound, alpha_level };
        Ok((grid, opts))
    }
}
