//! Correlated binary outcomes under an exchangeable correlation.
//!
//! Outcomes in a cluster are drawn sequentially from a conditional linear
//! family: `y₁ ~ Bernoulli(μ)` and, for `j ≥ 2`,
//! `y_j ~ Bernoulli(μ + b_j Σ_{i<j}(y_i − μ))` with `b_j = ρ/(1 + (j−2)ρ)`.
//! Every `y_j` has mean `μ` and every pair has correlation `ρ`.
//!
//! Randomness comes from ChaCha8 streams keyed by (seed, scenario, replicate),
//! so a replicate's data does not depend on which thread generates it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Cluster, TrialDataset};
use crate::error::{domain, Error, Result};

pub type SimRng = ChaCha8Rng;

/// Smallest cluster size produced from a gamma draw.
pub const MIN_CLUSTER_SIZE: usize = 2;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies an independent deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub scenario: u64,
    pub replicate: u64,
}

impl RngStream {
    pub fn new(seed: u64, scenario: u64, replicate: u64) -> Self {
        RngStream { seed, scenario, replicate }
    }

    /// The key mixes the root seed with the scenario index; the replicate
    /// selects the ChaCha stream under that key.
    pub fn rng(&self) -> SimRng {
        let mut state = self.seed;
        let mut scenario_state = self.scenario ^ 0x5851_f42d_4c95_7f2d;
        state ^= splitmix64(&mut scenario_state);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.replicate);
        rng
    }
}

/// `b_j = ρ/(1 + (j−2)ρ)` for observation index `j ≥ 2` (1-based).
pub fn qaqish_coeff(rho: f64, j: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(domain("correlation must lie in [0, 1)", rho));
    }
    if j < 2 {
        return Err(domain("coefficient index must be at least 2", j));
    }
    Ok(rho / (1.0 + (j - 2) as f64 * rho))
}

/// One cluster of `m` exchangeable binary outcomes with mean `mu` and correlation `rho`.
pub fn generate_cluster<R: Rng + ?Sized>(mu: f64, rho: f64, m: usize, rng: &mut R) -> Result<Vec<u8>> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(domain("marginal mean must lie in (0, 1)", mu));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(domain("correlation must lie in [0, 1)", rho));
    }
    let mut out = Vec::with_capacity(m);
    let mut centered_sum = 0.0;
    for j in 1..=m {
        let lambda = if j == 1 { mu } else { mu + qaqish_coeff(rho, j)? * centered_sum };
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::GeneratorInvalid { position: j, lambda });
        }
        let y = u8::from(rng.random::<f64>() < lambda);
        centered_sum += y as f64 - mu;
        out.push(y);
    }
    Ok(out)
}

/// One unrounded draw from Gamma(shape = 1/cv², scale = mean·cv²).
pub fn gamma_size_draw<R: Rng + ?Sized>(mean_size: f64, cv: f64, rng: &mut R) -> Result<f64> {
    if !(mean_size >= 2.0) {
        return Err(domain("mean cluster size must be at least 2", mean_size));
    }
    if !(cv > 0.0) {
        return Err(domain("cluster size CV must be positive", cv));
    }
    let shape = 1.0 / (cv * cv);
    let scale = mean_size * cv * cv;
    let gamma = Gamma::new(shape, scale).map_err(|_| domain("invalid gamma parameters", cv))?;
    Ok(gamma.sample(rng))
}

/// Nearest integer, but never below [`MIN_CLUSTER_SIZE`].
pub fn round_cluster_size(draw: f64) -> usize {
    (draw.round().max(0.0) as usize).max(MIN_CLUSTER_SIZE)
}

pub fn gamma_cluster_sizes<R: Rng + ?Sized>(mean_size: f64, cv: f64, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    (0..n).map(|_| gamma_size_draw(mean_size, cv, rng).map(round_cluster_size)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterSize {
    Fixed { size: usize },
    Gamma { mean: f64, cv: f64 },
}

impl ClusterSize {
    /// Nominal (mean) size.
    pub fn nominal(&self) -> f64 {
        match *self {
            ClusterSize::Fixed { size } => size as f64,
            ClusterSize::Gamma { mean, .. } => mean,
        }
    }

    /// Coefficient of variation; zero for fixed sizes.
    pub fn cv(&self) -> f64 {
        match *self {
            ClusterSize::Fixed { .. } => 0.0,
            ClusterSize::Gamma { cv, .. } => cv,
        }
    }
}

/// One cell of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Position in the grid; also keys the random streams.
    pub index: u64,
    pub n_clusters: usize,
    pub cluster_size: ClusterSize,
    pub pi0: f64,
    pub pi1: f64,
    pub icc: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 2 || !self.n_clusters.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "number of clusters must be even and at least 2, got {}",
                self.n_clusters
            )));
        }
        for (name, p) in [("pi0", self.pi0), ("pi1", self.pi1)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        if !(0.0..1.0).contains(&self.icc) {
            return Err(Error::Config(format!("icc must lie in [0, 1), got {}", self.icc)));
        }
        match self.cluster_size {
            ClusterSize::Fixed { size: 0 } => return Err(Error::Config("fixed cluster size must be positive".into())),
            ClusterSize::Gamma { mean, cv } if !(mean >= 2.0 && cv > 0.0) => {
                return Err(Error::Config(format!(
                    "gamma cluster sizes need mean >= 2 and cv > 0, got mean {mean}, cv {cv}"
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn stream(&self, replicate: u64) -> RngStream {
        RngStream::new(self.seed, self.index, replicate)
    }
}

/// The replicate's trial: first N/2 clusters control, the rest intervention.
pub fn generate_trial(scenario: &Scenario, replicate: u64) -> Result<TrialDataset> {
    scenario.validate()?;
    let mut rng = scenario.stream(replicate).rng();
    let n = scenario.n_clusters;
    let sizes = match scenario.cluster_size {
        ClusterSize::Fixed { size } => vec![size; n],
        ClusterSize::Gamma { mean, cv } => gamma_cluster_sizes(mean, cv, n, &mut rng)?,
    };
    let clusters = sizes
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let (arm, mu) = if i < n / 2 { (Arm::Control, scenario.pi0) } else { (Arm::Intervention, scenario.pi1) };
            let y = generate_cluster(mu, scenario.icc, m, &mut rng)?;
            Cluster::new((i + 1).to_string(), arm, y)
        })
        .collect::<Result<Vec<_>>>()?;
    TrialDataset::new(clusters)
}
