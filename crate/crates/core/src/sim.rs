//! Monte Carlo study: replicate generation, model fitting, aggregation.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_trial, ClusterSize, Scenario};
use crate::error::{Error, FailureReason, Result};
use crate::gee::{fit_gee, CorrelationStructure, FitOptions};
use crate::inference::{wald_from_parts, WaldDistribution};
use crate::model::ModelSpec;
use crate::sandwich::{estimate_all, EstimatorKind, FG_DEFAULT_BOUND};

/// Type I error rates inside this closed band count as acceptable.
pub const ACCEPTABLE_TYPE1: (f64, f64) = (0.036, 0.064);

pub fn type1_acceptable(rate: f64) -> bool {
    rate >= ACCEPTABLE_TYPE1.0 && rate <= ACCEPTABLE_TYPE1.1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub fit: FitOptions<f64>,
    pub structure: CorrelationStructure,
    pub fg_bound: f64,
    pub alpha_level: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            fit: FitOptions::default(),
            structure: CorrelationStructure::Exchangeable,
            fg_bound: FG_DEFAULT_BOUND,
            alpha_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub kind: EstimatorKind,
    /// NaN when the estimator failed on this replicate.
    pub se: f64,
    pub p_value: f64,
}

impl EstimateRecord {
    pub fn is_valid(&self) -> bool {
        self.se.is_finite() && self.p_value.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub spec: ModelSpec,
    pub converged: bool,
    pub failure: Option<FailureReason>,
    pub beta1: f64,
    pub alpha_clamped: bool,
    pub q_max: f64,
    pub estimates: Vec<EstimateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub models: Vec<ModelRecord>,
}

/// Generates one dataset and analyzes it with every model. Model failures are
/// recorded, not returned; only an invalid scenario is an error.
pub fn run_replicate(
    scenario: &Scenario,
    replicate: u64,
    specs: &[ModelSpec],
    kinds: &[EstimatorKind],
    opts: &SimOptions,
) -> Result<ReplicateRecord> {
    let data = generate_trial(scenario, replicate)?;
    let models = specs.iter().map(|spec| analyze_one(&data, spec, kinds, opts)).collect();
    Ok(ReplicateRecord { replicate, models })
}

fn analyze_one(
    data: &crate::data::TrialDataset,
    spec: &ModelSpec,
    kinds: &[EstimatorKind],
    opts: &SimOptions,
) -> ModelRecord {
    let failed = |failure| ModelRecord {
        spec: *spec,
        converged: false,
        failure,
        beta1: f64::NAN,
        alpha_clamped: false,
        q_max: f64::NAN,
        estimates: kinds.iter().map(|&kind| EstimateRecord { kind, se: f64::NAN, p_value: f64::NAN }).collect(),
    };
    let fit = match fit_gee::<f64>(data, spec, opts.structure, &opts.fit) {
        Ok(f) => f,
        Err(Error::NonConvergence { reason, .. }) => return failed(Some(reason)),
        Err(_) => return failed(None),
    };
    let Ok(all) = estimate_all(&fit, kinds, opts.fg_bound) else {
        return failed(Some(FailureReason::SingularInformation));
    };
    let mut q_max = f64::NAN;
    let estimates = all
        .into_iter()
        .map(|(kind, est)| {
            let est = est.ok().and_then(|v| {
                if kind == EstimatorKind::Robust {
                    q_max = v.diagnostics.q_max;
                }
                let se = v.cov[(1, 1)].max(0.0).sqrt();
                wald_from_parts(
                    fit.beta[1],
                    se,
                    WaldDistribution::StudentT { df: fit.df() },
                    spec.link(),
                    kind,
                    opts.alpha_level,
                )
                .ok()
            });
            match est {
                Some(r) => EstimateRecord { kind, se: r.se, p_value: r.p_value },
                None => EstimateRecord { kind, se: f64::NAN, p_value: f64::NAN },
            }
        })
        .collect();
    ModelRecord {
        spec: *spec,
        converged: true,
        failure: None,
        beta1: fit.beta[1],
        alpha_clamped: fit.alpha_clamped,
        q_max,
        estimates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    /// Converged replicates on which this estimator produced a standard error.
    pub n_valid: usize,
    pub mean_se: Option<f64>,
    pub percent_bias: Option<f64>,
    pub rejections: usize,
    pub type1_error: Option<f64>,
}

impl EstimatorSummary {
    pub fn acceptable(&self) -> bool {
        self.type1_error.is_some_and(type1_acceptable)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDiagnostics {
    pub alpha_clamped: usize,
    pub iteration_limit: usize,
    pub step_halving_exhausted: usize,
    pub singular_information: usize,
    /// Failed estimator evaluations on converged replicates, summed over estimators.
    pub estimator_failures: usize,
    /// Converged replicates with some `Q_i` eigenvalue at or above one.
    pub q_max_at_least_one: usize,
    /// Type I error did not follow Robust ≥ KC ≥ MD.
    pub ordering_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub spec: ModelSpec,
    pub n_replicates: usize,
    pub n_converged: usize,
    pub convergence_rate: f64,
    /// Sample SD (divisor n−1) of converged arm-effect estimates.
    pub esd: Option<f64>,
    pub estimators: Vec<EstimatorSummary>,
    pub diagnostics: ScenarioDiagnostics,
}

impl ScenarioResult {
    pub fn estimator(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.kind == kind)
    }
}

/// Folds one model's replicate records into performance metrics.
/// Only converged replicates enter the ESD, SE and Type I error summaries.
pub fn aggregate(
    scenario: &Scenario,
    spec: &ModelSpec,
    records: &[ModelRecord],
    kinds: &[EstimatorKind],
    alpha_level: f64,
) -> ScenarioResult {
    let converged: Vec<&ModelRecord> = records.iter().filter(|r| r.converged).collect();
    let n_conv = converged.len();
    let esd = (n_conv >= 2).then(|| {
        let mean = converged.iter().map(|r| r.beta1).sum::<f64>() / n_conv as f64;
        let ss: f64 = converged.iter().map(|r| (r.beta1 - mean).powi(2)).sum();
        (ss / (n_conv - 1) as f64).sqrt()
    });

    let mut diagnostics = ScenarioDiagnostics::default();
    for r in records {
        match r.failure {
            Some(FailureReason::IterationLimit) => diagnostics.iteration_limit += 1,
            Some(FailureReason::StepHalvingExhausted) => diagnostics.step_halving_exhausted += 1,
            Some(FailureReason::SingularInformation) => diagnostics.singular_information += 1,
            None => {}
        }
    }
    for r in &converged {
        diagnostics.alpha_clamped += usize::from(r.alpha_clamped);
        diagnostics.q_max_at_least_one += usize::from(r.q_max >= 1.0);
        diagnostics.estimator_failures += r.estimates.iter().filter(|e| !e.is_valid()).count();
    }

    let estimators: Vec<EstimatorSummary> = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let valid: Vec<&EstimateRecord> =
                converged.iter().map(|r| &r.estimates[k]).filter(|e| e.is_valid()).collect();
            let n_valid = valid.len();
            let mean_se = (n_valid > 0).then(|| valid.iter().map(|e| e.se).sum::<f64>() / n_valid as f64);
            let percent_bias = esd.filter(|&s| s > 0.0).and_then(|s| {
                (n_valid > 0).then(|| valid.iter().map(|e| (e.se - s) / s * 100.0).sum::<f64>() / n_valid as f64)
            });
            let rejections = valid.iter().filter(|e| e.p_value < alpha_level).count();
            EstimatorSummary {
                kind,
                n_valid,
                mean_se,
                percent_bias,
                rejections,
                type1_error: (n_valid > 0).then(|| rejections as f64 / n_valid as f64),
            }
        })
        .collect();

    let rate = |kind| estimators.iter().find(|e| e.kind == kind).and_then(|e| e.type1_error);
    if let (Some(r), Some(kc), Some(md)) =
        (rate(EstimatorKind::Robust), rate(EstimatorKind::KC), rate(EstimatorKind::MD))
    {
        diagnostics.ordering_violation = !(r >= kc && kc >= md);
    }

    ScenarioResult {
        scenario: *scenario,
        spec: *spec,
        n_replicates: records.len(),
        n_converged: n_conv,
        convergence_rate: if records.is_empty() { 0.0 } else { n_conv as f64 / records.len() as f64 },
        esd,
        estimators,
        diagnostics,
    }
}

/// Full factorial design over cluster count, cluster size, outcome proportion and ICC.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorialGrid {
    pub n_clusters: Vec<usize>,
    pub cluster_sizes: Vec<ClusterSize>,
    pub pi0: Vec<f64>,
    pub icc: Vec<f64>,
    pub models: Vec<ModelSpec>,
    pub estimators: Vec<EstimatorKind>,
    pub replicates: usize,
    pub seed: u64,
}

impl FactorialGrid {
    /// Expands the grid with cluster count outermost and ICC innermost.
    /// Arms share the outcome proportion.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &n in &self.n_clusters {
            for &size in &self.cluster_sizes {
                for &pi0 in &self.pi0 {
                    for &icc in &self.icc {
                        out.push(Scenario {
                            index: out.len() as u64,
                            n_clusters: n,
                            cluster_size: size,
                            pi0,
                            pi1: pi0,
                            icc,
                            replicates: self.replicates,
                            seed: self.seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("at least one model and one estimator are required".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        for s in self.scenarios() {
            s.validate()?;
        }
        Ok(())
    }
}

/// Runs one scenario, parallel over replicates in the current rayon pool.
pub fn run_scenario(
    scenario: &Scenario,
    specs: &[ModelSpec],
    kinds: &[EstimatorKind],
    opts: &SimOptions,
) -> Result<Vec<ScenarioResult>> {
    let records: Vec<ReplicateRecord> = (0..scenario.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(scenario, r, specs, kinds, opts))
        .collect::<Result<_>>()?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let per_model: Vec<ModelRecord> = records.iter().map(|r| r.models[m].clone()).collect();
            aggregate(scenario, spec, &per_model, kinds, opts.alpha_level)
        })
        .collect())
}

/// Runs every scenario not in `skip`, handing each scenario's results to
/// `sink` as soon as they are complete. Output does not depend on `threads`.
pub fn run_grid(
    grid: &FactorialGrid,
    opts: &SimOptions,
    threads: usize,
    skip: &HashSet<u64>,
    mut sink: impl FnMut(&[ScenarioResult]) -> Result<()>,
) -> Result<Vec<ScenarioResult>> {
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let mut all = Vec::new();
    for scenario in grid.scenarios() {
        if skip.contains(&scenario.index) {
            continue;
        }
        let results = pool.install(|| run_scenario(&scenario, &grid.models, &grid.estimators, opts))?;
        sink(&results)?;
        all.extend(results);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, Link};

    fn scenario() -> Scenario {
        Scenario {
            index: 0,
            n_clusters: 10,
            cluster_size: ClusterSize::Fixed { size: 20 },
            pi0: 0.3,
            pi1: 0.3,
            icc: 0.05,
            replicates: 5,
            seed: 11,
        }
    }

    fn record(beta1: f64, se: f64, p: f64) -> ModelRecord {
        ModelRecord {
            spec: ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap(),
            converged: true,
            failure: None,
            beta1,
            alpha_clamped: false,
            q_max: 0.2,
            estimates: vec![EstimateRecord { kind: EstimatorKind::Robust, se, p_value: p }],
        }
    }

    #[test]
    fn percent_bias_is_zero_when_se_equals_esd() {
        let betas = [0.1, -0.2, 0.05, 0.3, -0.1];
        let mean = betas.iter().sum::<f64>() / 5.0;
        let esd = (betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        let spec = ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap();
        let recs: Vec<_> = betas.iter().map(|&b| record(b, esd, 0.5)).collect();
        let r = aggregate(&scenario(), &spec, &recs, &[EstimatorKind::Robust], 0.05);
        assert!(r.estimators[0].percent_bias.unwrap().abs() < 1e-12);
        let recs: Vec<_> = betas.iter().map(|&b| record(b, 1.1 * esd, 0.5)).collect();
        let r = aggregate(&scenario(), &spec, &recs, &[EstimatorKind::Robust], 0.05);
        assert!((r.estimators[0].percent_bias.unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_fixture() {
        // beta1 = 0.1, 0.3, -0.2, 0.0, 0.4 -> mean 0.12, SS = 0.228, ESD = sqrt(0.057)
        let spec = ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap();
        let recs = vec![
            record(0.1, 0.2, 0.60),
            record(0.3, 0.25, 0.04),
            record(-0.2, 0.3, 0.49),
            record(0.0, 0.2, 1.0),
            record(0.4, 0.25, 0.01),
        ];
        let r = aggregate(&scenario(), &spec, &recs, &[EstimatorKind::Robust], 0.05);
        let esd = 0.057f64.sqrt();
        assert!((r.esd.unwrap() - esd).abs() < 1e-12);
        // mean SE 0.24, bias = (0.24 - esd)/esd*100
        let e = &r.estimators[0];
        assert!((e.mean_se.unwrap() - 0.24).abs() < 1e-12);
        assert!((e.percent_bias.unwrap() - (0.24 - esd) / esd * 100.0).abs() < 1e-9);
        assert_eq!(e.rejections, 2);
        assert_eq!(e.type1_error, Some(0.4));
        assert!(!e.acceptable());
    }

    #[test]
    fn failures_leave_denominators_converged_only() {
        let spec = ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap();
        let mut recs = vec![record(0.1, 0.2, 0.01), record(0.2, 0.2, 0.5)];
        recs.push(ModelRecord {
            converged: false,
            failure: Some(FailureReason::IterationLimit),
            beta1: f64::NAN,
            ..record(0.0, f64::NAN, f64::NAN)
        });
        let r = aggregate(&scenario(), &spec, &recs, &[EstimatorKind::Robust], 0.05);
        assert_eq!(r.n_converged, 2);
        assert!((r.convergence_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.estimators[0].type1_error, Some(0.5));
        assert_eq!(r.diagnostics.iteration_limit, 1);

        let r = aggregate(&scenario(), &spec, &recs[..1], &[EstimatorKind::Robust], 0.05);
        assert!(r.esd.is_none());
        assert!(r.estimators[0].percent_bias.is_none());
    }

    #[test]
    fn acceptance_band_is_closed() {
        assert!(type1_acceptable(0.036));
        assert!(type1_acceptable(0.064));
        assert!(!type1_acceptable(0.065));
        assert!(!type1_acceptable(0.035));
    }

    #[test]
    fn gaussian_identity_always_converges_and_zero_arm_log_binomial_fails() {
        let specs = ModelSpec::all_two_arm();
        let s = scenario();
        for r in 0..5 {
            let rec = run_replicate(&s, r, &specs, &EstimatorKind::ALL, &SimOptions::default()).unwrap();
            let g = rec.models.iter().find(|m| m.spec.family() == Family::Gaussian).unwrap();
            assert!(g.converged);
            assert_eq!(rec, run_replicate(&s, r, &specs, &EstimatorKind::ALL, &SimOptions::default()).unwrap());
        }
        // rare outcome, tiny clusters: find a replicate with an event-free arm
        let rare = Scenario { pi0: 0.02, pi1: 0.02, cluster_size: ClusterSize::Fixed { size: 5 }, icc: 0.01, ..s };
        let spec = ModelSpec::two_arm(Family::Binomial, Link::Log).unwrap();
        let mut seen = false;
        for r in 0..200 {
            let d = generate_trial(&rare, r).unwrap();
            let empty = d.arm_summary(crate::data::Arm::Intervention).events == 0
                || d.arm_summary(crate::data::Arm::Control).events == 0;
            if empty {
                let rec = run_replicate(&rare, r, &[spec], &EstimatorKind::ALL, &SimOptions::default()).unwrap();
                assert!(!rec.models[0].converged);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn grid_expansion_counts() {
        let grid = FactorialGrid {
            n_clusters: vec![10, 20, 30, 40, 50],
            cluster_sizes: [10, 30, 50, 100].iter().map(|&size| ClusterSize::Fixed { size }).collect(),
            pi0: vec![0.02, 0.05, 0.1, 0.3, 0.5],
            icc: vec![0.01, 0.05, 0.1],
            models: ModelSpec::all_two_arm(),
            estimators: EstimatorKind::ALL.to_vec(),
            replicates: 1000,
            seed: 1,
        };
        let s = grid.scenarios();
        assert_eq!(s.len(), 300);
        assert!(s.iter().enumerate().all(|(i, sc)| sc.index == i as u64));
        grid.validate().unwrap();
    }

    #[test]
    fn single_replicate_passthrough() {
        let grid = FactorialGrid {
            n_clusters: vec![10],
            cluster_sizes: vec![ClusterSize::Fixed { size: 20 }],
            pi0: vec![0.3],
            icc: vec![0.05],
            models: vec![ModelSpec::two_arm(Family::Gaussian, Link::Identity).unwrap()],
            estimators: EstimatorKind::ALL.to_vec(),
            replicates: 1,
            seed: 3,
        };
        let out = run_grid(&grid, &SimOptions::default(), 2, &HashSet::new(), |_| Ok(())).unwrap();
        assert_eq!(out.len(), 1);
        let rec =
            run_replicate(&grid.scenarios()[0], 0, &grid.models, &grid.estimators, &SimOptions::default()).unwrap();
        let kc = out[0].estimator(EstimatorKind::KC).unwrap();
        assert_eq!(kc.mean_se, Some(rec.models[0].estimates[2].se));
        assert!(out[0].esd.is_none());
    }
}
