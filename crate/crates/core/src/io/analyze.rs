//! Single-trial analysis report.

use serde::{Deserialize, Serialize};

use crate::data::{Arm, ArmSummary, TrialDataset};
use crate::error::{Error, Result};
use crate::gee::{fit_gee, CorrelationStructure, FitOptions};
use crate::inference::{wald_from_parts, wald_inference, InferenceResult, WaldDistribution};
use crate::model::{EffectMeasure, ModelSpec};
use crate::sandwich::{estimate_all, EstimatorKind};

/// Reference distribution for the Wald statistic in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// t with N − p degrees of freedom.
    #[default]
    T,
    /// Standard normal; diagnostic only.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: Arm,
    #[serde(flatten)]
    pub summary: ArmSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    /// Variance of the arm coefficient, the (1,1) entry of the covariance.
    pub variance: Option<f64>,
    pub inference: Option<InferenceResult<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub model: String,
    pub effect_measure: EffectMeasure,
    pub n_clusters: usize,
    pub n_observations: usize,
    pub arms: Vec<ArmReport>,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub failure: Option<String>,
    /// Estimated exchangeable working correlation.
    pub icc: Option<f64>,
    pub phi: Option<f64>,
    pub alpha_clamped: Option<bool>,
    pub beta: Option<Vec<f64>>,
    pub reference: Reference,
    pub confidence_level: f64,
    pub estimates: Vec<EstimateReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub confidence_level: f64,
    pub fg_bound: f64,
    pub reference: Reference,
    pub structure: CorrelationStructure,
    pub fit: FitOptions<f64>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            confidence_level: 0.95,
            fg_bound: crate::sandwich::FG_DEFAULT_BOUND,
            reference: Reference::T,
            structure: CorrelationStructure::Exchangeable,
            fit: FitOptions::default(),
        }
    }
}

/// Fits `spec` and reports each requested estimator. Non-convergence yields
/// a report with `converged = false` rather than an error.
pub fn analyze(
    data: &TrialDataset,
    spec: &ModelSpec,
    kinds: &[EstimatorKind],
    opts: &AnalyzeOptions,
) -> Result<AnalysisReport> {
    let level = opts.confidence_level;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let alpha_level = 1.0 - level;
    let mut report = AnalysisReport {
        model: spec.to_string(),
        effect_measure: spec.link().effect_measure(),
        n_clusters: data.n_clusters(),
        n_observations: data.total_observations(),
        arms: [Arm::Control, Arm::Intervention]
            .into_iter()
            .map(|arm| ArmReport { arm, summary: data.arm_summary(arm) })
            .collect(),
        converged: false,
        iterations: None,
        failure: None,
        icc: None,
        phi: None,
        alpha_clamped: None,
        beta: None,
        reference: opts.reference,
        confidence_level: level,
        estimates: Vec::new(),
    };

    let fit = match fit_gee::<f64>(data, spec, opts.structure, &opts.fit) {
        Ok(f) => f,
        Err(e @ Error::NonConvergence { iterations, .. }) => {
            report.iterations = Some(iterations);
            report.failure = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.converged = true;
    report.iterations = Some(fit.iterations);
    report.icc = Some(fit.alpha);
    report.phi = Some(fit.phi);
    report.alpha_clamped = Some(fit.alpha_clamped);
    report.beta = Some(fit.beta.clone());

    report.estimates = estimate_all(&fit, kinds, opts.fg_bound)?
        .into_iter()
        .map(|(kind, est)| {
            let result = est.and_then(|v| {
                let variance = v.cov[(1, 1)];
                let inf = match opts.reference {
                    Reference::T => wald_inference(&fit, &v, spec.link().effect_measure(), alpha_level),
                    Reference::Normal => wald_from_parts(
                        fit.beta[1],
                        variance.max(0.0).sqrt(),
                        WaldDistribution::Normal,
                        spec.link(),
                        kind,
                        alpha_level,
                    ),
                }?;
                Ok((variance, inf))
            });
            match result {
                Ok((variance, inf)) => {
                    EstimateReport { estimator: kind, variance: Some(variance), inference: Some(inf), error: None }
                }
                Err(e) => {
                    EstimateReport { estimator: kind, variance: None, inference: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    Ok(report)
}

impl AnalysisReport {
    /// Pretty JSON with round-trip float formatting.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Parses a comma-separated estimator list such as `robust,kc,avg`.
pub fn parse_estimators(list: &str) -> Result<Vec<EstimatorKind>> {
    let kinds = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<EstimatorKind>>>()?;
    if kinds.is_empty() {
        return Err(Error::Usage("no estimators requested".into()));
    }
    Ok(kinds)
}
