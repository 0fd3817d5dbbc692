//! Marginal mean model fitting by generalized estimating equations.
//!
//! The working covariance of cluster `i` is `V_i = A_i^{1/2} R_i(α) A_i^{1/2}`
//! with `A_i` the diagonal of variance-function values and `R_i` exchangeable.
//! The dispersion `φ` is kept outside `V_i`. Every product with `V_i⁻¹` uses
//! the closed-form exchangeable inverse
//! `R⁻¹ = (1/(1−α)) [I − α/(1+(m−1)α) J]`, so a cluster costs O(m·p²).

use serde::{Deserialize, Serialize};

use crate::data::{Arm, TrialDataset};
use crate::error::{Error, FailureReason, Result};
use crate::linalg::Mat;
use crate::model::{Family, Link, MeanModel, ModelSpec};
use crate::Scalar;

/// Distance kept between α̂ and the edges of the positive-definite range.
pub const ALPHA_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationStructure {
    #[default]
    Exchangeable,
    Independence,
}

/// Closed interval α̂ is clamped into for clusters of at most `max_size` members.
pub fn alpha_bounds<T: Scalar>(max_size: usize) -> (T, T) {
    if max_size < 2 {
        return (T::zero(), T::zero());
    }
    let margin = T::lit(ALPHA_MARGIN);
    let lo = -T::one() / T::from_count(max_size - 1) + margin;
    (lo, T::one() - margin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub max_iter: usize,
    /// Convergence threshold on `max |Δβ|`.
    pub beta_tol: T,
    /// Convergence threshold on `‖Σ D′V⁻¹(Y−μ)‖∞`.
    pub score_tol: T,
    pub max_step_halvings: usize,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        let eps = T::epsilon();
        FitOptions {
            max_iter: 50,
            beta_tol: T::lit(1e-8).max(eps * T::lit(64.0)),
            score_tol: T::lit(1e-6).max(eps * T::lit(1e3)),
            max_step_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates<T> {
    pub alpha: T,
    pub phi: T,
    /// The raw moment estimate of α fell outside [`alpha_bounds`].
    pub alpha_clamped: bool,
}

/// Moment estimators of the dispersion and exchangeable correlation from
/// Pearson residuals `e_ij = (y_ij − μ_ij)/√V(μ_ij)`, one slice per cluster.
///
/// `φ̂ = Σ e² / (Σ m_i − p)` and
/// `α̂ = [Σ_i Σ_{j<k} e_ij e_ik / (Σ_i m_i(m_i−1)/2 − p)] / φ̂`.
/// A denominator that would be non-positive after subtracting `p` falls back
/// to the raw count.
pub fn estimate_alpha_phi<T: Scalar>(
    pearson: &[Vec<T>],
    n_params: usize,
    structure: CorrelationStructure,
) -> MomentEstimates<T> {
    let n_obs: usize = pearson.iter().map(Vec::len).sum();
    let n_pairs: usize = pearson.iter().map(|e| e.len() * e.len().saturating_sub(1) / 2).sum();
    let max_size = pearson.iter().map(Vec::len).max().unwrap_or(0);

    let sum_sq: T = pearson.iter().flatten().map(|&e| e * e).sum();
    let phi = sum_sq / adjusted_count::<T>(n_obs, n_params);

    if structure == CorrelationStructure::Independence || n_pairs == 0 || phi <= T::zero() {
        return MomentEstimates { alpha: T::zero(), phi, alpha_clamped: false };
    }

    let two = T::lit(2.0);
    let cross: T = pearson
        .iter()
        .map(|e| {
            let s: T = e.iter().copied().sum();
            let ss: T = e.iter().map(|&x| x * x).sum();
            (s * s - ss) / two
        })
        .sum();
    let raw = cross / adjusted_count::<T>(n_pairs, n_params) / phi;
    let (lo, hi) = alpha_bounds::<T>(max_size);
    let alpha = raw.max(lo).min(hi);
    MomentEstimates { alpha, phi, alpha_clamped: alpha != raw }
}

fn adjusted_count<T: Scalar>(count: usize, n_params: usize) -> T {
    if count > n_params {
        T::from_count(count - n_params)
    } else {
        T::from_count(count.max(1))
    }
}

/// Starting values from clamped arm proportions on the link scale.
pub fn initialize_beta<T: Scalar>(data: &TrialDataset, spec: &ModelSpec) -> Vec<T> {
    let n_total = data.total_observations();
    let floor = T::lit(0.5) / T::from_count(n_total);
    let link = spec.link();
    let transform = |p: f64| -> T {
        let p = T::lit(p);
        if spec.family() == Family::Gaussian && link == Link::Identity {
            return p;
        }
        let clamped = p.max(floor).min(T::one() - floor);
        link.apply(clamped).expect("clamped proportion lies inside every link domain")
    };
    match spec.mean_model() {
        MeanModel::InterceptOnly => {
            let events: usize = data.clusters().iter().map(|c| c.events()).sum();
            vec![transform(events as f64 / n_total as f64)]
        }
        MeanModel::InterceptPlusArm => {
            let b0 = transform(data.arm_summary(Arm::Control).proportion);
            let b1 = transform(data.arm_summary(Arm::Intervention).proportion);
            vec![b0, b1 - b0]
        }
    }
}

/// Per-cluster quantities at the fitted parameters.
#[derive(Debug, Clone)]
pub struct ClusterTerms<T> {
    pub arm: Arm,
    pub outcomes: Vec<T>,
    pub mu: Vec<T>,
    /// `D_i = ∂μ_i/∂β′`, one row per observation.
    pub deriv: Vec<Vec<T>>,
    /// `√V(μ_ij)`, the diagonal of `A_i^{1/2}`.
    pub std_dev: Vec<T>,
    /// `Y_i − μ_i`
    pub residuals: Vec<T>,
    /// `D_i′ V_i⁻¹ D_i`
    pub info: Mat<T>,
    /// `D_i′ V_i⁻¹ (Y_i − μ_i)`
    pub score: Vec<T>,
}

impl<T: Scalar> ClusterTerms<T> {
    pub fn size(&self) -> usize {
        self.outcomes.len()
    }
}

/// A converged GEE fit together with what the variance estimators need.
#[derive(Debug, Clone)]
pub struct GeeFit<T> {
    pub spec: ModelSpec,
    pub structure: CorrelationStructure,
    pub beta: Vec<T>,
    pub alpha: T,
    pub phi: T,
    pub alpha_clamped: bool,
    pub iterations: usize,
    pub clusters: Vec<ClusterTerms<T>>,
    /// `B = Σ_i D_i′V_i⁻¹D_i` (unnormalized).
    pub info_sum: Mat<T>,
    /// `B⁻¹`
    pub info_inverse: Mat<T>,
}

impl<T: Scalar> GeeFit<T> {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_params(&self) -> usize {
        self.beta.len()
    }

    pub fn total_observations(&self) -> usize {
        self.clusters.iter().map(ClusterTerms::size).sum()
    }

    /// `Σ̂₁ = N⁻¹ B`
    pub fn bread(&self) -> Mat<T> {
        self.info_sum.scale(T::one() / T::from_count(self.n_clusters()))
    }

    /// `‖Σ_i D_i′V_i⁻¹(Y_i − μ_i)‖∞` at the fitted parameters.
    pub fn score_norm(&self) -> T {
        let p = self.n_params();
        (0..p).map(|k| self.clusters.iter().map(|c| c.score[k]).sum::<T>().abs()).fold(T::zero(), T::max)
    }

    /// Residual degrees of freedom `N − p` used for t inference.
    pub fn df(&self) -> T {
        T::from_count(self.n_clusters()) - T::from_count(self.n_params())
    }
}

struct ClusterState<T> {
    arm: Arm,
    outcomes: Vec<T>,
    mu: T,
    deriv_row: Vec<T>,
    std_dev: T,
}

/// Evaluates means at `beta`; `None` when any mean leaves the family's range.
fn evaluate<T: Scalar>(
    data: &TrialDataset,
    spec: &ModelSpec,
    beta: &[T],
    outcomes: &[Vec<T>],
) -> Option<Vec<ClusterState<T>>> {
    data.clusters()
        .iter()
        .zip(outcomes)
        .map(|(c, y)| {
            let x = spec.design_row::<T>(c.arm().indicator());
            let eta: T = x.iter().zip(beta).map(|(&a, &b)| a * b).sum();
            let mu = spec.link().inverse(eta);
            if !spec.family().mean_in_range(mu) {
                return None;
            }
            let var = spec.family().variance(mu).ok()?;
            if !(var > T::zero()) || !var.is_finite() {
                return None;
            }
            let dmu = spec.link().mu_deriv(eta);
            Some(ClusterState {
                arm: c.arm(),
                outcomes: y.clone(),
                mu,
                deriv_row: x.iter().map(|&xk| xk * dmu).collect(),
                std_dev: var.sqrt(),
            })
        })
        .collect()
}

/// `D′V⁻¹D` and `D′V⁻¹r` for one cluster under exchangeable `alpha`.
pub(crate) fn exchangeable_products<T: Scalar>(
    deriv: &[Vec<T>],
    std_dev: &[T],
    residuals: &[T],
    alpha: T,
) -> (Mat<T>, Vec<T>) {
    let p = deriv.first().map_or(0, Vec::len);
    let m = deriv.len();
    let mut uu = Mat::<T>::zeros(p);
    let mut su = vec![T::zero(); p];
    let mut uw = vec![T::zero(); p];
    let mut sw = T::zero();
    for j in 0..m {
        let inv_sd = T::one() / std_dev[j];
        let w = residuals[j] * inv_sd;
        sw = sw + w;
        for a in 0..p {
            let ua = deriv[j][a] * inv_sd;
            su[a] = su[a] + ua;
            uw[a] = uw[a] + ua * w;
            for b in 0..p {
                uu[(a, b)] = uu[(a, b)] + ua * deriv[j][b] * inv_sd;
            }
        }
    }
    let k = T::one() / (T::one() - alpha);
    let c = alpha / (T::one() + T::from_count(m.saturating_sub(1)) * alpha);
    let mut info = Mat::zeros(p);
    for a in 0..p {
        for b in 0..p {
            info[(a, b)] = k * (uu[(a, b)] - c * su[a] * su[b]);
        }
    }
    let score = (0..p).map(|a| k * (uw[a] - c * su[a] * sw)).collect();
    (info, score)
}

struct Assembled<T> {
    moments: MomentEstimates<T>,
    clusters: Vec<ClusterTerms<T>>,
    info_sum: Mat<T>,
    score_sum: Vec<T>,
}

fn assemble<T: Scalar>(states: Vec<ClusterState<T>>, n_params: usize, structure: CorrelationStructure) -> Assembled<T> {
    let pearson: Vec<Vec<T>> =
        states.iter().map(|s| s.outcomes.iter().map(|&y| (y - s.mu) / s.std_dev).collect()).collect();
    let moments = estimate_alpha_phi(&pearson, n_params, structure);

    let mut info_sum = Mat::zeros(n_params);
    let mut score_sum = vec![T::zero(); n_params];
    let clusters = states
        .into_iter()
        .map(|s| {
            let m = s.outcomes.len();
            let residuals: Vec<T> = s.outcomes.iter().map(|&y| y - s.mu).collect();
            let deriv = vec![s.deriv_row.clone(); m];
            let std_dev = vec![s.std_dev; m];
            let (info, score) = exchangeable_products(&deriv, &std_dev, &residuals, moments.alpha);
            info_sum.add_assign(&info);
            for (acc, &v) in score_sum.iter_mut().zip(&score) {
                *acc = *acc + v;
            }
            ClusterTerms { arm: s.arm, mu: vec![s.mu; m], outcomes: s.outcomes, deriv, std_dev, residuals, info, score }
        })
        .collect();
    Assembled { moments, clusters, info_sum, score_sum }
}

/// Fisher scoring for the GEE, re-estimating α and φ at every iteration.
///
/// A proposed update that moves any mean outside the family's range is halved
/// up to `max_step_halvings` times. Convergence requires both a small update
/// and a small score at the accepted parameters.
pub fn fit_gee<T: Scalar>(
    data: &TrialDataset,
    spec: &ModelSpec,
    structure: CorrelationStructure,
    opts: &FitOptions<T>,
) -> Result<GeeFit<T>> {
    let p = spec.n_params();
    let outcomes: Vec<Vec<T>> =
        data.clusters().iter().map(|c| c.outcomes().iter().map(|&y| T::from_u8(y).unwrap()).collect()).collect();
    let mut beta = initialize_beta::<T>(data, spec);
    let mut iterations = 0;
    let mut last_step_small = false;

    let fail = |iterations: usize, beta: &[T], reason: FailureReason| Error::NonConvergence {
        iterations,
        beta: beta.iter().map(|b| b.as_f64()).collect(),
        reason,
    };

    loop {
        let states = evaluate(data, spec, &beta, &outcomes)
            .ok_or_else(|| fail(iterations, &beta, FailureReason::StepHalvingExhausted))?;
        let Assembled { moments, clusters, info_sum, score_sum } = assemble(states, p, structure);
        let info_inverse = info_sum
            .inverse()
            .filter(Mat::is_finite)
            .ok_or_else(|| fail(iterations, &beta, FailureReason::SingularInformation))?;

        let score_norm = score_sum.iter().fold(T::zero(), |m, s| m.max(s.abs()));
        if last_step_small && score_norm < opts.score_tol {
            return Ok(GeeFit {
                spec: *spec,
                structure,
                beta,
                alpha: moments.alpha,
                phi: moments.phi,
                alpha_clamped: moments.alpha_clamped,
                iterations,
                clusters,
                info_sum,
                info_inverse,
            });
        }
        if iterations >= opts.max_iter {
            return Err(fail(iterations, &beta, FailureReason::IterationLimit));
        }

        let mut step = info_inverse.mul_vec(&score_sum);
        let mut accepted = None;
        for _ in 0..=opts.max_step_halvings {
            let candidate: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + s).collect();
            if candidate.iter().all(|b| b.is_finite()) && evaluate(data, spec, &candidate, &outcomes).is_some() {
                accepted = Some(candidate);
                break;
            }
            step.iter_mut().for_each(|s| *s = *s / T::lit(2.0));
        }
        beta = accepted.ok_or_else(|| fail(iterations, &beta, FailureReason::StepHalvingExhausted))?;
        iterations += 1;
        last_step_small = step.iter().all(|s| s.abs() < opts.beta_tol);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cluster;
    use crate::model::{Family, Link};
    use proptest::prelude::*;

    fn dataset(arms: &[(u8, Vec<u8>)]) -> TrialDataset {
        TrialDataset::new(
            arms.iter()
                .enumerate()
                .map(|(i, (a, y))| Cluster::new(format!("c{i}"), Arm::try_from(*a).unwrap(), y.clone()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn balanced(arm0: &[Vec<u8>], arm1: &[Vec<u8>]) -> TrialDataset {
        let mut v: Vec<(u8, Vec<u8>)> = arm0.iter().map(|y| (0, y.clone())).collect();
        v.extend(arm1.iter().map(|y| (1, y.clone())));
        dataset(&v)
    }

    fn sample_data() -> TrialDataset {
        balanced(
            &[vec![1, 0, 0, 1, 0], vec![0, 0, 1, 0, 0], vec![1, 1, 1, 0, 0]],
            &[vec![0, 0, 0, 1, 0], vec![1, 0, 0, 0, 0], vec![0, 1, 1, 0, 0]],
        )
    }

    #[test]
    fn alpha_phi_hand_computation() {
        // clusters (1,1) and (0,0) at mu = 0.5: Pearson residuals are ±1
        let e = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let m = estimate_alpha_phi::<f64>(&e, 0, CorrelationStructure::Exchangeable);
        assert_eq!(m.phi, 1.0);
        assert!(m.alpha_clamped);
        assert_eq!(m.alpha, 1.0 - ALPHA_MARGIN);
    }

    #[test]
    fn alpha_is_zero_without_pairs() {
        let e = vec![vec![0.3], vec![-1.2], vec![0.7]];
        let m = estimate_alpha_phi::<f64>(&e, 1, CorrelationStructure::Exchangeable);
        assert_eq!(m.alpha, 0.0);
        assert!(!m.alpha_clamped);
    }

    #[test]
    fn initial_values() {
        // equal arm proportions 0.3/0.3
        let d = balanced(&[vec![1, 0, 0, 0, 1, 0, 0, 1, 0, 0]], &[vec![0, 1, 0, 0, 0, 1, 0, 1, 0, 0]]);
        let spec = ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap();
        let b = initialize_beta::<f64>(&d, &spec);
        assert!((b[0] - 0.3f64.ln()).abs() < 1e-15);
        assert_eq!(b[1], 0.0);

        // all-zero control arm with 255 observations
        let mut arm0 = vec![vec![0u8; 25]; 5];
        arm0[0].extend([0u8; 3]);
        let arm1: Vec<Vec<u8>> =
            (0..5).map(|_| vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).collect();
        let mut arm1 = arm1;
        arm1[0].extend([0u8; 2]);
        let d = balanced(&arm0, &arm1);
        assert_eq!(d.total_observations(), 255);
        let spec = ModelSpec::two_arm(Family::Binomial, Link::Log).unwrap();
        let b = initialize_beta::<f64>(&d, &spec);
        assert!((b[0] - (0.5f64 / 255.0).ln()).abs() < 1e-14);
        assert!(b.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn initial_values_are_arm_proportions_on_the_link_scale() {
        // control 48/100, intervention 61/200
        let arm0 = vec![[vec![1u8; 48], vec![0u8; 52]].concat()];
        let arm1 = vec![[vec![1u8; 61], vec![0u8; 139]].concat()];
        let d = balanced(&arm0, &arm1);
        let spec = ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap();
        let b = initialize_beta::<f64>(&d, &spec);
        assert!((b[0] - 0.48f64.ln()).abs() < 1e-14);
        assert!((b[1] - (0.305f64 / 0.48).ln()).abs() < 1e-14);
    }

    #[test]
    fn balanced_poisson_log_recovers_log_ratio() {
        let d = sample_data();
        let spec = ModelSpec::two_arm(Family::Poisson, Link::Log).unwrap();
        let fit = fit_gee::<f64>(&d, &spec, CorrelationStructure::Exchangeable, &FitOptions::default()).unwrap();
        let p0 = d.arm_summary(Arm::Control).proportion;
        let p1 = d.arm_summary(Arm::Intervention).proportion;
        assert!((fit.beta[1] - (p1 / p0).ln()).abs() < 1e-8);
        assert!(fit.score_norm() < 1e-6);
    }

    #[test]
    fn gaussian_independence_matches_ols() {
        // unequal sizes so the weighting matters
        let d = dataset(&[
            (0, vec![1, 0, 0, 1]),
            (0, vec![0, 1]),
            (0, vec![1, 1, 1, 0, 0, 0, 1]),
            (1, vec![0, 0, 0]),
            (1, vec![1, 0, 0, 0, 0, 1]),
        ]);
        let spec = ModelSpec::two_arm(Family::Gaussian, Link::Identity).unwrap();
        let fit = fit_gee::<f64>(&d, &spec, CorrelationStructure::Independence, &FitOptions::default()).unwrap();
        // normal equations X'X b = X'y with x = (1, arm)
        let (mut n, mut n1, mut sy, mut sy1) = (0.0, 0.0, 0.0, 0.0);
        for c in d.clusters() {
            let a = c.arm().indicator() as f64;
            for &y in c.outcomes() {
                n += 1.0;
                n1 += a;
                sy += y as f64;
                sy1 += a * y as f64;
            }
        }
        let det = n * n1 - n1 * n1;
        let b0 = (n1 * sy - n1 * sy1) / det;
        let b1 = (n * sy1 - n1 * sy) / det;
        assert!((fit.beta[0] - b0).abs() < 1e-12);
        assert!((fit.beta[1] - b1).abs() < 1e-12);
    }

    #[test]
    fn zero_event_arm_with_log_binomial_fails() {
        let d = balanced(&[vec![1, 0, 1, 0], vec![0, 1, 0, 0]], &[vec![0, 0, 0, 0], vec![0, 0, 0, 0]]);
        let spec = ModelSpec::two_arm(Family::Binomial, Link::Log).unwrap();
        let r = fit_gee::<f64>(&d, &spec, CorrelationStructure::Exchangeable, &FitOptions::default());
        assert!(matches!(r, Err(Error::NonConvergence { .. })), "{r:?}");
    }

    #[test]
    fn exchangeable_products_match_dense_inverse() {
        let deriv = vec![vec![0.2, 0.2], vec![0.3, 0.3], vec![0.1, 0.1]];
        let sd = vec![0.4, 0.5, 0.45];
        let r = vec![0.7, -0.3, -0.1];
        let alpha = 0.15;
        let (info, score) = exchangeable_products(&deriv, &sd, &r, alpha);
        let m = 3;
        let mut v = nalgebra::DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let corr = if i == j { 1.0 } else { alpha };
                v[(i, j)] = sd[i] * corr * sd[j];
            }
        }
        let vinv = v.try_inverse().unwrap();
        let d = nalgebra::DMatrix::from_fn(m, 2, |i, j| deriv[i][j]);
        let rv = nalgebra::DVector::from_vec(r.clone());
        let dense_info = d.transpose() * &vinv * &d;
        let dense_score = d.transpose() * &vinv * rv;
        for a in 0..2 {
            assert!((score[a] - dense_score[a]).abs() < 1e-12);
            for b in 0..2 {
                assert!((info[(a, b)] - dense_info[(a, b)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_precision_fit_converges() {
        let d = sample_data();
        let spec = ModelSpec::two_arm(Family::Binomial, Link::Logit).unwrap();
        let f32fit = fit_gee::<f32>(&d, &spec, CorrelationStructure::Exchangeable, &FitOptions::default()).unwrap();
        let f64fit = fit_gee::<f64>(&d, &spec, CorrelationStructure::Exchangeable, &FitOptions::default()).unwrap();
        assert!((f32fit.beta[1] as f64 - f64fit.beta[1]).abs() < 1e-4);
    }

    fn arm_strategy(m: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
        // each cluster gets at least one event and one non-event so every link is defined
        proptest::collection::vec(proptest::collection::vec(0u8..=1, m - 2), 2..5).prop_map(|cs| {
            cs.into_iter()
                .map(|mut y| {
                    y.push(0);
                    y.push(1);
                    y
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn saturated_fits_reproduce_arm_proportions(
            (arm0, arm1) in (3usize..7).prop_flat_map(|m| (arm_strategy(m), arm_strategy(m)))
        ) {
            let d = balanced(&arm0, &arm1);
            let p0 = d.arm_summary(Arm::Control).proportion;
            let p1 = d.arm_summary(Arm::Intervention).proportion;
            let mut by_link: Vec<(Link, Vec<f64>)> = vec![];
            for spec in ModelSpec::all_two_arm() {
                let fit = fit_gee::<f64>(&d, &spec, CorrelationStructure::Exchangeable, &FitOptions::default()).unwrap();
                prop_assert!(fit.score_norm() < 1e-6);
                for c in &fit.clusters {
                    let target = if c.arm == Arm::Control { p0 } else { p1 };
                    prop_assert!((c.mu[0] - target).abs() < 1e-8);
                }
                by_link.push((spec.link(), fit.beta.clone()));
                // D_i against central differences of the mean
                let h = 1e-6;
                for (ci, c) in fit.clusters.iter().enumerate() {
                    let x = spec.design_row::<f64>(d.clusters()[ci].arm().indicator());
                    for k in 0..2 {
                        let mut bp = fit.beta.clone();
                        let mut bm = fit.beta.clone();
                        bp[k] += h;
                        bm[k] -= h;
                        let eta = |b: &[f64]| x[0] * b[0] + x[1] * b[1];
                        let fd = (spec.link().inverse(eta(&bp)) - spec.link().inverse(eta(&bm))) / (2.0 * h);
                        let an = c.deriv[0][k];
                        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "fd {fd} vs {an}");
                    }
                }
            }
            // link consistency
            let logs: Vec<_> = by_link.iter().filter(|(l, _)| *l == Link::Log).collect();
            prop_assert!((logs[0].1[0] - logs[1].1[0]).abs() < 1e-6);
            prop_assert!((logs[0].1[1] - logs[1].1[1]).abs() < 1e-6);
            let ids: Vec<_> = by_link.iter().filter(|(l, _)| *l == Link::Identity).collect();
            prop_assert_eq!(ids.len(), 3);
            for w in ids.windows(2) {
                prop_assert!((w[0].1[1] - w[1].1[1]).abs() < 1e-6);
            }
        }

        #[test]
        fn singleton_clusters_reduce_to_independence(
            arm0 in proptest::collection::vec(0u8..=1, 3..12),
            arm1 in proptest::collection::vec(0u8..=1, 3..12),
        ) {
            let mut arm0 = arm0; arm0.push(1); arm0.push(0);
            let mut arm1 = arm1; arm1.push(1); arm1.push(0);
            let d = balanced(
                &arm0.iter().map(|&y| vec![y]).collect::<Vec<_>>(),
                &arm1.iter().map(|&y| vec![y]).collect::<Vec<_>>(),
            );
            for spec in ModelSpec::all_two_arm() {
                let ex = fit_gee::<f64>(&d, &spec, CorrelationStructure::Exchangeable, &FitOptions::default()).unwrap();
                let ind = fit_gee::<f64>(&d, &spec, CorrelationStructure::Independence, &FitOptions::default()).unwrap();
                prop_assert_eq!(ex.beta, ind.beta);
                prop_assert_eq!(ex.alpha, 0.0);
                prop_assert_eq!(ex.info_sum, ind.info_sum);
            }
        }
    }
}
