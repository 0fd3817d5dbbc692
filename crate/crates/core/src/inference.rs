//! Wald t inference for the arm coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gee::GeeFit;
use crate::model::{EffectMeasure, Link, MeanModel};
use crate::sandwich::{EstimatorKind, VarianceEstimate};
use crate::special::{betainc, erfc};
use crate::Scalar;

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf<T: Scalar>(t: T, df: T) -> Result<T> {
    if !(df > T::zero()) {
        return Err(domain("t distribution needs df > 0", df));
    }
    let half = T::lit(0.5);
    let tail = half * t_two_sided_unchecked(t, df);
    Ok(if t >= T::zero() { tail } else { T::one() - tail })
}

/// Two-sided p-value `P(|T| ≥ |t|) = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided<T: Scalar>(t: T, df: T) -> Result<T> {
    if !(df > T::zero()) {
        return Err(domain("t distribution needs df > 0", df));
    }
    Ok(t_two_sided_unchecked(t, df))
}

fn t_two_sided_unchecked<T: Scalar>(t: T, df: T) -> T {
    if t.is_infinite() {
        return T::zero();
    }
    let half = T::lit(0.5);
    let x = df / (df + t * t);
    betainc(df * half, half, x).max(T::zero()).min(T::one())
}

/// `t` with `student_t_sf(t, df) = q`, for `0 < q < 1`.
pub fn student_t_isf<T: Scalar>(q: T, df: T) -> Result<T> {
    if !(df > T::zero()) {
        return Err(domain("t distribution needs df > 0", df));
    }
    invert_upper_tail(q, |t| student_t_sf(t, df).expect("df checked"))
}

/// Upper tail of the standard normal.
pub fn normal_sf<T: Scalar>(z: T) -> T {
    T::lit(0.5) * erfc(z / T::lit(std::f64::consts::SQRT_2))
}

pub fn normal_isf<T: Scalar>(q: T) -> Result<T> {
    invert_upper_tail(q, normal_sf)
}

/// Inverts a symmetric, decreasing upper-tail function by bracketing and bisection.
fn invert_upper_tail<T: Scalar>(q: T, sf: impl Fn(T) -> T) -> Result<T> {
    let half = T::lit(0.5);
    if !(q > T::zero() && q < T::one()) {
        return Err(domain("tail probability must lie in (0, 1)", q));
    }
    if q == half {
        return Ok(T::zero());
    }
    if q > half {
        return invert_upper_tail(T::one() - q, sf).map(|t| -t);
    }
    let mut lo = T::zero();
    let mut hi = T::one();
    while sf(hi) > q {
        lo = hi;
        hi = hi * T::lit(2.0);
        if !hi.is_finite() {
            return Err(domain("tail probability too small to invert", q));
        }
    }
    for _ in 0..400 {
        let mid = half * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sf(mid) > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(half * (lo + hi))
}

/// Reference distribution for the Wald statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WaldDistribution<T> {
    StudentT {
        df: T,
    },
    /// Diagnostic only; the t reference is the default.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult<T> {
    pub estimator: EstimatorKind,
    pub effect_measure: EffectMeasure,
    /// β̂₁ on the link scale.
    pub estimate_link: T,
    /// β̂₁ on the effect scale (RR, RD or OR).
    pub estimate_effect: T,
    pub se: T,
    /// `N − p`; `None` for the normal reference.
    pub df: Option<T>,
    pub t_stat: T,
    pub p_value: T,
    pub confidence_level: T,
    pub ci_link: (T, T),
    pub ci_effect: (T, T),
}

impl<T: Scalar> InferenceResult<T> {
    pub fn rejects(&self, alpha_level: T) -> bool {
        self.p_value < alpha_level
    }
}

/// Two-sided Wald test and interval from an estimate and its standard error.
pub fn wald_from_parts<T: Scalar>(
    estimate: T,
    se: T,
    distribution: WaldDistribution<T>,
    link: Link,
    estimator: EstimatorKind,
    alpha_level: T,
) -> Result<InferenceResult<T>> {
    if !(alpha_level > T::zero() && alpha_level < T::one()) {
        return Err(Error::Usage(format!("significance level must lie in (0, 1), got {alpha_level}")));
    }
    if !(se > T::zero()) || !se.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let t_stat = estimate / se;
    let half_alpha = alpha_level / T::lit(2.0);
    let (p_value, crit, df) = match distribution {
        WaldDistribution::StudentT { df } => {
            (student_t_two_sided(t_stat, df)?, student_t_isf(half_alpha, df)?, Some(df))
        }
        WaldDistribution::Normal => {
            ((T::lit(2.0) * normal_sf(t_stat.abs())).min(T::one()), normal_isf(half_alpha)?, None)
        }
    };
    let ci_link = (estimate - crit * se, estimate + crit * se);
    Ok(InferenceResult {
        estimator,
        effect_measure: link.effect_measure(),
        estimate_link: estimate,
        estimate_effect: link.to_effect_scale(estimate),
        se,
        df,
        t_stat,
        p_value,
        confidence_level: T::one() - alpha_level,
        ci_link,
        ci_effect: (link.to_effect_scale(ci_link.0), link.to_effect_scale(ci_link.1)),
    })
}

/// Wald t inference on the arm coefficient with `N − p` degrees of freedom.
pub fn wald_inference<T: Scalar>(
    fit: &GeeFit<T>,
    var: &VarianceEstimate<T>,
    measure: EffectMeasure,
    alpha_level: T,
) -> Result<InferenceResult<T>> {
    if fit.spec.mean_model() != MeanModel::InterceptPlusArm {
        return Err(Error::Usage("the intercept-only model has no arm effect".into()));
    }
    let link = fit.spec.link();
    if link.effect_measure() != measure {
        return Err(Error::Usage(format!("{measure} does not correspond to the {link} link")));
    }
    if var.cov.dim() != fit.n_params() {
        return Err(Error::Usage("variance estimate does not match the fit".into()));
    }
    let se = var.cov[(1, 1)].max(T::zero()).sqrt();
    wald_from_parts(fit.beta[1], se, WaldDistribution::StudentT { df: fit.df() }, link, var.kind, alpha_level)
}
