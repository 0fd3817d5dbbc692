//! Model-based, robust and bias-corrected sandwich covariance estimators.
//!
//! All sums are unnormalized: with `B = Σ D_i′V_i⁻¹D_i` and per-cluster scores
//! `s_i = D_i′V_i⁻¹(Y_i − μ̂_i)`, the robust covariance is
//! `B⁻¹ (Σ C_i s_i s_i′ C_i′) B⁻¹`, which equals `N⁻¹ Σ̂₁⁻¹ Σ̂₀ Σ̂₁⁻¹` for the
//! N-normalized `Σ̂₁ = B/N` and `Σ̂₀ = N⁻¹ Σ C_i s_i s_i′ C_i′`.
//!
//! The multiplicative corrections use `Q_i = D_i′V_i⁻¹D_i B⁻¹`. `Q_i` is not
//! symmetric but is similar to the symmetric `H_i = B^{-1/2} D_i′V_i⁻¹D_i B^{-1/2}`,
//! so `(I − Q_i)^{-1/2} = B^{1/2} (I − H_i)^{-1/2} B^{-1/2}` is its principal
//! inverse square root.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gee::GeeFit;
use crate::linalg::Mat;
use crate::Scalar;

/// Default cap on `[Q_i]_jj` in the Fay-Graubard correction.
pub const FG_DEFAULT_BOUND: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Model-based, `φ̂ B⁻¹`.
    MB,
    /// Uncorrected sandwich.
    Robust,
    /// Kauermann-Carroll, `C_i = (I − Q_i)^{-1/2}`.
    KC,
    /// Mancl-DeRouen, `C_i = (I − Q_i)^{-1}`.
    MD,
    /// Fay-Graubard, `C_i = diag{(1 − min(r, [Q_i]_jj))^{-1/2}}`.
    FG,
    /// Morel-Bokossa-Neerchal additive inflation.
    MBN,
    /// Elementwise mean of KC and MD.
    AVG,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::MB,
        EstimatorKind::Robust,
        EstimatorKind::KC,
        EstimatorKind::MD,
        EstimatorKind::FG,
        EstimatorKind::MBN,
        EstimatorKind::AVG,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::MB => "MB",
            EstimatorKind::Robust => "Robust",
            EstimatorKind::KC => "KC",
            EstimatorKind::MD => "MD",
            EstimatorKind::FG => "FG",
            EstimatorKind::MBN => "MBN",
            EstimatorKind::AVG => "AVG",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown variance estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VarianceDiagnostics<T> {
    /// Largest eigenvalue over all `Q_i`.
    pub q_max: T,
    /// The MBN `φ` factor, when the estimate is MBN.
    pub mbn_phi: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate<T> {
    pub kind: EstimatorKind,
    pub cov: Mat<T>,
    pub diagnostics: VarianceDiagnostics<T>,
}

impl<T: Scalar> VarianceEstimate<T> {
    pub fn std_errors(&self) -> Vec<T> {
        self.cov.diag().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }
}

/// Leverage-like matrices `Q_i` for one fit.
#[derive(Debug, Clone)]
pub struct CorrectionContext<T> {
    pub q: Vec<Mat<T>>,
    /// Eigenvalues of each `Q_i` (those of the symmetric `H_i`).
    pub q_eigenvalues: Vec<Vec<T>>,
    /// Fay-Graubard bound `r`, in (0, 1].
    pub fg_bound: T,
    info_sqrt: Mat<T>,
    info_inv_sqrt: Mat<T>,
    h: Vec<Mat<T>>,
}

impl<T: Scalar> CorrectionContext<T> {
    pub fn new(fit: &GeeFit<T>, fg_bound: T) -> Result<Self> {
        if !(fg_bound > T::zero() && fg_bound <= T::one()) {
            return Err(Error::Usage(format!("Fay-Graubard bound must lie in (0, 1], got {fg_bound}")));
        }
        let b = fit.info_sum.symmetrize();
        let (vals, _) = b.sym_eigen();
        if vals.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::Singular("information matrix is not positive definite".into()));
        }
        let info_sqrt = b.sym_apply(|x| x.sqrt());
        let info_inv_sqrt = b.sym_apply(|x| T::one() / x.sqrt());
        let q = fit.clusters.iter().map(|c| c.info.matmul(&fit.info_inverse)).collect();
        let h: Vec<Mat<T>> =
            fit.clusters.iter().map(|c| info_inv_sqrt.matmul(&c.info).matmul(&info_inv_sqrt).symmetrize()).collect();
        let q_eigenvalues = h.iter().map(|hi| hi.sym_eigen().0).collect();
        Ok(CorrectionContext { q, q_eigenvalues, fg_bound, info_sqrt, info_inv_sqrt, h })
    }

    pub fn q_max(&self) -> T {
        self.q_eigenvalues.iter().flatten().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    /// `C_i` for a multiplicative correction.
    pub fn multiplier(&self, kind: EstimatorKind, cluster: usize) -> Result<Mat<T>> {
        let p = self.info_sqrt.dim();
        let singular = || Error::CorrectionSingularity { cluster, kind };
        match kind {
            EstimatorKind::Robust => Ok(Mat::identity(p)),
            EstimatorKind::KC => {
                let ih = Mat::identity(p).sub(&self.h[cluster]);
                if self.q_eigenvalues[cluster].iter().any(|&l| !(T::one() - l > T::epsilon() * T::lit(16.0))) {
                    return Err(singular());
                }
                let root = ih.sym_apply(|x| T::one() / x.sqrt());
                Ok(self.info_sqrt.matmul(&root).matmul(&self.info_inv_sqrt))
            }
            EstimatorKind::MD => {
                let iq = Mat::identity(p).sub(&self.q[cluster]);
                if self.q_eigenvalues[cluster].iter().any(|&l| !((T::one() - l).abs() > T::epsilon() * T::lit(16.0))) {
                    return Err(singular());
                }
                iq.inverse().ok_or_else(singular)
            }
            EstimatorKind::FG => {
                let d: Vec<T> = self.q[cluster]
                    .diag()
                    .into_iter()
                    .map(|qjj| {
                        let denom = T::one() - qjj.min(self.fg_bound);
                        if denom > T::zero() {
                            Ok(T::one() / denom.sqrt())
                        } else {
                            Err(singular())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(Mat::diagonal(&d))
            }
            other => Err(Error::Usage(format!("{other} is not a multiplicative correction"))),
        }
    }
}

/// `φ̂ B⁻¹`
pub fn model_based<T: Scalar>(fit: &GeeFit<T>) -> Result<VarianceEstimate<T>> {
    let cov =
        fit.info_sum.inverse().ok_or_else(|| Error::Singular("model information".into()))?.scale(fit.phi).symmetrize();
    Ok(VarianceEstimate { kind: EstimatorKind::MB, cov, diagnostics: VarianceDiagnostics::default() })
}

/// Uncorrected and multiplicatively corrected sandwiches, in the order requested.
/// Accepts `Robust`, `KC`, `MD` and `FG`.
pub fn robust_sandwich<T: Scalar>(
    fit: &GeeFit<T>,
    ctx: &CorrectionContext<T>,
    kinds: &[EstimatorKind],
) -> Result<Vec<VarianceEstimate<T>>> {
    kinds
        .iter()
        .map(|&kind| {
            let p = fit.n_params();
            let mut meat = Mat::zeros(p);
            for (i, c) in fit.clusters.iter().enumerate() {
                let cs = ctx.multiplier(kind, i)?.mul_vec(&c.score);
                meat.add_assign(&Mat::outer(&cs, &cs));
            }
            Ok(VarianceEstimate {
                kind,
                cov: sandwich(&fit.info_inverse, &meat),
                diagnostics: VarianceDiagnostics { q_max: ctx.q_max(), mbn_phi: None },
            })
        })
        .collect()
}

fn sandwich<T: Scalar>(bread_inv: &Mat<T>, meat: &Mat<T>) -> Mat<T> {
    bread_inv.matmul(meat).matmul(bread_inv).symmetrize()
}

/// `δ_N = min{0.5, 2/(N−2)}`; requires N ≥ 3.
pub fn mbn_delta<T: Scalar>(n_clusters: usize) -> Result<T> {
    if n_clusters <= 2 {
        return Err(Error::UnsupportedDesign(format!("MBN needs at least 3 clusters, got {n_clusters}")));
    }
    Ok(T::lit(0.5).min(T::lit(2.0) / T::from_count(n_clusters - 2)))
}

/// `c = {(Σm_i − 1)/(Σm_i − 2)}·{N/(N−1)}`
pub fn mbn_small_sample_factor<T: Scalar>(total_obs: usize, n_clusters: usize) -> T {
    let m = T::from_count(total_obs);
    let n = T::from_count(n_clusters);
    (m - T::one()) / (m - T::lit(2.0)) * n / (n - T::one())
}

/// Morel-Bokossa-Neerchal: `c·V_robust + δ_N·φ_MBN·V_MB`, where
/// `φ_MBN = max{1, trace(c·V_robust·V_MB⁻¹)/p}`.
pub fn mbn<T: Scalar>(fit: &GeeFit<T>, robust: &VarianceEstimate<T>) -> Result<VarianceEstimate<T>> {
    if robust.kind != EstimatorKind::Robust {
        return Err(Error::Usage(format!("MBN needs the Robust estimate, got {}", robust.kind)));
    }
    let n = fit.n_clusters();
    let delta = mbn_delta::<T>(n)?;
    let c = mbn_small_sample_factor::<T>(fit.total_observations(), n);
    let model = model_based(fit)?;
    let p = T::from_count(fit.n_params());
    let ratio = if fit.phi > T::zero() {
        robust.cov.scale(c).matmul(&fit.info_sum).scale(T::one() / fit.phi).trace() / p
    } else {
        T::zero()
    };
    let phi = ratio.max(T::one());
    let cov = robust.cov.scale(c).add(&model.cov.scale(delta * phi)).symmetrize();
    Ok(VarianceEstimate {
        kind: EstimatorKind::MBN,
        cov,
        diagnostics: VarianceDiagnostics { q_max: robust.diagnostics.q_max, mbn_phi: Some(phi) },
    })
}

pub fn avg<T: Scalar>(kc: &VarianceEstimate<T>, md: &VarianceEstimate<T>) -> Result<VarianceEstimate<T>> {
    if kc.kind != EstimatorKind::KC || md.kind != EstimatorKind::MD {
        return Err(Error::Usage(format!("AVG needs KC and MD estimates, got {} and {}", kc.kind, md.kind)));
    }
    if kc.cov.dim() != md.cov.dim() {
        return Err(Error::Usage("KC and MD estimates come from different models".into()));
    }
    let two = T::lit(2.0);
    let p = kc.cov.dim();
    let mut cov = Mat::zeros(p);
    for i in 0..p {
        for j in 0..p {
            cov[(i, j)] = (kc.cov[(i, j)] + md.cov[(i, j)]) / two;
        }
    }
    Ok(VarianceEstimate { kind: EstimatorKind::AVG, cov, diagnostics: kc.diagnostics })
}

/// Computes each requested estimator, resolving dependencies (AVG needs KC
/// and MD, MBN needs Robust). A failure affects only the estimators that
/// depend on it.
pub fn estimate_all<T: Scalar>(
    fit: &GeeFit<T>,
    kinds: &[EstimatorKind],
    fg_bound: T,
) -> Result<Vec<(EstimatorKind, Result<VarianceEstimate<T>>)>> {
    let ctx = CorrectionContext::new(fit, fg_bound)?;
    let one = |kind| robust_sandwich(fit, &ctx, &[kind]).map(|mut v| v.remove(0));
    let robust = one(EstimatorKind::Robust);
    let kc = one(EstimatorKind::KC);
    let md = one(EstimatorKind::MD);
    let out = kinds
        .iter()
        .map(|&kind| {
            let est = match kind {
                EstimatorKind::MB => model_based(fit),
                EstimatorKind::Robust => clone_result(&robust),
                EstimatorKind::KC => clone_result(&kc),
                EstimatorKind::MD => clone_result(&md),
                EstimatorKind::FG => one(EstimatorKind::FG),
                EstimatorKind::MBN => clone_result(&robust).and_then(|r| mbn(fit, &r)),
                EstimatorKind::AVG => clone_result(&kc).and_then(|k| clone_result(&md).and_then(|m| avg(&k, &m))),
            };
            (kind, est)
        })
        .collect();
    Ok(out)
}

fn clone_result<T: Scalar>(r: &Result<VarianceEstimate<T>>) -> Result<VarianceEstimate<T>> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(Error::CorrectionSingularity { cluster, kind }) => {
            Err(Error::CorrectionSingularity { cluster: *cluster, kind: *kind })
        }
        Err(e) => Err(Error::Singular(e.to_string())),
    }
}
