#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crtgee::gee::GeeFit;
use crtgee::{Arm, Cluster, EstimatorKind, Family, Link, ModelSpec, TrialDataset};

pub fn to_dense(m: &crtgee::Mat) -> DMatrix<f64> {
    let n = m.dim();
    DMatrix::from_fn(n, n, |i, j| m[(i, j)])
}

pub fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).abs().max() / want.abs().max().max(f64::MIN_POSITIVE)
}

/// Random small trial: 4-6 clusters, at least two per arm, sizes 1-5.
pub fn random_instance(rng: &mut ChaCha8Rng) -> TrialDataset {
    let n = rng.random_range(4..=6usize);
    let n_treated = rng.random_range(2..=n - 2);
    let clusters = (0..n)
        .map(|i| {
            let arm = if i < n - n_treated { Arm::Control } else { Arm::Intervention };
            let m = rng.random_range(1..=5usize);
            let p = rng.random_range(0.2..0.7);
            let y = (0..m).map(|_| u8::from(rng.random_bool(p))).collect();
            Cluster::new(format!("k{i}"), arm, y).unwrap()
        })
        .collect();
    TrialDataset::new(clusters).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn inv_link(link: Link, eta: f64) -> (f64, f64) {
    match link {
        Link::Log => (eta.exp(), eta.exp()),
        Link::Identity => (eta, 1.0),
        Link::Logit => {
            let mu = 1.0 / (1.0 + (-eta).exp());
            (mu, mu * (1.0 - mu))
        }
    }
}

fn var_fn(family: Family, mu: f64) -> f64 {
    match family {
        Family::Binomial => mu * (1.0 - mu),
        Family::Poisson => mu,
        Family::Gaussian => 1.0,
    }
}

/// Principal square root and inverse square root by Denman-Beavers.
pub fn denman_beavers(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..200 {
        let yi = y.clone().try_inverse().expect("DB iterate singular");
        let zi = z.clone().try_inverse().expect("DB iterate singular");
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let change = (&y_next - &y).abs().max();
        y = y_next;
        z = z_next;
        if change <= 1e-16 * y.abs().max() {
            break;
        }
    }
    (y, z)
}

pub struct DenseTerms {
    pub alpha: f64,
    pub phi: f64,
    pub bread: DMatrix<f64>,
    pub scores: Vec<DVector<f64>>,
    pub infos: Vec<DMatrix<f64>>,
}

/// Builds every per-cluster quantity from scratch at `beta`, inverting the
/// full working covariance of each cluster.
pub fn dense_terms(data: &TrialDataset, spec: &ModelSpec, beta: &[f64]) -> DenseTerms {
    let p = beta.len();
    let link = spec.link();
    let family = spec.family();
    let mut rows = Vec::new();
    for c in data.clusters() {
        let x: Vec<f64> = if p == 2 { vec![1.0, c.arm().indicator() as f64] } else { vec![1.0] };
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let (mu, dmu) = inv_link(link, eta);
        let m = c.size();
        let d = DMatrix::from_fn(m, p, |_, k| x[k] * dmu);
        let sd = var_fn(family, mu).sqrt();
        let r = DVector::from_iterator(m, c.outcomes().iter().map(|&y| y as f64 - mu));
        rows.push((d, sd, r));
    }

    let n_obs: usize = rows.iter().map(|r| r.2.len()).sum();
    let mut sum_sq = 0.0;
    let mut cross = 0.0;
    let mut pairs = 0usize;
    let mut max_m = 0;
    for (_, sd, r) in &rows {
        let e: Vec<f64> = r.iter().map(|v| v / sd).collect();
        max_m = max_m.max(e.len());
        for j in 0..e.len() {
            sum_sq += e[j] * e[j];
            for k in (j + 1)..e.len() {
                cross += e[j] * e[k];
                pairs += 1;
            }
        }
    }
    let adj = |count: usize| if count > p { (count - p) as f64 } else { count.max(1) as f64 };
    let phi = sum_sq / adj(n_obs);
    let alpha = if pairs == 0 {
        0.0
    } else {
        let raw = cross / adj(pairs) / phi;
        raw.clamp(-1.0 / (max_m as f64 - 1.0) + 1e-6, 1.0 - 1e-6)
    };

    let mut bread = DMatrix::zeros(p, p);
    let mut scores = Vec::new();
    let mut infos = Vec::new();
    for (d, sd, r) in &rows {
        let m = r.len();
        let corr = DMatrix::from_fn(m, m, |j, k| if j == k { 1.0 } else { alpha });
        let v = corr * (sd * sd);
        let vinv = v.try_inverse().expect("working covariance singular");
        let info = d.transpose() * &vinv * d;
        let score = d.transpose() * &vinv * r;
        bread += &info;
        infos.push(info);
        scores.push(score);
    }
    DenseTerms { alpha, phi, bread, scores, infos }
}

/// Every estimator from the dense terms, with the MBN dispersion factor
/// normalized by the fitted scale.
pub fn dense_estimators(
    terms: &DenseTerms,
    total_obs: usize,
    kinds: &[EstimatorKind],
    fg_bound: f64,
) -> Vec<DMatrix<f64>> {
    let p = terms.bread.nrows();
    let n = terms.scores.len();
    let b_inv = terms.bread.clone().try_inverse().unwrap();
    let ident = DMatrix::<f64>::identity(p, p);
    let sandwich = |f: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>| {
        let mut meat = DMatrix::zeros(p, p);
        for (s, info) in terms.scores.iter().zip(&terms.infos) {
            let q = info * &b_inv;
            let cs = f(&q) * s;
            meat += &cs * cs.transpose();
        }
        let cov = &b_inv * meat * &b_inv;
        (&cov + cov.transpose()) * 0.5
    };
    let robust = sandwich(&|_| ident.clone());
    let kc = sandwich(&|q| denman_beavers(&(&ident - q)).1);
    let md = sandwich(&|q| (&ident - q).try_inverse().unwrap());
    let fg = sandwich(&|q| {
        DMatrix::from_fn(p, p, |j, k| if j == k { 1.0 / (1.0 - q[(j, j)].min(fg_bound)).sqrt() } else { 0.0 })
    });
    let mb = &b_inv * terms.phi;
    let (nf, mf) = (n as f64, total_obs as f64);
    let c = (mf - 1.0) / (mf - 2.0) * nf / (nf - 1.0);
    let delta = 0.5f64.min(2.0 / (nf - 2.0));
    let ratio = (&robust * c * &terms.bread).trace() / (terms.phi * p as f64);
    let mbn = &robust * c + &mb * (delta * ratio.max(1.0));
    let avg = (&kc + &md) * 0.5;
    kinds
        .iter()
        .map(|k| match k {
            EstimatorKind::MB => mb.clone(),
            EstimatorKind::Robust => robust.clone(),
            EstimatorKind::KC => kc.clone(),
            EstimatorKind::MD => md.clone(),
            EstimatorKind::FG => fg.clone(),
            EstimatorKind::MBN => mbn.clone(),
            EstimatorKind::AVG => avg.clone(),
        })
        .collect()
}

/// Largest discrepancy between the production estimators and the dense
/// oracle evaluated at the production estimate of beta.
pub fn oracle_discrepancy(data: &TrialDataset, fit: &GeeFit<f64>) -> Result<f64, String> {
    let terms = dense_terms(data, &fit.spec, &fit.beta);
    if (terms.alpha - fit.alpha).abs() > 1e-12 || (terms.phi - fit.phi).abs() > 1e-12 * terms.phi {
        return Err(format!(
            "moment estimates differ: alpha {} vs {}, phi {} vs {}",
            fit.alpha, terms.alpha, fit.phi, terms.phi
        ));
    }
    let kinds = EstimatorKind::ALL;
    let prod = crtgee::sandwich::estimate_all(fit, &kinds, 0.75).map_err(|e| e.to_string())?;
    let dense = dense_estimators(&terms, data.total_observations(), &kinds, 0.75);
    let mut worst = 0.0f64;
    for ((kind, est), want) in prod.iter().zip(&dense) {
        let est = est.as_ref().map_err(|e| format!("{kind}: {e}"))?;
        worst = worst.max(rel_err(&to_dense(&est.cov), want));
    }
    Ok(worst)
}
