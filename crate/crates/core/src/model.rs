//! Outcome families, link functions and the six analysis models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Binomial,
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Identity,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeanModel {
    /// `g(μ) = β₀ + β₁·arm`
    InterceptPlusArm,
    /// `g(μ) = β₀`
    InterceptOnly,
}

impl MeanModel {
    pub fn n_params(self) -> usize {
        match self {
            MeanModel::InterceptPlusArm => 2,
            MeanModel::InterceptOnly => 1,
        }
    }
}

/// Effect measure reported on the natural scale of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectMeasure {
    /// Risk ratio, log link.
    RR,
    /// Risk difference, identity link.
    RD,
    /// Odds ratio, logit link.
    OR,
}

impl fmt::Display for EffectMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl Link {
    pub fn apply<T: Scalar>(self, mu: T) -> Result<T> {
        match self {
            Link::Log => {
                if mu > T::zero() {
                    Ok(mu.ln())
                } else {
                    Err(domain("log link requires mu > 0", mu))
                }
            }
            Link::Identity => Ok(mu),
            Link::Logit => {
                if mu > T::zero() && mu < T::one() {
                    Ok((mu / (T::one() - mu)).ln())
                } else {
                    Err(domain("logit link requires 0 < mu < 1", mu))
                }
            }
        }
    }

    pub fn inverse<T: Scalar>(self, eta: T) -> T {
        match self {
            Link::Log => eta.exp(),
            Link::Identity => eta,
            Link::Logit => {
                if eta >= T::zero() {
                    T::one() / (T::one() + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (T::one() + e)
                }
            }
        }
    }

    /// dμ/dη at the linear predictor `eta`.
    pub fn mu_deriv<T: Scalar>(self, eta: T) -> T {
        match self {
            Link::Log => eta.exp(),
            Link::Identity => T::one(),
            Link::Logit => {
                let mu = self.inverse(eta);
                mu * (T::one() - mu)
            }
        }
    }

    pub fn effect_measure(self) -> EffectMeasure {
        match self {
            Link::Log => EffectMeasure::RR,
            Link::Identity => EffectMeasure::RD,
            Link::Logit => EffectMeasure::OR,
        }
    }

    /// Maps a link-scale value to the effect scale.
    pub fn to_effect_scale<T: Scalar>(self, x: T) -> T {
        match self {
            Link::Log | Link::Logit => x.exp(),
            Link::Identity => x,
        }
    }
}

impl Family {
    pub fn mean_in_range<T: Scalar>(self, mu: T) -> bool {
        match self {
            Family::Binomial => mu > T::zero() && mu < T::one(),
            Family::Poisson => mu > T::zero() && mu.is_finite(),
            Family::Gaussian => mu.is_finite(),
        }
    }

    /// Variance function V(μ), without the dispersion factor.
    pub fn variance<T: Scalar>(self, mu: T) -> Result<T> {
        match self {
            Family::Binomial => {
                if self.mean_in_range(mu) {
                    Ok(mu * (T::one() - mu))
                } else {
                    Err(domain("binomial variance requires 0 < mu < 1", mu))
                }
            }
            Family::Poisson => {
                if self.mean_in_range(mu) {
                    Ok(mu)
                } else {
                    Err(domain("poisson variance requires mu > 0", mu))
                }
            }
            Family::Gaussian => Ok(T::one()),
        }
    }
}

/// Working family × link × mean model. Only the six analysis models are constructible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    family: Family,
    link: Link,
    mean_model: MeanModel,
}

impl ModelSpec {
    pub fn new(family: Family, link: Link, mean_model: MeanModel) -> Result<Self> {
        use Family::*;
        use Link::*;
        let ok = matches!(
            (family, link),
            (Binomial, Log | Identity | Logit) | (Poisson, Log | Identity) | (Gaussian, Identity)
        );
        if !ok {
            return Err(Error::UnsupportedModel(format!(
                "{} family with {} link",
                family_name(family),
                link_name(link)
            )));
        }
        Ok(ModelSpec { family, link, mean_model })
    }

    /// Two-arm model `g(μ) = β₀ + β₁·arm`.
    pub fn two_arm(family: Family, link: Link) -> Result<Self> {
        Self::new(family, link, MeanModel::InterceptPlusArm)
    }

    /// The six two-arm analysis models in reporting order.
    pub fn all_two_arm() -> Vec<ModelSpec> {
        use Family::*;
        use Link::*;
        [
            (Binomial, Log),
            (Poisson, Log),
            (Binomial, Identity),
            (Poisson, Identity),
            (Gaussian, Identity),
            (Binomial, Logit),
        ]
        .into_iter()
        .map(|(f, l)| Self::two_arm(f, l).expect("valid pair"))
        .collect()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn mean_model(&self) -> MeanModel {
        self.mean_model
    }

    pub fn n_params(&self) -> usize {
        self.mean_model.n_params()
    }

    /// Design row for an observation with the given arm indicator.
    pub fn design_row<T: Scalar>(&self, arm_indicator: u8) -> Vec<T> {
        match self.mean_model {
            MeanModel::InterceptPlusArm => vec![T::one(), T::from_u8(arm_indicator).unwrap()],
            MeanModel::InterceptOnly => vec![T::one()],
        }
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Binomial => "binomial",
        Family::Poisson => "poisson",
        Family::Gaussian => "gaussian",
    }
}

fn link_name(l: Link) -> &'static str {
    match l {
        Link::Log => "log",
        Link::Identity => "identity",
        Link::Logit => "logit",
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(family_name(*self))
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(link_name(*self))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.family, self.link)
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binomial" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            "gaussian" => Ok(Family::Gaussian),
            other => Err(Error::Usage(format!("unknown family '{other}'"))),
        }
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "log" => Ok(Link::Log),
            "identity" => Ok(Link::Identity),
            "logit" => Ok(Link::Logit),
            other => Err(Error::Usage(format!("unknown link '{other}'"))),
        }
    }
}

/// Parses `family-link`, e.g. `poisson-log`, into a two-arm model.
impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (fam, link) =
            s.split_once('-').ok_or_else(|| Error::Usage(format!("model '{s}' must look like family-link")))?;
        ModelSpec::two_arm(fam.parse()?, link.parse()?)
    }
}
