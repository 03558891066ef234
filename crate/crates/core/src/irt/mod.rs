//! Unidimensional item response theory.
//!
//! Item families share one representation, [`ItemParams`], in the usual
//! discrimination/difficulty form:
//!
//! - 2PL/3PL: `c + (1 - c) / (1 + exp(-a (theta - b)))`
//! - GPCM: adjacent-category logits `log(P_k / P_{k-1}) = a (theta - b_k)`
//! - NRM: baseline logits `log(P_k / P_0) = a_k (theta - b_k)`, with category 0
//!   (the keyed option) as baseline.
//!
//! Estimation works on an intercept parametrization that is linear in the
//! unknowns wherever possible; see [`em`].

pub mod em;
pub mod quadrature;
pub mod scoring;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, sigmoid};

pub use em::{fit_mml_em, EmConfig, ExcludedItem, IrtModel, ItemObjective};
pub use quadrature::Quadrature;
pub use scoring::{score_person, AbilityEstimate, ScoringMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ItemFamily {
    #[serde(rename = "2PL")]
    TwoPl,
    #[serde(rename = "3PL")]
    ThreePl,
    #[serde(rename = "GPCM")]
    Gpcm,
    #[serde(rename = "NRM")]
    Nrm,
}

impl ItemFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemFamily::TwoPl => "2PL",
            ItemFamily::ThreePl => "3PL",
            ItemFamily::Gpcm => "GPCM",
            ItemFamily::Nrm => "NRM",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, ItemFamily::TwoPl | ItemFamily::ThreePl)
    }
}

impl core::str::FromStr for ItemFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "2PL" => Ok(ItemFamily::TwoPl),
            "3PL" => Ok(ItemFamily::ThreePl),
            "GPCM" => Ok(ItemFamily::Gpcm),
            "NRM" => Ok(ItemFamily::Nrm),
            _ => Err(Error::InvalidParameter {
                name: "family",
                reason: "expected 2PL, 3PL, GPCM or NRM",
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ItemParams {
    #[serde(rename = "2PL")]
    TwoPl { a: f64, b: f64 },
    #[serde(rename = "3PL")]
    ThreePl { a: f64, b: f64, c: f64 },
    /// `b[k - 1]` is the threshold between categories `k - 1` and `k`.
    #[serde(rename = "GPCM")]
    Gpcm { a: f64, b: Vec<f64> },
    /// `a[k - 1]`, `b[k - 1]` belong to category `k`; category 0 is the baseline.
    #[serde(rename = "NRM")]
    Nrm { a: Vec<f64>, b: Vec<f64> },
}

impl ItemParams {
    pub fn family(&self) -> ItemFamily {
        match self {
            ItemParams::TwoPl { .. } => ItemFamily::TwoPl,
            ItemParams::ThreePl { .. } => ItemFamily::ThreePl,
            ItemParams::Gpcm { .. } => ItemFamily::Gpcm,
            ItemParams::Nrm { .. } => ItemFamily::Nrm,
        }
    }

    /// Number of response categories, `K + 1`.
    pub fn categories(&self) -> usize {
        match self {
            ItemParams::TwoPl { .. } | ItemParams::ThreePl { .. } => 2,
            ItemParams::Gpcm { b, .. } => b.len() + 1,
            ItemParams::Nrm { b, .. } => b.len() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            ItemParams::TwoPl { a, b } => finite(&[*a, *b]),
            ItemParams::ThreePl { a, b, c } => finite(&[*a, *b]) && (0.0..1.0).contains(c),
            ItemParams::Gpcm { a, b } => a.is_finite() && !b.is_empty() && finite(b),
            ItemParams::Nrm { a, b } => !b.is_empty() && a.len() == b.len() && finite(a) && finite(b),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "item parameters",
                reason: "non-finite value, c outside [0, 1), or category count mismatch",
            })
        }
    }

    /// Category probabilities at `theta`, index `k = 0..=K`.
    pub fn probabilities(&self, theta: f64) -> Vec<f64> {
        match self {
            ItemParams::TwoPl { a, b } => {
                let p = prob_3pl(*a, *b, 0.0, theta);
                vec![1.0 - p, p]
            }
            ItemParams::ThreePl { a, b, c } => {
                let p = prob_3pl(*a, *b, *c, theta);
                vec![1.0 - p, p]
            }
            ItemParams::Gpcm { a, b } => prob_gpcm(*a, b, theta),
            ItemParams::Nrm { a, b } => prob_nrm(a, b, theta),
        }
    }

    /// `log P_k(theta)` for every category, without underflow.
    pub fn log_probabilities(&self, theta: f64) -> Vec<f64> {
        match self {
            ItemParams::TwoPl { a, b } => {
                let eta = a * (theta - b);
                vec![math::ln_sigmoid(-eta), math::ln_sigmoid(eta)]
            }
            ItemParams::ThreePl { a, b, c } => {
                let eta = a * (theta - b);
                let p1 = if *c == 0.0 {
                    math::ln_sigmoid(eta)
                } else {
                    math::ln(c + (1.0 - c) * sigmoid(eta))
                };
                vec![math::ln_1p(-c) + math::ln_sigmoid(-eta), p1]
            }
            ItemParams::Gpcm { .. } | ItemParams::Nrm { .. } => {
                let z = self.logits(theta);
                let lse = math::log_sum_exp(&z);
                z.into_iter().map(|v| v - lse).collect()
            }
        }
    }

    /// Category logits relative to category 0 (GPCM/NRM only).
    fn logits(&self, theta: f64) -> Vec<f64> {
        match self {
            ItemParams::Gpcm { a, b } => {
                let mut z = Vec::with_capacity(b.len() + 1);
                let mut acc = 0.0;
                z.push(0.0);
                for bk in b {
                    acc += a * (theta - bk);
                    z.push(acc);
                }
                z
            }
            ItemParams::Nrm { a, b } => core::iter::once(0.0)
                .chain(a.iter().zip(b).map(|(ak, bk)| ak * (theta - bk)))
                .collect(),
            _ => unreachable!("logits are defined for polytomous families"),
        }
    }

    /// Category slopes `d z_k / d theta` of the logit families.
    fn category_slopes(&self) -> Vec<f64> {
        match self {
            ItemParams::TwoPl { a, .. } => vec![0.0, *a],
            ItemParams::Gpcm { a, b } => (0..=b.len()).map(|k| k as f64 * a).collect(),
            ItemParams::Nrm { a, .. } => core::iter::once(0.0).chain(a.iter().copied()).collect(),
            ItemParams::ThreePl { .. } => unreachable!("3PL is not a logit family"),
        }
    }

    /// `d log P_k / d theta` for each category.
    pub fn log_prob_derivatives(&self, theta: f64) -> Vec<f64> {
        match self {
            ItemParams::ThreePl { a, b, c } => {
                let s = sigmoid(a * (theta - b));
                let p1 = c + (1.0 - c) * s;
                let dp1 = (1.0 - c) * a * s * (1.0 - s);
                vec![-a * s, dp1 / p1]
            }
            _ => {
                let p = self.probabilities(theta);
                let s = self.category_slopes();
                let mean: f64 = p.iter().zip(&s).map(|(pk, sk)| pk * sk).sum();
                s.into_iter().map(|sk| sk - mean).collect()
            }
        }
    }
}

/// Three-parameter logistic probability of a correct response.
pub fn prob_3pl(a: f64, b: f64, c: f64, theta: f64) -> f64 {
    c + (1.0 - c) * sigmoid(a * (theta - b))
}

/// GPCM category probabilities, normalized with log-sum-exp.
pub fn prob_gpcm(a: f64, b: &[f64], theta: f64) -> Vec<f64> {
    let mut z = Vec::with_capacity(b.len() + 1);
    z.push(0.0);
    let mut acc = 0.0;
    for bk in b {
        acc += a * (theta - bk);
        z.push(acc);
    }
    let mut p = Vec::new();
    math::softmax_into(&z, &mut p);
    p
}

/// NRM category probabilities: softmax over `{0, a_k (theta - b_k)}`.
pub fn prob_nrm(a: &[f64], b: &[f64], theta: f64) -> Vec<f64> {
    let z: Vec<f64> = core::iter::once(0.0)
        .chain(a.iter().zip(b).map(|(ak, bk)| ak * (theta - bk)))
        .collect();
    let mut p = Vec::new();
    math::softmax_into(&z, &mut p);
    p
}

/// Fisher information of one item about `theta`.
pub fn item_information(params: &ItemParams, theta: f64) -> f64 {
    match params {
        ItemParams::TwoPl { a, b } => {
            let p = prob_3pl(*a, *b, 0.0, theta);
            a * a * p * (1.0 - p)
        }
        ItemParams::ThreePl { a, b, c } => {
            let p = prob_3pl(*a, *b, *c, theta);
            let r = (p - c) / (1.0 - c);
            (a * a * r * r * (1.0 - p) / p).max(0.0)
        }
        _ => {
            // Variance of the category slope under the category distribution.
            let p = params.probabilities(theta);
            let s = params.category_slopes();
            let mean: f64 = p.iter().zip(&s).map(|(pk, sk)| pk * sk).sum();
            p.iter()
                .zip(&s)
                .map(|(pk, sk)| pk * (sk - mean) * (sk - mean))
                .sum::<f64>()
                .max(0.0)
        }
    }
}

/// Sum of item informations over `subset` (indices into `items`).
pub fn test_information(items: &[ItemParams], theta: f64, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    subset
        .iter()
        .map(|&i| {
            items
                .get(i)
                .map(|p| item_information(p, theta))
                .ok_or(Error::InvalidParameter {
                    name: "subset",
                    reason: "item index out of range",
                })
        })
        .sum()
}

/// Standard error implied by a test information value.
pub fn standard_error(information: f64) -> f64 {
    1.0 / math::sqrt(information)
}
