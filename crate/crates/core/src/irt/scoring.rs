use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{IrtModel, ItemParams, Quadrature};
use crate::error::{Error, Result};
use crate::math::{self, KahanSum};

/// Ability estimates are confined to this interval.
pub const THETA_BOUND: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringMethod {
    #[serde(rename = "EAP")]
    Eap,
    #[serde(rename = "ML")]
    Ml,
}

impl core::str::FromStr for ScoringMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EAP" => Ok(ScoringMethod::Eap),
            "ML" | "MLE" => Ok(ScoringMethod::Ml),
            _ => Err(Error::InvalidParameter {
                name: "method",
                reason: "expected EAP or ML",
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub theta: f64,
    /// `None` when ML ends on the boundary (no interior optimum).
    pub se: Option<f64>,
    pub method: ScoringMethod,
    pub boundary: bool,
}

/// Scores one response vector, indexed like `model.items`. Missing entries
/// are skipped.
pub fn score_person(model: &IrtModel, responses: &[Option<u32>], method: ScoringMethod) -> Result<AbilityEstimate> {
    if responses.len() != model.items.len() {
        return Err(Error::DimensionMismatch {
            what: "responses",
            expected: model.items.len(),
            found: responses.len(),
        });
    }
    let mut answered = Vec::new();
    for (item, r) in model.items.iter().zip(responses) {
        if let Some(y) = *r {
            if y as usize >= item.categories() {
                return Err(Error::InvalidParameter {
                    name: "responses",
                    reason: "category outside the item's range",
                });
            }
            answered.push((item, y as usize));
        }
    }
    if answered.is_empty() {
        return Err(Error::NoResponses);
    }
    match method {
        ScoringMethod::Eap => Ok(eap(&answered, &model.quadrature)),
        ScoringMethod::Ml => Ok(ml(&answered)),
    }
}

fn log_likelihood(answered: &[(&ItemParams, usize)], theta: f64) -> f64 {
    let mut acc = KahanSum::default();
    for (item, y) in answered {
        acc.add(item.log_probabilities(theta)[*y]);
    }
    acc.total()
}

fn score(answered: &[(&ItemParams, usize)], theta: f64) -> f64 {
    answered
        .iter()
        .map(|(item, y)| item.log_prob_derivatives(theta)[*y])
        .sum()
}

fn eap(answered: &[(&ItemParams, usize)], quadrature: &Quadrature) -> AbilityEstimate {
    let log_post: Vec<f64> = quadrature
        .nodes
        .iter()
        .zip(&quadrature.weights)
        .map(|(&t, &w)| math::ln(w) + log_likelihood(answered, t))
        .collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let post: Vec<f64> = log_post.iter().map(|v| math::exp(v - max)).collect();
    let total: f64 = post.iter().sum();
    let mean: f64 = post.iter().zip(&quadrature.nodes).map(|(p, t)| p * t).sum::<f64>() / total;
    let var: f64 = post
        .iter()
        .zip(&quadrature.nodes)
        .map(|(p, t)| p * (t - mean) * (t - mean))
        .sum::<f64>()
        / total;
    AbilityEstimate {
        theta: mean,
        se: Some(math::sqrt(var.max(f64::MIN_POSITIVE))),
        method: ScoringMethod::Eap,
        boundary: false,
    }
}

fn ml(answered: &[(&ItemParams, usize)]) -> AbilityEstimate {
    // Coarse grid search guards against local optima of 3PL/NRM likelihoods.
    let mut theta = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=120 {
        let t = -THETA_BOUND + 0.1 * i as f64;
        let ll = log_likelihood(answered, t);
        if ll > best {
            best = ll;
            theta = t;
        }
    }
    for _ in 0..100 {
        let g = score(answered, theta);
        let info: f64 = answered
            .iter()
            .map(|(item, _)| super::item_information(item, theta))
            .sum();
        let mut step = (g / info.max(1e-8)).clamp(-1.0, 1.0);
        let mut moved = false;
        for _ in 0..30 {
            let cand = (theta + step).clamp(-THETA_BOUND, THETA_BOUND);
            let ll = log_likelihood(answered, cand);
            if ll >= best {
                step = cand - theta;
                theta = cand;
                best = ll;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || step.abs() < 1e-10 {
            break;
        }
    }
    let boundary = THETA_BOUND - theta.abs() < 1e-6;
    let se = if boundary {
        None
    } else {
        let h = 1e-5;
        let observed = -(score(answered, theta + h) - score(answered, theta - h)) / (2.0 * h);
        (observed > 0.0).then(|| 1.0 / math::sqrt(observed))
    };
    AbilityEstimate {
        theta,
        se,
        method: ScoringMethod::Ml,
        boundary: boundary || se.is_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn model(items: Vec<ItemParams>) -> IrtModel {
        let names = (0..items.len()).map(|i| i.to_string()).collect();
        IrtModel::from_items(names, items).unwrap()
    }

    fn symmetric() -> IrtModel {
        model(
            [-1.5, -0.5, 0.5, 1.5]
                .iter()
                .map(|&b| ItemParams::TwoPl { a: 1.2, b })
                .collect(),
        )
    }

    #[test]
    fn missing_only_is_an_error() {
        let m = symmetric();
        assert_eq!(score_person(&m, &[None; 4], ScoringMethod::Eap), Err(Error::NoResponses));
        assert_eq!(score_person(&m, &[None; 4], ScoringMethod::Ml), Err(Error::NoResponses));
    }

    #[test]
    fn symmetric_pattern_scores_near_zero() {
        let m = symmetric();
        let r = [Some(1), Some(1), Some(0), Some(0)];
        let eap = score_person(&m, &r, ScoringMethod::Eap).unwrap();
        assert!(eap.theta.abs() < 1e-10);
        let ml = score_person(&m, &r, ScoringMethod::Ml).unwrap();
        assert!(ml.theta.abs() < 1e-6);
        assert!(ml.se.unwrap() > 0.0);
    }

    #[test]
    fn all_correct_ml_hits_boundary() {
        let m = symmetric();
        let ml = score_person(&m, &[Some(1); 4], ScoringMethod::Ml).unwrap();
        assert!(ml.boundary);
        assert_eq!(ml.se, None);
        let eap = score_person(&m, &[Some(1); 4], ScoringMethod::Eap).unwrap();
        assert!(!eap.boundary && eap.se.unwrap() > 0.0 && eap.theta > 0.5);
    }

    #[test]
    fn ml_se_matches_information_for_two_pl() {
        let m = symmetric();
        let r = [Some(1), Some(0), Some(1), Some(0)];
        let ml = score_person(&m, &r, ScoringMethod::Ml).unwrap();
        let info = super::super::test_information(&m.items, ml.theta, &[0, 1, 2, 3]).unwrap();
        assert!((ml.se.unwrap() - 1.0 / info.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn out_of_range_category_rejected() {
        let m = symmetric();
        assert!(score_person(&m, &[Some(2), None, None, None], ScoringMethod::Eap).is_err());
        assert!(score_person(&m, &[Some(1)], ScoringMethod::Eap).is_err());
    }

    #[test]
    fn eap_on_mixed_families_matches_fine_grid() {
        let m = model(vec![
            ItemParams::ThreePl { a: 1.4, b: 0.2, c: 0.2 },
            ItemParams::Gpcm { a: 0.9, b: vec![-1.0, 0.5] },
            ItemParams::Nrm { a: vec![-1.1, -0.4], b: vec![-0.2, 0.8] },
        ]);
        let r = [Some(1), Some(2), Some(1)];
        let est = score_person(&m, &r, ScoringMethod::Eap).unwrap();
        let n = 10_001;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let t = -6.0 + 12.0 * i as f64 / (n - 1) as f64;
            let mut l = (-0.5 * t * t).exp();
            for (item, y) in m.items.iter().zip(r) {
                l *= item.probabilities(t)[y.unwrap() as usize];
            }
            z += l;
            m1 += l * t;
            m2 += l * t * t;
        }
        let mean = m1 / z;
        let sd = (m2 / z - mean * mean).sqrt();
        assert!((est.theta - mean).abs() < 1e-4);
        assert!((est.se.unwrap() - sd).abs() < 1e-4);
    }
}
