//! Post-hoc computerized adaptive testing.
//!
//! A stored response pattern is replayed through the adaptive loop: pick the
//! most informative unused item at the current estimate, read its response,
//! re-estimate ability, stop once a termination rule fires.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{item_information, score_person, IrtModel, ScoringMethod};
use crate::math;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Most informative item at theta = 0.
    MaxInfoAtZero,
    FixedItem(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Maximum Fisher information.
    #[serde(rename = "MI")]
    MaxInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatConfig {
    pub start_rule: StartRule,
    pub selection: Selection,
    pub min_sem: f64,
    pub max_items: usize,
    pub theta_estimator: ScoringMethod,
}

impl Default for CatConfig {
    fn default() -> Self {
        Self {
            start_rule: StartRule::MaxInfoAtZero,
            selection: Selection::MaxInfo,
            min_sem: 0.4,
            max_items: 100,
            theta_estimator: ScoringMethod::Eap,
        }
    }
}

impl CatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_sem > 0.0) {
            return Err(Error::InvalidParameter {
                name: "min_sem",
                reason: "must be positive",
            });
        }
        if self.max_items == 0 {
            return Err(Error::InvalidParameter {
                name: "max_items",
                reason: "must be at least 1",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatStep {
    pub item: usize,
    pub response: u32,
    pub theta: f64,
    /// `None` while an ML estimate sits on the boundary.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SemMet,
    PoolExhausted,
    MaxItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatTrajectory {
    pub steps: Vec<CatStep>,
    pub final_theta: f64,
    pub final_se: Option<f64>,
    pub termination: Termination,
}

/// Draws one response per item from the model at `true_theta`.
pub fn generate_pattern(model: &IrtModel, true_theta: f64, seed: u64) -> Vec<u32> {
    let mut rng = SeededRng::new(seed);
    model
        .items
        .iter()
        .map(|item| rng.categorical(&item.probabilities(true_theta)) as u32)
        .collect()
}

fn most_informative(model: &IrtModel, used: &[bool], theta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, item) in model.items.iter().enumerate() {
        if used[i] {
            continue;
        }
        let info = item_information(item, theta);
        if best.is_none_or(|(_, b)| info > b) {
            best = Some((i, info));
        }
    }
    best.map(|(i, _)| i)
}

/// Replays `pattern` (one response per pool item) through the adaptive loop.
pub fn run_cat(model: &IrtModel, pattern: &[u32], config: &CatConfig) -> Result<CatTrajectory> {
    config.validate()?;
    let n = model.items.len();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    if pattern.len() != n {
        return Err(Error::DimensionMismatch {
            what: "response pattern",
            expected: n,
            found: pattern.len(),
        });
    }
    let mut used = vec![false; n];
    let mut answered: Vec<Option<u32>> = vec![None; n];
    let mut steps = Vec::new();
    let mut theta = 0.0;
    loop {
        let item = match (steps.is_empty(), config.start_rule) {
            (true, StartRule::FixedItem(i)) => {
                if i >= n {
                    return Err(Error::InvalidParameter {
                        name: "start_rule",
                        reason: "fixed start item is outside the pool",
                    });
                }
                i
            }
            _ => most_informative(model, &used, theta).ok_or(Error::EmptyPool)?,
        };
        used[item] = true;
        answered[item] = Some(pattern[item]);
        let est = score_person(model, &answered, config.theta_estimator)?;
        theta = est.theta;
        steps.push(CatStep {
            item,
            response: pattern[item],
            theta,
            se: est.se,
        });
        let termination = if est.se.is_some_and(|se| se <= config.min_sem) {
            Some(Termination::SemMet)
        } else if steps.len() == n {
            Some(Termination::PoolExhausted)
        } else if steps.len() >= config.max_items {
            Some(Termination::MaxItems)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(CatTrajectory {
                steps,
                final_theta: theta,
                final_se: est.se,
                termination,
            });
        }
    }
}

/// `theta ± z se` per step; `None` where the step has no standard error.
pub fn trajectory_ci(traj: &CatTrajectory, level: f64) -> Result<Vec<Option<(f64, f64)>>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter {
            name: "level",
            reason: "must lie in (0, 1)",
        });
    }
    let z = math::normal_quantile(0.5 * (1.0 + level));
    Ok(traj
        .steps
        .iter()
        .map(|s| s.se.map(|se| (s.theta - z * se, s.theta + z * se)))
        .collect())
}

/// One simulee of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub simulee: usize,
    pub true_theta: f64,
    pub final_theta: f64,
    pub final_se: Option<f64>,
    pub n_items: usize,
    pub termination: Termination,
}

/// Simulates and replays one pattern per true ability; simulee `i` uses
/// seed `seed + i`.
pub fn simulate_batch(model: &IrtModel, true_thetas: &[f64], seed: u64, config: &CatConfig) -> Result<Vec<BatchRow>> {
    true_thetas
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let pattern = generate_pattern(model, t, seed.wrapping_add(i as u64));
            let traj = run_cat(model, &pattern, config)?;
            Ok(BatchRow {
                simulee: i,
                true_theta: t,
                final_theta: traj.final_theta,
                final_se: traj.final_se,
                n_items: traj.steps.len(),
                termination: traj.termination,
            })
        })
        .collect()
}
