//! Logistic-regression DIF detection.
//!
//! The full model for item `i` is
//! `logit P = b0 + b1 theta + b2 G + b3 G theta`, where `G` is 1 for the
//! focal group. Nested submodels are compared by likelihood ratio.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::ScoredMatrix;
use crate::error::{Error, Result};
use crate::math::{self, sigmoid};
use crate::regression::{irls_logistic, GlmFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifTest {
    /// H0: b2 = b3 = 0 (df 2).
    Both,
    /// b3 fixed at 0, H0: b2 = 0 (df 1).
    UniformOnly,
    /// H0: b3 = 0 (df 1).
    NonuniformOnly,
}

impl DifTest {
    pub fn df(self) -> usize {
        match self {
            DifTest::Both => 2,
            DifTest::UniformOnly | DifTest::NonuniformOnly => 1,
        }
    }
}

impl core::str::FromStr for DifTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(DifTest::Both),
            "uniform_only" | "uniform" => Ok(DifTest::UniformOnly),
            "nonuniform_only" | "nonuniform" => Ok(DifTest::NonuniformOnly),
            _ => Err(Error::InvalidParameter {
                name: "test",
                reason: "expected both, uniform_only or nonuniform_only",
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifType {
    None,
    Uniform,
    Nonuniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingSource {
    Total,
    StandardizedTotal,
    External,
}

/// Full-model fit `(b0, b1, b2, b3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifFit {
    pub beta: [f64; 4],
    pub vcov: [[f64; 4]; 4],
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifResult {
    pub item: String,
    /// Coefficients of the larger model; `b3` is 0 for [`DifTest::UniformOnly`].
    pub beta: [f64; 4],
    pub vcov: [[f64; 4]; 4],
    pub lrt_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub test: DifTest,
    pub matching_source: MatchingSource,
    pub loglik_full: f64,
    pub loglik_sub: f64,
}

fn check_inputs(y: &[u8], theta: &[f64], g: &[u8]) -> Result<()> {
    for (what, len) in [("matching criterion", theta.len()), ("group", g.len())] {
        if len != y.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: y.len(),
                found: len,
            });
        }
    }
    if y.iter().chain(g).any(|&v| v > 1) {
        return Err(Error::InvalidParameter {
            name: "y/g",
            reason: "outcome and group must be 0 or 1",
        });
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: "matching values must be finite",
        });
    }
    if g.is_empty() || g.iter().all(|&v| v == g[0]) {
        return Err(Error::SingleGroup);
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::DegenerateOutcome);
    }
    Ok(())
}

fn design(theta: &[f64], g: &[u8], columns: usize) -> Vec<Vec<f64>> {
    theta
        .iter()
        .zip(g)
        .map(|(&t, &gi)| {
            let gf = f64::from(gi);
            let mut row = vec![1.0, t, gf, gf * t];
            row.truncate(columns);
            row
        })
        .collect()
}

fn fit_columns(y: &[u8], theta: &[f64], g: &[u8], columns: usize) -> Result<GlmFit> {
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    irls_logistic(&design(theta, g, columns), &yf)
}

fn widen(fit: &GlmFit) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut beta = [0.0; 4];
    let mut vcov = [[0.0; 4]; 4];
    let p = fit.beta.len();
    beta[..p].copy_from_slice(&fit.beta);
    for (i, row) in vcov.iter_mut().enumerate().take(p) {
        for (j, v) in row.iter_mut().enumerate().take(p) {
            *v = fit.vcov[(i, j)];
        }
    }
    (beta, vcov)
}

/// Maximum likelihood fit of the full four-parameter model.
pub fn fit_dif_logistic(y: &[u8], theta: &[f64], g: &[u8]) -> Result<DifFit> {
    check_inputs(y, theta, g)?;
    let fit = fit_columns(y, theta, g, 4)?;
    let (beta, vcov) = widen(&fit);
    Ok(DifFit {
        beta,
        vcov,
        loglik: fit.loglik,
        converged: fit.converged,
    })
}

/// Likelihood ratio test of group effects.
pub fn dif_test(y: &[u8], theta: &[f64], g: &[u8], test: DifTest) -> Result<DifResult> {
    check_inputs(y, theta, g)?;
    let (full_cols, sub_cols) = match test {
        DifTest::Both => (4, 2),
        DifTest::UniformOnly => (3, 2),
        DifTest::NonuniformOnly => (4, 3),
    };
    let full = fit_columns(y, theta, g, full_cols)?;
    let sub = fit_columns(y, theta, g, sub_cols).map_err(|e| Error::Test(Box::new(e)))?;
    let lrt_stat = (2.0 * (full.loglik - sub.loglik)).max(0.0);
    let df = test.df();
    let (beta, vcov) = widen(&full);
    Ok(DifResult {
        item: String::new(),
        beta,
        vcov,
        lrt_stat,
        df,
        p_value: math::chi_squared_sf(lrt_stat, df as f64).clamp(0.0, 1.0),
        test,
        matching_source: MatchingSource::External,
        loglik_full: full.loglik,
        loglik_sub: sub.loglik,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PAdjust {
    None,
    BenjaminiHochberg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifScanConfig {
    pub alpha: f64,
    pub p_adjust: PAdjust,
}

impl Default for DifScanConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            p_adjust: PAdjust::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifScanEntry {
    pub item: String,
    /// Test of both group effects; decides whether the item is flagged.
    pub result: Option<DifResult>,
    /// Test of the interaction alone; decides the DIF type of flagged items.
    pub nonuniform: Option<DifResult>,
    /// p-value used for flagging (adjusted when requested).
    pub p_flag: Option<f64>,
    pub dif_type: DifType,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifSummary {
    pub none: usize,
    pub uniform: usize,
    pub nonuniform: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifScan {
    pub entries: Vec<DifScanEntry>,
    pub summary: DifSummary,
    pub config: DifScanConfig,
    pub matching_source: MatchingSource,
}

/// Benjamini-Hochberg adjusted p-values.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let mut out = vec![0.0; m];
    let mut running = 1.0_f64;
    for (pos, &i) in order.iter().enumerate() {
        let rank = m - pos;
        running = running.min(p[i] * m as f64 / rank as f64);
        out[i] = running.min(1.0);
    }
    out
}

/// Runs the DIF tests for every item against the given matching variable.
///
/// Per-item failures are recorded in the entry and do not stop the scan.
pub fn dif_scan(
    scored: &ScoredMatrix,
    matching: &[Option<f64>],
    source: MatchingSource,
    g: &[Option<u8>],
    config: &DifScanConfig,
) -> Result<DifScan> {
    for (what, len) in [("matching criterion", matching.len()), ("group", g.len())] {
        if len != scored.persons() {
            return Err(Error::DimensionMismatch {
                what,
                expected: scored.persons(),
                found: len,
            });
        }
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "must lie in (0, 1)",
        });
    }
    let present: Vec<f64> = matching.iter().flatten().copied().collect();
    if present.len() < 2 || present.iter().all(|&v| v == present[0]) {
        return Err(Error::Constant("matching criterion"));
    }
    let groups: Vec<u8> = g.iter().flatten().copied().collect();
    if groups.is_empty() || groups.iter().all(|&v| v == groups[0]) {
        return Err(Error::SingleGroup);
    }

    let mut entries = Vec::with_capacity(scored.items());
    for i in 0..scored.items() {
        let item = scored.item_names()[i].clone();
        let outcome = if scored.max_scores()[i] != 1 {
            Err(Error::InvalidParameter {
                name: "item",
                reason: "DIF scan needs binary items",
            })
        } else {
            let (mut y, mut t, mut gg) = (Vec::new(), Vec::new(), Vec::new());
            for p in 0..scored.persons() {
                if let (Some(yi), Some(ti), Some(gi)) = (scored.get(p, i), matching[p], g[p]) {
                    y.push(yi as u8);
                    t.push(ti);
                    gg.push(gi);
                }
            }
            dif_test(&y, &t, &gg, DifTest::Both)
                .and_then(|both| Ok((both, dif_test(&y, &t, &gg, DifTest::NonuniformOnly)?)))
        };
        entries.push(match outcome {
            Ok((mut both, mut nonuniform)) => {
                both.item = item.clone();
                both.matching_source = source;
                nonuniform.item = item.clone();
                nonuniform.matching_source = source;
                DifScanEntry {
                    item,
                    p_flag: Some(both.p_value),
                    result: Some(both),
                    nonuniform: Some(nonuniform),
                    dif_type: DifType::None,
                    error: None,
                }
            }
            Err(e) => DifScanEntry {
                item,
                result: None,
                nonuniform: None,
                p_flag: None,
                dif_type: DifType::None,
                error: Some(format!("{e}")),
            },
        });
    }

    if config.p_adjust == PAdjust::BenjaminiHochberg {
        let idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].p_flag.is_some()).collect();
        let raw: Vec<f64> = idx.iter().map(|&i| entries[i].p_flag.unwrap_or(1.0)).collect();
        for (&i, adj) in idx.iter().zip(benjamini_hochberg(&raw)) {
            entries[i].p_flag = Some(adj);
        }
    }

    let mut summary = DifSummary::default();
    for e in &mut entries {
        match (e.p_flag, &e.nonuniform) {
            (Some(p), Some(nu)) => {
                e.dif_type = if p >= config.alpha {
                    DifType::None
                } else if nu.p_value < config.alpha {
                    DifType::Nonuniform
                } else {
                    DifType::Uniform
                };
                match e.dif_type {
                    DifType::None => summary.none += 1,
                    DifType::Uniform => summary.uniform += 1,
                    DifType::Nonuniform => summary.nonuniform += 1,
                }
            }
            _ => summary.errors += 1,
        }
    }
    Ok(DifScan {
        entries,
        summary,
        config: *config,
        matching_source: source,
    })
}

/// DIF-in-change scan: matching on an external observed score.
pub fn dif_c_scan(
    scored: &ScoredMatrix,
    matching: &[Option<f64>],
    g: &[Option<u8>],
    config: &DifScanConfig,
) -> Result<DifScan> {
    dif_scan(scored, matching, MatchingSource::External, g, config)
}

/// Reference (`G = 0`) and focal (`G = 1`) curves on `theta_grid`.
pub fn dif_icc_pair(beta: &[f64; 4], theta_grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let reference = theta_grid.iter().map(|&t| sigmoid(beta[0] + beta[1] * t)).collect();
    let focal = theta_grid
        .iter()
        .map(|&t| sigmoid(beta[0] + beta[2] + (beta[1] + beta[3]) * t))
        .collect();
    (reference, focal)
}

/// Matching value where the two group curves cross, if any.
pub fn crossing_point(beta: &[f64; 4]) -> Option<f64> {
    if beta[3] == 0.0 {
        return None;
    }
    let x = -beta[2] / beta[3];
    x.is_finite().then_some(x)
}
