//! Marginal maximum likelihood estimation by EM.
//!
//! The E-step computes, for every item, expected category counts at each
//! quadrature node under the current posterior of each person. The M-step
//! maximizes each item's expected complete-data log-likelihood separately by
//! Fisher scoring with step halving; a step is only taken when it does not
//! lower that item's objective, so the marginal likelihood never decreases.
//!
//! Internal parameter vectors per family:
//!
//! | family | vector | relation |
//! |--------|--------|----------|
//! | 2PL | `[a, d]` | `d = -a b` |
//! | 3PL | `[a, d, g]` | `c = c_max * sigmoid(g)` |
//! | GPCM | `[a, d_1..d_K]` | `d_k = -a b_k` |
//! | NRM | `[a_1..a_K, d_1..d_K]` | `d_k = -a_k b_k` |

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ItemFamily, ItemParams, Quadrature};
use crate::dataset::ScoredMatrix;
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::math::{self, ln, ln_sigmoid, sigmoid, KahanSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub quadrature_points: usize,
    pub quadrature_bound: f64,
    pub max_cycles: usize,
    /// Convergence threshold on the largest absolute parameter change.
    pub tolerance: f64,
    /// Upper bound of the 3PL lower asymptote.
    pub guessing_max: f64,
    pub mstep_iterations: usize,
    pub max_halvings: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            quadrature_points: Quadrature::DEFAULT_POINTS,
            quadrature_bound: Quadrature::DEFAULT_BOUND,
            max_cycles: 500,
            tolerance: 1e-4,
            guessing_max: 0.5,
            mstep_iterations: 25,
            max_halvings: 10,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quadrature_points < 5 || !(self.quadrature_bound > 0.0) {
            return Err(Error::InvalidParameter {
                name: "quadrature",
                reason: "need at least 5 points on a positive bound",
            });
        }
        if !(self.tolerance > 0.0) || self.max_cycles == 0 {
            return Err(Error::InvalidParameter {
                name: "tolerance",
                reason: "tolerance and max_cycles must be positive",
            });
        }
        if !(self.guessing_max > 0.0 && self.guessing_max < 1.0) {
            return Err(Error::InvalidParameter {
                name: "guessing_max",
                reason: "must lie in (0, 1)",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub column: usize,
    pub name: String,
    pub reason: String,
}

/// A fitted (or assembled) item parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtModel {
    pub item_names: Vec<String>,
    /// Source column of each item in the data it was fitted on.
    pub columns: Vec<usize>,
    pub items: Vec<ItemParams>,
    pub quadrature: Quadrature,
    /// Marginal log-likelihood at the final parameters.
    pub loglik: Option<f64>,
    /// Marginal log-likelihood at the start of each cycle, then at the end.
    pub loglik_trace: Vec<f64>,
    pub em_cycles: usize,
    pub converged: bool,
    pub excluded: Vec<ExcludedItem>,
    pub warnings: Vec<String>,
}

impl IrtModel {
    /// Wraps known item parameters (for example a pre-calibrated pool).
    pub fn from_items(item_names: Vec<String>, items: Vec<ItemParams>) -> Result<Self> {
        if item_names.len() != items.len() {
            return Err(Error::DimensionMismatch {
                what: "item names",
                expected: items.len(),
                found: item_names.len(),
            });
        }
        if items.is_empty() {
            return Err(Error::EmptyPool);
        }
        for item in &items {
            item.validate()?;
        }
        Ok(Self {
            columns: (0..items.len()).collect(),
            item_names,
            items,
            quadrature: Quadrature::default(),
            loglik: None,
            loglik_trace: Vec::new(),
            em_cycles: 0,
            converged: true,
            excluded: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Picks this model's item columns out of a full response row.
    pub fn responses_for(&self, row: &[Option<u32>]) -> Vec<Option<u32>> {
        self.columns.iter().map(|&c| row.get(c).copied().flatten()).collect()
    }
}

fn parameter_count(family: ItemFamily, k: usize) -> usize {
    match family {
        ItemFamily::TwoPl => 2,
        ItemFamily::ThreePl => 3,
        ItemFamily::Gpcm => 1 + k,
        ItemFamily::Nrm => 2 * k,
    }
}

/// Converts item parameters to the internal estimation vector.
pub fn to_internal(params: &ItemParams, guessing_max: f64) -> Vec<f64> {
    match params {
        ItemParams::TwoPl { a, b } => vec![*a, -a * b],
        ItemParams::ThreePl { a, b, c } => {
            let ratio = (c / guessing_max).clamp(1e-6, 1.0 - 1e-6);
            vec![*a, -a * b, math::logit(ratio)]
        }
        ItemParams::Gpcm { a, b } => core::iter::once(*a).chain(b.iter().map(|bk| -a * bk)).collect(),
        ItemParams::Nrm { a, b } => a
            .iter()
            .copied()
            .chain(a.iter().zip(b).map(|(ak, bk)| -ak * bk))
            .collect(),
    }
}

/// Inverse of [`to_internal`].
pub fn from_internal(family: ItemFamily, phi: &[f64], guessing_max: f64) -> ItemParams {
    match family {
        ItemFamily::TwoPl => ItemParams::TwoPl {
            a: phi[0],
            b: -phi[1] / phi[0],
        },
        ItemFamily::ThreePl => ItemParams::ThreePl {
            a: phi[0],
            b: -phi[1] / phi[0],
            c: guessing_max * sigmoid(phi[2]),
        },
        ItemFamily::Gpcm => ItemParams::Gpcm {
            a: phi[0],
            b: phi[1..].iter().map(|d| -d / phi[0]).collect(),
        },
        ItemFamily::Nrm => {
            let k = phi.len() / 2;
            ItemParams::Nrm {
                a: phi[..k].to_vec(),
                b: (0..k).map(|j| -phi[k + j] / phi[j]).collect(),
            }
        }
    }
}

/// One item's M-step objective: `sum_q sum_k r_qk log P_k(theta_q; phi)`.
#[derive(Debug, Clone)]
pub struct ItemObjective {
    family: ItemFamily,
    /// Number of non-baseline categories `K`.
    k: usize,
    nodes: Vec<f64>,
    /// Expected counts, row-major `nodes × (K + 1)`.
    counts: Vec<f64>,
    guessing_max: f64,
}

/// Per-category log-probabilities and score vectors at one node.
struct NodeEval {
    log_p: Vec<f64>,
    p: Vec<f64>,
    /// Row-major `(K + 1) × n_params`: `d log P_k / d phi`.
    scores: Vec<f64>,
}

impl ItemObjective {
    pub fn new(
        family: ItemFamily,
        k: usize,
        nodes: Vec<f64>,
        counts: Vec<f64>,
        guessing_max: f64,
    ) -> Self {
        assert_eq!(counts.len(), nodes.len() * (k + 1));
        Self {
            family,
            k,
            nodes,
            counts,
            guessing_max,
        }
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.family, self.k)
    }

    fn eval_node(&self, phi: &[f64], theta: f64, with_scores: bool, out: &mut NodeEval) {
        let nc = self.k + 1;
        let np = phi.len();
        out.log_p.clear();
        out.p.clear();
        out.scores.clear();
        if with_scores {
            out.scores.resize(nc * np, 0.0);
        }
        match self.family {
            ItemFamily::ThreePl => {
                let (a, d, g) = (phi[0], phi[1], phi[2]);
                let eta = a * theta + d;
                let s = sigmoid(eta);
                let sg = sigmoid(g);
                let c = self.guessing_max * sg;
                let dc = self.guessing_max * sg * (1.0 - sg);
                let p1 = c + (1.0 - c) * s;
                out.log_p.push(math::ln_1p(-c) + ln_sigmoid(-eta));
                out.log_p.push(ln(p1));
                out.p.push((1.0 - c) * sigmoid(-eta));
                out.p.push(p1);
                if with_scores {
                    out.scores[0] = -s * theta;
                    out.scores[1] = -s;
                    out.scores[2] = -dc / (1.0 - c);
                    let w = (1.0 - c) * s * (1.0 - s) / p1;
                    out.scores[3] = w * theta;
                    out.scores[4] = w;
                    out.scores[5] = (1.0 - s) * dc / p1;
                }
            }
            _ => {
                // Logit families: z_k = X_k(theta) . phi, P = softmax(z).
                let design = |k: usize, j: usize| -> f64 { self.design(k, j, theta) };
                let z: Vec<f64> = (0..nc)
                    .map(|k| (0..np).map(|j| design(k, j) * phi[j]).sum())
                    .collect();
                let lse = math::log_sum_exp(&z);
                out.log_p.extend(z.iter().map(|v| v - lse));
                out.p.extend(out.log_p.iter().map(|&v| math::exp(v)));
                if with_scores {
                    for j in 0..np {
                        let mean: f64 = (0..nc).map(|k| out.p[k] * design(k, j)).sum();
                        for k in 0..nc {
                            out.scores[k * np + j] = design(k, j) - mean;
                        }
                    }
                }
            }
        }
    }

    /// Entry `(k, j)` of the logit design at `theta`.
    fn design(&self, k: usize, j: usize, theta: f64) -> f64 {
        match self.family {
            ItemFamily::TwoPl => match (k, j) {
                (1, 0) => theta,
                (1, 1) => 1.0,
                _ => 0.0,
            },
            ItemFamily::Gpcm => {
                if j == 0 {
                    k as f64 * theta
                } else if j <= k {
                    1.0
                } else {
                    0.0
                }
            }
            ItemFamily::Nrm => {
                if k == 0 {
                    0.0
                } else if j == k - 1 {
                    theta
                } else if j == self.k + k - 1 {
                    1.0
                } else {
                    0.0
                }
            }
            ItemFamily::ThreePl => unreachable!(),
        }
    }

    fn scratch(&self) -> NodeEval {
        NodeEval {
            log_p: Vec::with_capacity(self.k + 1),
            p: Vec::with_capacity(self.k + 1),
            scores: Vec::new(),
        }
    }

    pub fn value(&self, phi: &[f64]) -> f64 {
        let nc = self.k + 1;
        let mut eval = self.scratch();
        let mut acc = KahanSum::default();
        for (q, &theta) in self.nodes.iter().enumerate() {
            self.eval_node(phi, theta, false, &mut eval);
            for k in 0..nc {
                let r = self.counts[q * nc + k];
                if r > 0.0 {
                    acc.add(r * eval.log_p[k]);
                }
            }
        }
        acc.total()
    }

    /// Objective value and its analytic gradient.
    pub fn value_and_gradient(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let (v, g, _) = self.evaluate(phi);
        (v, g)
    }

    /// Value, gradient and expected (Fisher) information.
    pub fn evaluate(&self, phi: &[f64]) -> (f64, Vec<f64>, SquareMatrix) {
        let nc = self.k + 1;
        let np = phi.len();
        let mut eval = self.scratch();
        let mut acc = KahanSum::default();
        let mut grad = vec![0.0; np];
        let mut info = SquareMatrix::zeros(np);
        for (q, &theta) in self.nodes.iter().enumerate() {
            self.eval_node(phi, theta, true, &mut eval);
            let n_q: f64 = self.counts[q * nc..(q + 1) * nc].iter().sum();
            for k in 0..nc {
                let r = self.counts[q * nc + k];
                let s = &eval.scores[k * np..(k + 1) * np];
                if r > 0.0 {
                    acc.add(r * eval.log_p[k]);
                    for (g, sj) in grad.iter_mut().zip(s) {
                        *g += r * sj;
                    }
                }
                if n_q > 0.0 && eval.p[k] > 0.0 {
                    info.add_outer(s, n_q * eval.p[k]);
                }
            }
        }
        (acc.total(), grad, info)
    }

    /// Fisher scoring with step halving; never returns a point with a lower
    /// objective than `start`.
    pub fn maximize(&self, start: &[f64], iterations: usize, max_halvings: usize) -> Vec<f64> {
        let mut phi = start.to_vec();
        let mut current = self.value(&phi);
        for _ in 0..iterations {
            let (_, grad, info) = self.evaluate(&phi);
            let mut step = info.solve_spd_ridged(&grad);
            let largest = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
            if largest > 5.0 {
                for s in step.iter_mut() {
                    *s *= 5.0 / largest;
                }
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=max_halvings {
                let cand: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p + t * s).collect();
                let v = self.value(&cand);
                if v.is_finite() && v >= current {
                    accepted = Some((cand, v));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, v)) = accepted else { break };
            let change = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max);
            phi = cand;
            current = v;
            if change < 1e-10 {
                break;
            }
        }
        phi
    }
}

struct FitItem {
    column: usize,
    family: ItemFamily,
    k: usize,
}

/// Fits item parameters by marginal maximum likelihood.
///
/// `families[i]` selects the model for column `i` of `scored`. For NRM items
/// the matrix must hold category indices with the keyed option as 0 (see
/// [`crate::dataset::ResponseDataset::encode_categories`]).
pub fn fit_mml_em(scored: &ScoredMatrix, families: &[ItemFamily], config: &EmConfig) -> Result<IrtModel> {
    config.validate()?;
    if families.len() != scored.items() {
        return Err(Error::DimensionMismatch {
            what: "families",
            expected: scored.items(),
            found: families.len(),
        });
    }
    if scored.items() < 2 {
        return Err(Error::Unidentified("at least two items are required"));
    }
    let mut warnings = Vec::new();
    if scored.persons() < 50 {
        warnings.push(format!(
            "only {} persons; estimates may be unstable below 50",
            scored.persons()
        ));
    }

    let mut fit_items = Vec::new();
    let mut excluded = Vec::new();
    for (i, &family) in families.iter().enumerate() {
        let k = scored.max_scores()[i] as usize;
        if family.is_binary() && k != 1 {
            return Err(Error::InvalidParameter {
                name: "families",
                reason: "2PL/3PL items must be scored 0/1",
            });
        }
        let mut seen = vec![false; k + 1];
        for v in scored.column(i).flatten() {
            seen[v as usize] = true;
        }
        let distinct = seen.iter().filter(|&&s| s).count();
        if k == 0 || distinct < 2 {
            excluded.push(ExcludedItem {
                column: i,
                name: scored.item_names()[i].clone(),
                reason: String::from("zero observed variance"),
            });
            continue;
        }
        fit_items.push(FitItem {
            column: i,
            family,
            k,
        });
    }
    if fit_items.len() < 2 {
        return Err(Error::Unidentified("fewer than two items with observed variance"));
    }

    let quadrature = Quadrature::standard_normal(config.quadrature_points, config.quadrature_bound);
    let mut phis: Vec<Vec<f64>> = fit_items
        .iter()
        .map(|it| to_internal(&starting_values(scored, it), config.guessing_max))
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut cycles = 0;
    while cycles < config.max_cycles {
        cycles += 1;
        let (ll, counts) = e_step(scored, &fit_items, &phis, &quadrature, config.guessing_max);
        if !ll.is_finite() {
            return Err(Error::EmFailure { cycle: cycles });
        }
        trace.push(ll);
        let mut max_change: f64 = 0.0;
        for (idx, item) in fit_items.iter().enumerate() {
            let objective = ItemObjective::new(
                item.family,
                item.k,
                quadrature.nodes.clone(),
                counts[idx].clone(),
                config.guessing_max,
            );
            let updated = objective.maximize(&phis[idx], config.mstep_iterations, config.max_halvings);
            for (new, old) in updated.iter().zip(&phis[idx]) {
                max_change = max_change.max((new - old).abs());
            }
            phis[idx] = updated;
        }
        if max_change < config.tolerance {
            converged = true;
            break;
        }
    }
    let (ll, _) = e_step(scored, &fit_items, &phis, &quadrature, config.guessing_max);
    if !ll.is_finite() {
        return Err(Error::EmFailure { cycle: cycles + 1 });
    }
    trace.push(ll);

    Ok(IrtModel {
        item_names: fit_items
            .iter()
            .map(|it| scored.item_names()[it.column].clone())
            .collect(),
        columns: fit_items.iter().map(|it| it.column).collect(),
        items: fit_items
            .iter()
            .zip(&phis)
            .map(|(it, phi)| from_internal(it.family, phi, config.guessing_max))
            .collect(),
        quadrature,
        loglik: Some(ll),
        loglik_trace: trace,
        em_cycles: cycles,
        converged,
        excluded,
        warnings,
    })
}

fn starting_values(scored: &ScoredMatrix, item: &FitItem) -> ItemParams {
    let mut counts = vec![0.0; item.k + 1];
    for v in scored.column(item.column).flatten() {
        counts[v as usize] += 1.0;
    }
    let n: f64 = counts.iter().sum();
    match item.family {
        ItemFamily::TwoPl | ItemFamily::ThreePl => {
            let p = (counts[1] / n).clamp(0.01, 0.99);
            let b = -math::logit(p);
            if item.family == ItemFamily::TwoPl {
                ItemParams::TwoPl { a: 1.0, b }
            } else {
                ItemParams::ThreePl { a: 1.0, b, c: 0.1 }
            }
        }
        ItemFamily::Gpcm => {
            let b = if item.k == 1 {
                vec![0.0]
            } else {
                (0..item.k)
                    .map(|l| -1.0 + 2.0 * l as f64 / (item.k - 1) as f64)
                    .collect()
            };
            ItemParams::Gpcm { a: 1.0, b }
        }
        ItemFamily::Nrm => {
            // Category 0 is the keyed option, so other options start with
            // negative slopes; intercepts from smoothed log frequency ratios.
            let a = vec![-1.0; item.k];
            let b = (1..=item.k)
                .map(|k| {
                    let d = ln((counts[k] + 0.5) / (counts[0] + 0.5));
                    d // b = -d / a with a = -1
                })
                .collect();
            ItemParams::Nrm { a, b }
        }
    }
}

/// Returns the marginal log-likelihood and expected counts per item.
fn e_step(
    scored: &ScoredMatrix,
    items: &[FitItem],
    phis: &[Vec<f64>],
    quadrature: &Quadrature,
    guessing_max: f64,
) -> (f64, Vec<Vec<f64>>) {
    let nq = quadrature.len();
    let tables: Vec<Vec<f64>> = items
        .iter()
        .zip(phis)
        .map(|(it, phi)| {
            let params = from_internal(it.family, phi, guessing_max);
            let mut table = Vec::with_capacity(nq * (it.k + 1));
            for &theta in &quadrature.nodes {
                table.extend(params.log_probabilities(theta));
            }
            table
        })
        .collect();
    let log_w: Vec<f64> = quadrature.weights.iter().map(|&w| ln(w)).collect();
    let mut counts: Vec<Vec<f64>> = items.iter().map(|it| vec![0.0; nq * (it.k + 1)]).collect();
    let mut loglik = KahanSum::default();
    let mut post = vec![0.0; nq];
    let mut answered: Vec<(usize, usize)> = Vec::with_capacity(items.len());
    for p in 0..scored.persons() {
        answered.clear();
        for (idx, it) in items.iter().enumerate() {
            if let Some(v) = scored.get(p, it.column) {
                answered.push((idx, v as usize));
            }
        }
        if answered.is_empty() {
            continue;
        }
        post.copy_from_slice(&log_w);
        for &(idx, y) in &answered {
            let nc = items[idx].k + 1;
            let table = &tables[idx];
            for (q, v) in post.iter_mut().enumerate() {
                *v += table[q * nc + y];
            }
        }
        let max = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in post.iter_mut() {
            *v = math::exp(*v - max);
            total += *v;
        }
        loglik.add(max + ln(total));
        for v in post.iter_mut() {
            *v /= total;
        }
        for &(idx, y) in &answered {
            let nc = items[idx].k + 1;
            let c = &mut counts[idx];
            for (q, w) in post.iter().enumerate() {
                c[q * nc + y] += w;
            }
        }
    }
    (loglik.total(), counts)
}
