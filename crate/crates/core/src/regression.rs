//! Regression item characteristic curves on an observed matching criterion.
//!
//! Two models are provided: the plain logistic curve fitted by iteratively
//! reweighted least squares, and the logistic curve with a lower asymptote
//! `c + (1 - c) / (1 + exp(-(b0 + b1 * theta)))` fitted by box-constrained
//! quasi-Newton maximization of the Bernoulli likelihood.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SeparationDirection};
use crate::linalg::SquareMatrix;
use crate::math::{self, ln, ln_sigmoid, sigmoid};

pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const IRLS_MAX_ITERATIONS: usize = 50;

/// Result of a logistic GLM fit on an arbitrary design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    /// Inverse of the information matrix at the optimum.
    pub vcov: SquareMatrix,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn logistic_loglik(design: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    let mut acc = math::KahanSum::default();
    for (row, &yi) in design.iter().zip(y) {
        let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        acc.add(yi * ln_sigmoid(eta) + (1.0 - yi) * ln_sigmoid(-eta));
    }
    acc.total()
}

/// Logistic-regression score vector `X^T (y - mu)` and information `X^T W X`.
pub fn logistic_score_information(
    design: &[Vec<f64>],
    y: &[f64],
    beta: &[f64],
) -> (Vec<f64>, SquareMatrix) {
    let p = beta.len();
    let mut score = vec![0.0; p];
    let mut info = SquareMatrix::zeros(p);
    for (row, &yi) in design.iter().zip(y) {
        let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        let mu = sigmoid(eta);
        for (s, x) in score.iter_mut().zip(row) {
            *s += x * (yi - mu);
        }
        info.add_outer(row, mu * (1.0 - mu));
    }
    (score, info)
}

/// Maximum likelihood logistic regression by IRLS with step halving.
///
/// `design` rows are per-observation covariate vectors (include the intercept
/// column explicitly); `y` holds 0/1 outcomes.
pub fn irls_logistic(design: &[Vec<f64>], y: &[f64]) -> Result<GlmFit> {
    let n = design.len();
    let p = design.first().map_or(0, Vec::len);
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "outcome",
            expected: n,
            found: y.len(),
        });
    }
    if n < p.max(3) {
        return Err(Error::InsufficientData {
            what: "complete observations",
            needed: p.max(3),
            found: n,
        });
    }
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateOutcome);
    }

    let mut beta = vec![0.0; p];
    let ybar = ones as f64 / n as f64;
    beta[0] = math::logit(ybar);
    let mut loglik = logistic_loglik(design, y, &beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITERATIONS {
        iterations += 1;
        let (score, info) = logistic_score_information(design, y, &beta);
        let Some(step) = info.solve_spd(&score) else {
            return Err(Error::Unidentified("design matrix is rank deficient"));
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let ll = logistic_loglik(design, y, &cand);
            if ll >= loglik - 1e-12 * loglik.abs() {
                accepted = Some((cand, ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ll)) = accepted else { break };
        let max_change = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max);
        beta = cand;
        loglik = ll;
        if max_change < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }

    let max_eta = design
        .iter()
        .map(|row| row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let max_beta = beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if !converged && (max_eta > 25.0 || max_beta > 50.0) {
        return Err(Error::Separation(SeparationDirection::Mixed));
    }
    let (_, info) = logistic_score_information(design, y, &beta);
    let vcov = info
        .inverse()
        .ok_or(Error::Unidentified("information matrix is singular"))?;
    Ok(GlmFit {
        beta,
        vcov,
        loglik,
        converged,
        iterations,
    })
}

/// Something that maps an ability value to a response probability.
pub trait ItemCurve {
    fn probability(&self, theta: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta0: f64,
    pub beta1: f64,
    pub vcov: [[f64; 2]; 2],
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticFit {
    /// Discrimination/difficulty form: `a = beta1`, `b = -beta0 / beta1`.
    pub fn to_irt(&self) -> (f64, f64) {
        (self.beta1, -self.beta0 / self.beta1)
    }
}

impl ItemCurve for LogisticFit {
    fn probability(&self, theta: f64) -> f64 {
        sigmoid(self.beta0 + self.beta1 * theta)
    }
}

fn check_pairs(y: &[u8], theta: &[f64]) -> Result<()> {
    if y.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            what: "matching criterion",
            expected: y.len(),
            found: theta.len(),
        });
    }
    if y.len() < 3 {
        return Err(Error::InsufficientData {
            what: "complete pairs",
            needed: 3,
            found: y.len(),
        });
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidParameter {
            name: "y",
            reason: "outcomes must be 0 or 1",
        });
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::DegenerateOutcome);
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: "matching values must be finite",
        });
    }
    Ok(())
}

/// Detects (quasi-)complete separation of a binary outcome by one predictor.
pub fn separation_direction(y: &[u8], theta: &[f64]) -> Option<SeparationDirection> {
    let range = |class: u8| {
        theta
            .iter()
            .zip(y)
            .filter(|(_, &v)| v == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&t, _)| {
                (lo.min(t), hi.max(t))
            })
    };
    let (lo0, hi0) = range(0);
    let (lo1, hi1) = range(1);
    if hi0 <= lo1 {
        Some(SeparationDirection::Positive)
    } else if hi1 <= lo0 {
        Some(SeparationDirection::Negative)
    } else {
        None
    }
}

/// Logistic regression of a binary item on the matching criterion.
pub fn fit_logistic(y: &[u8], theta: &[f64]) -> Result<LogisticFit> {
    check_pairs(y, theta)?;
    if theta.iter().all(|&t| t == theta[0]) {
        return Err(Error::Constant("matching criterion"));
    }
    if let Some(direction) = separation_direction(y, theta) {
        return Err(Error::Separation(direction));
    }
    let design: Vec<Vec<f64>> = theta.iter().map(|&t| vec![1.0, t]).collect();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let fit = irls_logistic(&design, &yf)?;
    Ok(LogisticFit {
        beta0: fit.beta[0],
        beta1: fit.beta[1],
        vcov: [
            [fit.vcov[(0, 0)], fit.vcov[(0, 1)]],
            [fit.vcov[(1, 0)], fit.vcov[(1, 1)]],
        ],
        loglik: fit.loglik,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guessing3plFit {
    pub beta0: f64,
    pub beta1: f64,
    /// Lower asymptote in `[0, c_max]`.
    pub c: f64,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl Guessing3plFit {
    pub fn to_irt(&self) -> (f64, f64, f64) {
        (self.beta1, -self.beta0 / self.beta1, self.c)
    }
}

impl ItemCurve for Guessing3plFit {
    fn probability(&self, theta: f64) -> f64 {
        self.c + (1.0 - self.c) * sigmoid(self.beta0 + self.beta1 * theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guessing3plOptions {
    pub c_max: f64,
    /// Holds `c` at this value instead of estimating it.
    pub fixed_c: Option<f64>,
    pub max_evaluations: usize,
}

impl Default for Guessing3plOptions {
    fn default() -> Self {
        Self {
            c_max: 0.99,
            fixed_c: None,
            max_evaluations: 500,
        }
    }
}

/// Starting values of `c` for the multistart search.
pub const GUESSING_STARTS: [f64; 3] = [0.0, 0.1, 0.25];

/// Log-likelihood and its gradient with respect to `(beta0, beta1, c)`.
pub fn guessing_loglik_gradient(y: &[u8], theta: &[f64], params: [f64; 3]) -> (f64, [f64; 3]) {
    let [b0, b1, c] = params;
    let mut ll = math::KahanSum::default();
    let mut g = [0.0; 3];
    let ln_1mc = math::ln_1p(-c);
    for (&yi, &t) in y.iter().zip(theta) {
        let eta = b0 + b1 * t;
        let s = sigmoid(eta);
        let q = sigmoid(-eta);
        let ds = s * q;
        if yi == 1 {
            let pi = c + (1.0 - c) * s;
            ll.add(if c == 0.0 { ln_sigmoid(eta) } else { ln(pi) });
            let w = (1.0 - c) * ds / pi;
            g[0] += w;
            g[1] += w * t;
            g[2] += q / pi;
        } else {
            ll.add(ln_1mc + ln_sigmoid(-eta));
            g[0] -= s;
            g[1] -= s * t;
            g[2] -= 1.0 / (1.0 - c);
        }
    }
    (ll.total(), g)
}

struct Objective<'a> {
    y: &'a [u8],
    theta: &'a [f64],
    evaluations: usize,
}

impl Objective<'_> {
    /// Negative log-likelihood and gradient.
    fn eval(&mut self, x: &[f64; 3]) -> (f64, [f64; 3]) {
        self.evaluations += 1;
        let (ll, g) = guessing_loglik_gradient(self.y, self.theta, *x);
        (-ll, [-g[0], -g[1], -g[2]])
    }
}

/// Projected BFGS on `(beta0, beta1, c)` with `c` boxed in `[lo, hi]`.
fn projected_bfgs(
    obj: &mut Objective<'_>,
    start: [f64; 3],
    lo: f64,
    hi: f64,
    max_evaluations: usize,
) -> ([f64; 3], f64, bool) {
    let project = |mut x: [f64; 3]| {
        x[2] = x[2].clamp(lo, hi);
        x
    };
    let mut x = project(start);
    let (mut f, mut g) = obj.eval(&x);
    let mut h = SquareMatrix::identity(3);
    let mut first = true;
    let mut converged = false;
    while obj.evaluations < max_evaluations {
        let fixed_c = (x[2] <= lo && g[2] > 0.0) || (x[2] >= hi && g[2] < 0.0) || lo == hi;
        let free = [true, true, !fixed_c];
        let pg = (0..3)
            .filter(|&j| free[j])
            .map(|j| g[j].abs())
            .fold(0.0, f64::max);
        if pg < 1e-7 * (1.0 + f.abs()).min(1e3) {
            converged = true;
            break;
        }
        let mut d = [0.0; 3];
        for i in 0..3 {
            if !free[i] {
                continue;
            }
            for j in 0..3 {
                if free[j] {
                    d[i] -= h[(i, j)] * g[j];
                }
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h = SquareMatrix::identity(3);
            for j in 0..3 {
                d[j] = if free[j] { -g[j] } else { 0.0 };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        }
        let _ = slope;
        let mut t = 1.0;
        let mut next = None;
        while obj.evaluations < max_evaluations {
            let cand = project([x[0] + t * d[0], x[1] + t * d[1], x[2] + t * d[2]]);
            let (fc, gc) = obj.eval(&cand);
            let decrease: f64 = (0..3).map(|j| g[j] * (cand[j] - x[j])).sum();
            if fc.is_finite() && fc <= f + 1e-4 * decrease {
                next = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                break;
            }
        }
        let Some((xn, fnew, gn)) = next else {
            // No further decrease possible along the projected direction.
            converged = pg < 1e-4 * (1.0 + f.abs());
            break;
        };
        let s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]];
        let yv = [gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]];
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let small_step = s.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-12;
        let small_change = (f - fnew).abs() <= 1e-15 * (1.0 + f.abs());
        x = xn;
        f = fnew;
        g = gn;
        if small_step && small_change {
            converged = true;
            break;
        }
        if sy > 1e-12 {
            if first {
                let yy: f64 = yv.iter().map(|v| v * v).sum();
                h = SquareMatrix::identity(3);
                for i in 0..3 {
                    h[(i, i)] = sy / yy;
                }
                first = false;
            }
            // BFGS inverse update: H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let hy = h.mul_vec(&yv);
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..3 {
                for j in 0..3 {
                    h[(i, j)] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    (x, -f, converged)
}

/// Logistic ICC with a lower asymptote, maximized under `0 <= c <= c_max`.
pub fn fit_3pl_regression(
    y: &[u8],
    theta: &[f64],
    options: &Guessing3plOptions,
) -> Result<Guessing3plFit> {
    if !(options.c_max > 0.0 && options.c_max < 1.0) {
        return Err(Error::InvalidParameter {
            name: "c_max",
            reason: "must lie in (0, 1)",
        });
    }
    if let Some(c) = options.fixed_c {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::InvalidParameter {
                name: "fixed_c",
                reason: "must lie in [0, 1)",
            });
        }
    }
    let start = fit_logistic(y, theta)?;
    let mut obj = Objective {
        y,
        theta,
        evaluations: 0,
    };
    let (lo, hi) = match options.fixed_c {
        Some(c) => (c, c),
        None => (0.0, options.c_max),
    };
    let starts: Vec<f64> = match options.fixed_c {
        Some(c) => vec![c],
        None => GUESSING_STARTS.iter().map(|&c| c.min(options.c_max)).collect(),
    };
    let mut best: Option<Guessing3plFit> = None;
    let budget = options.max_evaluations;
    let mut all_converged = true;
    for c0 in starts {
        let before = obj.evaluations;
        let remaining = budget.saturating_sub(before).max(1);
        let (x, ll, converged) = projected_bfgs(
            &mut obj,
            [start.beta0, start.beta1, c0],
            lo,
            hi,
            before + remaining,
        );
        all_converged &= converged;
        let fit = Guessing3plFit {
            beta0: x[0],
            beta1: x[1],
            c: x[2],
            loglik: ll,
            converged,
            evaluations: 0,
        };
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one start");
    best.evaluations = obj.evaluations;
    best.converged = best.converged && (all_converged || obj.evaluations < budget);
    Ok(best)
}

/// Evaluates a fitted curve on a grid.
pub fn icc_curve(fit: &impl ItemCurve, theta_grid: &[f64]) -> Vec<f64> {
    theta_grid.iter().map(|&t| fit.probability(t)).collect()
}
