//! Classical test theory item statistics.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemType, ResponseDataset, ScoredMatrix, TotalScore};
use crate::error::{Error, Result};
use crate::math;

/// Label of the missing-response column in distractor tables.
pub const MISSING_OPTION: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStats {
    pub item: String,
    /// Mean score divided by the maximum score.
    pub difficulty: Option<f64>,
    /// Item-total Pearson correlation; `None` when undefined.
    pub rit: Option<f64>,
    /// Item-rest correlation (total minus the item itself).
    pub rir: Option<f64>,
    /// Difficulty in the top score group minus difficulty in the bottom one.
    pub uli: Option<f64>,
    pub n_valid: usize,
}

/// Assigns persons to `n_groups` score groups.
///
/// Persons are ordered by `(total, index)` and split by rank so that group
/// sizes differ by at most one. Persons with a missing total get `None`.
pub fn score_groups(totals: &[Option<f64>], n_groups: usize) -> Vec<Option<usize>> {
    let mut order: Vec<(usize, f64)> = totals
        .iter()
        .enumerate()
        .filter_map(|(p, t)| t.map(|t| (p, t)))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = order.len();
    let mut groups = vec![None; totals.len()];
    for (rank, (p, _)) in order.into_iter().enumerate() {
        groups[p] = Some(rank * n_groups / n);
    }
    groups
}

pub fn item_analysis(
    scored: &ScoredMatrix,
    totals: &TotalScore,
    n_groups: usize,
) -> Result<Vec<ItemStats>> {
    if totals.persons() != scored.persons() {
        return Err(Error::DimensionMismatch {
            what: "totals",
            expected: scored.persons(),
            found: totals.persons(),
        });
    }
    if n_groups < 2 {
        return Err(Error::InvalidParameter {
            name: "n_groups",
            reason: "need at least two groups",
        });
    }
    if scored.persons() < n_groups {
        return Err(Error::InsufficientData {
            what: "persons for score groups",
            needed: n_groups,
            found: scored.persons(),
        });
    }
    let groups = score_groups(&totals.values, n_groups);
    let stats = (0..scored.items())
        .map(|i| {
            let k = f64::from(scored.max_scores()[i]);
            let mut item_vals = Vec::new();
            let mut total_vals = Vec::new();
            let mut valid = Vec::new();
            let (mut top_sum, mut top_n, mut bottom_sum, mut bottom_n) = (0.0, 0usize, 0.0, 0usize);
            for p in 0..scored.persons() {
                let Some(v) = scored.get(p, i) else { continue };
                let v = f64::from(v);
                valid.push(v);
                if let Some(t) = totals.values[p] {
                    item_vals.push(v);
                    total_vals.push(t);
                }
                match groups[p] {
                    Some(0) => {
                        bottom_sum += v;
                        bottom_n += 1;
                    }
                    Some(g) if g == n_groups - 1 => {
                        top_sum += v;
                        top_n += 1;
                    }
                    _ => {}
                }
            }
            let difficulty = (!valid.is_empty() && k > 0.0).then(|| math::mean(&valid) / k);
            let rest: Vec<f64> = total_vals.iter().zip(&item_vals).map(|(t, v)| t - v).collect();
            let uli = (top_n > 0 && bottom_n > 0 && k > 0.0)
                .then(|| (top_sum / top_n as f64 - bottom_sum / bottom_n as f64) / k);
            ItemStats {
                item: scored.item_names()[i].clone(),
                difficulty,
                rit: math::pearson(&item_vals, &total_vals),
                rir: math::pearson(&item_vals, &rest),
                uli,
                n_valid: valid.len(),
            }
        })
        .collect();
    Ok(stats)
}

/// Option-selection proportions per score group for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorTable {
    pub item: String,
    pub groups: usize,
    /// Column labels: response options followed by [`MISSING_OPTION`].
    pub options: Vec<String>,
    /// Correct option (nominal items).
    pub key: Option<String>,
    /// `groups × options` proportions; rows of empty groups are zero.
    pub proportions: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    /// Lowest and highest total score in each group; `None` for empty groups.
    pub group_bounds: Vec<Option<(f64, f64)>>,
    pub empty: Vec<bool>,
}

pub fn distractor_analysis(
    dataset: &ResponseDataset,
    totals: &TotalScore,
    item: &str,
    n_groups: usize,
) -> Result<DistractorTable> {
    if n_groups < 2 {
        return Err(Error::InvalidParameter {
            name: "n_groups",
            reason: "need at least two groups",
        });
    }
    if totals.persons() != dataset.persons() {
        return Err(Error::DimensionMismatch {
            what: "totals",
            expected: dataset.persons(),
            found: totals.persons(),
        });
    }
    let i = dataset.item_index(item)?;
    let info = &dataset.item_info()[i];
    let mut options: Vec<String> = match info.item_type {
        ItemType::Nominal => dataset.options(i),
        ItemType::Binary | ItemType::Ordinal => {
            (0..=dataset.max_score(i)?).map(|k| k.to_string()).collect()
        }
    };
    for row in dataset.rows() {
        if let Some(code) = row[i].as_deref() {
            if !options.iter().any(|o| o == code) {
                options.push(code.to_string());
            }
        }
    }
    options.push(MISSING_OPTION.to_string());
    let n_opts = options.len();

    let groups = score_groups(&totals.values, n_groups);
    let mut counts = vec![vec![0usize; n_opts]; n_groups];
    let mut bounds: Vec<Option<(f64, f64)>> = vec![None; n_groups];
    for (p, g) in groups.iter().enumerate() {
        let Some(g) = *g else { continue };
        let col = match dataset.response(p, i) {
            Some(code) => options.iter().position(|o| o == code).unwrap_or(n_opts - 1),
            None => n_opts - 1,
        };
        counts[g][col] += 1;
        let t = totals.values[p].unwrap_or_default();
        bounds[g] = Some(match bounds[g] {
            None => (t, t),
            Some((lo, hi)) => (lo.min(t), hi.max(t)),
        });
    }
    let proportions = counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect();
    let empty = counts.iter().map(|r| r.iter().sum::<usize>() == 0).collect();
    Ok(DistractorTable {
        item: info.name.clone(),
        groups: n_groups,
        options,
        key: info.key.clone(),
        proportions,
        counts,
        group_bounds: bounds,
        empty,
    })
}

/// Cronbach's alpha over complete-case persons; `None` when the total
/// variance is zero.
pub fn cronbach_alpha(scored: &ScoredMatrix) -> Result<Option<f64>> {
    let m = scored.items();
    if m < 2 {
        return Err(Error::InsufficientData {
            what: "items for alpha",
            needed: 2,
            found: m,
        });
    }
    let complete: Vec<Vec<f64>> = (0..scored.persons())
        .filter_map(|p| {
            scored
                .row(p)
                .iter()
                .map(|v| v.map(f64::from))
                .collect::<Option<Vec<f64>>>()
        })
        .collect();
    if complete.len() < 3 {
        return Err(Error::InsufficientData {
            what: "complete-case persons for alpha",
            needed: 3,
            found: complete.len(),
        });
    }
    let totals: Vec<f64> = complete.iter().map(|r| r.iter().sum()).collect();
    let var_total = math::variance(&totals);
    if !(var_total > 0.0) {
        return Ok(None);
    }
    let sum_item_var: f64 = (0..m)
        .map(|i| {
            let col: Vec<f64> = complete.iter().map(|r| r[i]).collect();
            math::variance(&col)
        })
        .sum();
    let m = m as f64;
    Ok(Some(m / (m - 1.0) * (1.0 - sum_item_var / var_total)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionValidity {
    pub r: Option<f64>,
    /// Two-sided p-value of the t test with `n - 2` degrees of freedom.
    pub p_value: Option<f64>,
    pub n: usize,
}

pub fn criterion_validity(totals: &TotalScore, criterion: &[Option<f64>]) -> Result<CriterionValidity> {
    if criterion.len() != totals.persons() {
        return Err(Error::DimensionMismatch {
            what: "criterion",
            expected: totals.persons(),
            found: criterion.len(),
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = totals
        .values
        .iter()
        .zip(criterion)
        .filter_map(|(t, c)| Some(((*t)?, (*c)?)))
        .unzip();
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData {
            what: "complete pairs",
            needed: 3,
            found: n,
        });
    }
    let r = math::pearson(&x, &y);
    let p_value = r.map(|r| {
        let df = n as f64 - 2.0;
        if r.abs() >= 1.0 {
            0.0
        } else {
            let t = r * math::sqrt(df / (1.0 - r * r));
            math::student_t_two_sided(t, df)
        }
    });
    Ok(CriterionValidity { r, p_value, n })
}
