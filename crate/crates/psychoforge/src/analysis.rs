//! Analysis documents shared by the HTTP service and the CLI. Each document
//! echoes the configuration it was computed with.

use psychoforge_core::cat::{generate_pattern, run_cat, trajectory_ci, CatConfig, CatTrajectory, StartRule};
use psychoforge_core::classical::{
    cronbach_alpha, criterion_validity, distractor_analysis, item_analysis, CriterionValidity, DistractorTable,
    ItemStats,
};
use psychoforge_core::dataset::{ItemType, ResponseDataset, ScoredMatrix};
use psychoforge_core::dif::{dif_icc_pair, dif_scan, DifScan, DifScanConfig, MatchingSource, PAdjust};
use psychoforge_core::irt::{
    fit_mml_em, item_information, EmConfig, ExcludedItem, IrtModel, ItemFamily, ItemParams, ScoringMethod,
};
use psychoforge_core::regression::{
    fit_3pl_regression, fit_logistic, icc_curve, Guessing3plFit, Guessing3plOptions, LogisticFit,
};
use serde::{Deserialize, Serialize};

use crate::host::{Generation, ResourceError};
use crate::io::ModelDocument;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    /// Something the analysis needs is not in the session.
    #[error("{0}")]
    Prerequisite(String),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Fit(String),
}

impl From<ResourceError> for AnalysisError {
    fn from(e: ResourceError) -> Self {
        match e {
            ResourceError::Absent(_) => AnalysisError::Prerequisite(e.to_string()),
            ResourceError::Failed(..) => AnalysisError::Fit(e.to_string()),
        }
    }
}

fn fit_err(e: psychoforge_core::Error) -> AnalysisError {
    match e {
        psychoforge_core::Error::InvalidParameter { .. } => AnalysisError::InvalidParameter(e.to_string()),
        _ => AnalysisError::Fit(e.to_string()),
    }
}

fn invalid(msg: impl Into<String>) -> AnalysisError {
    AnalysisError::InvalidParameter(msg.into())
}

/// Evenly spaced grid over `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalParams {
    pub n_groups: usize,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        Self { n_groups: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalSummary {
    pub mean: f64,
    pub sd: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalDocument {
    pub config: ClassicalParams,
    pub persons: usize,
    pub items: Vec<ItemStats>,
    pub alpha: Option<f64>,
    pub totals: TotalSummary,
    pub distractors: Vec<DistractorTable>,
    pub criterion_validity: Option<CriterionValidity>,
    pub score_warnings: usize,
}

pub fn classical(gen: &Generation, params: &ClassicalParams) -> Result<ClassicalDocument, AnalysisError> {
    let ds = gen.dataset()?;
    let scored = gen.scored()?;
    let totals = gen.total_scores()?;
    if params.n_groups < 2 || params.n_groups > ds.persons() {
        return Err(invalid("n_groups must lie between 2 and the number of persons"));
    }
    let items = item_analysis(&scored, &totals, params.n_groups).map_err(fit_err)?;
    let distractors = ds
        .item_names()
        .map(|name| distractor_analysis(&ds, &totals, name, params.n_groups))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fit_err)?;
    let alpha = if scored.items() >= 2 {
        cronbach_alpha(&scored).ok().flatten()
    } else {
        None
    };
    let criterion_validity = match ds.criterion() {
        Some(c) => criterion_validity(&totals, c).ok(),
        None => None,
    };
    Ok(ClassicalDocument {
        config: *params,
        persons: ds.persons(),
        items,
        alpha,
        totals: TotalSummary {
            mean: totals.mean,
            sd: totals.sd,
            degenerate: totals.degenerate,
        },
        distractors,
        criterion_validity,
        score_warnings: scored.warnings().len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingChoice {
    Total,
    Standardized,
    External,
}

impl MatchingChoice {
    pub fn source(self) -> MatchingSource {
        match self {
            MatchingChoice::Total => MatchingSource::Total,
            MatchingChoice::Standardized => MatchingSource::StandardizedTotal,
            MatchingChoice::External => MatchingSource::External,
        }
    }
}

fn matching_values(gen: &Generation, choice: MatchingChoice) -> Result<Vec<Option<f64>>, AnalysisError> {
    Ok(match choice {
        MatchingChoice::Total => gen.total_scores()?.values.clone(),
        MatchingChoice::Standardized => gen.total_scores()?.standardized.clone(),
        MatchingChoice::External => gen.matching()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionModel {
    Logistic,
    #[serde(rename = "3pl")]
    Guessing3pl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionParams {
    pub matching: MatchingChoice,
    pub model: RegressionModel,
    pub c_max: f64,
    pub grid_points: usize,
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self {
            matching: MatchingChoice::Standardized,
            model: RegressionModel::Logistic,
            c_max: 0.99,
            grid_points: 61,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RegressionFit {
    Logistic(LogisticFit),
    #[serde(rename = "3pl")]
    Guessing3pl(Guessing3plFit),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrtForm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub theta: Vec<f64>,
    pub probability: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionDocument {
    pub config: RegressionParams,
    pub item: String,
    pub n: usize,
    pub fit: RegressionFit,
    pub irt: IrtForm,
    pub curve: Curve,
}

pub fn regression(gen: &Generation, item: &str, params: &RegressionParams) -> Result<RegressionDocument, AnalysisError> {
    if !(params.grid_points >= 2 && params.grid_points <= 10_001) {
        return Err(invalid("grid_points must lie in 2..=10001"));
    }
    let ds = gen.dataset()?;
    let idx = ds
        .item_index(item)
        .map_err(|_| AnalysisError::NotFound(format!("unknown item `{item}`")))?;
    let scored = gen.scored()?;
    if scored.max_scores()[idx] != 1 {
        return Err(invalid(format!("item `{item}` is not binary-scored")));
    }
    let matching = matching_values(gen, params.matching)?;
    let (mut y, mut theta) = (Vec::new(), Vec::new());
    for (p, m) in matching.iter().enumerate() {
        if let (Some(v), Some(t)) = (scored.get(p, idx), m) {
            y.push(v as u8);
            theta.push(*t);
        }
    }
    let (lo, hi) = theta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (-3.0, 3.0) };
    let theta_grid = grid(lo, hi, params.grid_points);
    let (fit, irt, probability) = match params.model {
        RegressionModel::Logistic => {
            let f = fit_logistic(&y, &theta).map_err(fit_err)?;
            let (a, b) = f.to_irt();
            let curve = icc_curve(&f, &theta_grid);
            (RegressionFit::Logistic(f), IrtForm { a, b, c: 0.0 }, curve)
        }
        RegressionModel::Guessing3pl => {
            let opts = Guessing3plOptions {
                c_max: params.c_max,
                ..Guessing3plOptions::default()
            };
            let f = fit_3pl_regression(&y, &theta, &opts).map_err(fit_err)?;
            let (a, b, c) = f.to_irt();
            let curve = icc_curve(&f, &theta_grid);
            (RegressionFit::Guessing3pl(f), IrtForm { a, b, c }, curve)
        }
    };
    Ok(RegressionDocument {
        config: *params,
        item: item.to_string(),
        n: y.len(),
        fit,
        irt,
        curve: Curve {
            theta: theta_grid,
            probability,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrtParams {
    /// One family for all items, or a comma-separated list with one entry
    /// per item. Empty picks 2PL, GPCM or NRM from the item type.
    pub families: String,
    pub quadrature_points: usize,
    pub quadrature_bound: f64,
    pub max_cycles: usize,
    pub tolerance: f64,
    pub guessing_max: f64,
}

impl Default for IrtParams {
    fn default() -> Self {
        let em = EmConfig::default();
        Self {
            families: String::new(),
            quadrature_points: em.quadrature_points,
            quadrature_bound: em.quadrature_bound,
            max_cycles: em.max_cycles,
            tolerance: em.tolerance,
            guessing_max: em.guessing_max,
        }
    }
}

impl IrtParams {
    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            quadrature_points: self.quadrature_points,
            quadrature_bound: self.quadrature_bound,
            max_cycles: self.max_cycles,
            tolerance: self.tolerance,
            guessing_max: self.guessing_max,
            ..EmConfig::default()
        }
    }

    pub fn resolve_families(&self, ds: &ResponseDataset) -> Result<Vec<ItemFamily>, AnalysisError> {
        let parts: Vec<&str> = self
            .families
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let parse = |s: &str| s.parse::<ItemFamily>().map_err(|_| invalid(format!("unknown family `{s}`")));
        match parts.len() {
            0 => Ok(ds
                .item_types()
                .iter()
                .map(|t| match t {
                    ItemType::Binary => ItemFamily::TwoPl,
                    ItemType::Ordinal => ItemFamily::Gpcm,
                    ItemType::Nominal => ItemFamily::Nrm,
                })
                .collect()),
            1 => Ok(vec![parse(parts[0])?; ds.items()]),
            n if n == ds.items() => parts.into_iter().map(parse).collect(),
            n => Err(invalid(format!("families lists {n} entries for {} items", ds.items()))),
        }
    }
}

/// Response matrix for IRT: nominal items under NRM use category codes,
/// everything else uses scores.
pub fn irt_matrix(ds: &ResponseDataset, scored: &ScoredMatrix, families: &[ItemFamily]) -> Result<ScoredMatrix, AnalysisError> {
    let needs_codes = ds
        .item_types()
        .iter()
        .zip(families)
        .any(|(t, f)| *t == ItemType::Nominal && *f == ItemFamily::Nrm);
    if !needs_codes {
        return Ok(scored.clone());
    }
    let codes = ds.encode_categories().map_err(fit_err)?;
    let types = ds.item_types();
    let use_codes: Vec<bool> = types
        .iter()
        .zip(families)
        .map(|(t, f)| *t == ItemType::Nominal && *f == ItemFamily::Nrm)
        .collect();
    let rows: Vec<Vec<Option<u32>>> = (0..ds.persons())
        .map(|p| {
            (0..ds.items())
                .map(|i| if use_codes[i] { codes.get(p, i) } else { scored.get(p, i) })
                .collect()
        })
        .collect();
    let max_scores = (0..ds.items())
        .map(|i| if use_codes[i] { codes.max_scores()[i] } else { scored.max_scores()[i] })
        .collect();
    ScoredMatrix::from_rows(scored.item_names().to_vec(), &rows, max_scores).map_err(fit_err)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrtConfigEcho {
    pub families: Vec<ItemFamily>,
    pub em: EmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationCurve {
    pub theta: Vec<f64>,
    pub test_information: Vec<f64>,
    pub standard_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrtDocument {
    pub config: IrtConfigEcho,
    pub model: ModelDocument,
    pub excluded: Vec<ExcludedItem>,
    pub warnings: Vec<String>,
    pub loglik_trace: Vec<f64>,
    pub information: InformationCurve,
}

pub fn fit_irt(gen: &Generation, params: &IrtParams) -> Result<(IrtDocument, IrtModel), AnalysisError> {
    let ds = gen.dataset()?;
    let scored = gen.scored()?;
    let families = params.resolve_families(&ds)?;
    let config = params.em_config();
    config.validate().map_err(fit_err)?;
    let matrix = irt_matrix(&ds, &scored, &families)?;
    let model = fit_mml_em(&matrix, &families, &config).map_err(fit_err)?;
    let theta = grid(-4.0, 4.0, 81);
    let info: Vec<f64> = theta
        .iter()
        .map(|&t| model.items.iter().map(|it| item_information(it, t)).sum())
        .collect();
    let doc = IrtDocument {
        config: IrtConfigEcho { families, em: config },
        model: ModelDocument::from_model(&model),
        excluded: model.excluded.clone(),
        warnings: model.warnings.clone(),
        loglik_trace: model.loglik_trace.clone(),
        information: InformationCurve {
            standard_error: info.iter().map(|&i| 1.0 / i.sqrt()).collect(),
            theta,
            test_information: info,
        },
    };
    Ok((doc, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifParams {
    pub matching: MatchingChoice,
    pub alpha: f64,
    pub p_adjust: PAdjust,
    pub grid_points: usize,
}

impl Default for DifParams {
    fn default() -> Self {
        Self {
            matching: MatchingChoice::Standardized,
            alpha: 0.05,
            p_adjust: PAdjust::None,
            grid_points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IccPair {
    pub item: String,
    pub theta: Vec<f64>,
    pub reference: Vec<f64>,
    pub focal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifDocument {
    pub config: DifParams,
    pub scan: DifScan,
    pub curves: Vec<IccPair>,
}

pub fn dif(gen: &Generation, params: &DifParams) -> Result<DifDocument, AnalysisError> {
    if !(params.grid_points >= 2 && params.grid_points <= 10_001) {
        return Err(invalid("grid_points must lie in 2..=10001"));
    }
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    let scored = gen.scored()?;
    let group = gen.group()?;
    let matching = matching_values(gen, params.matching)?;
    let config = DifScanConfig {
        alpha: params.alpha,
        p_adjust: params.p_adjust,
    };
    let scan = dif_scan(&scored, &matching, params.matching.source(), &group, &config).map_err(fit_err)?;
    let (lo, hi) = matching
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let theta = grid(lo, hi, params.grid_points);
    let curves = scan
        .entries
        .iter()
        .filter_map(|e| {
            let r = e.result.as_ref()?;
            let (reference, focal) = dif_icc_pair(&r.beta, &theta);
            Some(IccPair {
                item: e.item.clone(),
                theta: theta.clone(),
                reference,
                focal,
            })
        })
        .collect();
    Ok(DifDocument {
        config: *params,
        scan,
        curves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatModelChoice {
    /// 2PL fitted to the host's binary items.
    Host,
    /// Built-in example pool.
    Example,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatParams {
    pub model: CatModelChoice,
    pub true_theta: f64,
    pub min_sem: f64,
    pub max_items: Option<usize>,
    pub seed: u64,
    pub estimator: ScoringMethod,
    /// `mi` or the index of a fixed first item.
    pub start: String,
    pub level: f64,
}

impl Default for CatParams {
    fn default() -> Self {
        Self {
            model: CatModelChoice::Host,
            true_theta: 1.0,
            min_sem: 0.4,
            max_items: None,
            seed: 0,
            estimator: ScoringMethod::Eap,
            start: "mi".into(),
            level: 0.95,
        }
    }
}

impl CatParams {
    pub fn cat_config(&self, pool: usize) -> Result<CatConfig, AnalysisError> {
        let start_rule = match self.start.trim() {
            "mi" | "MI" => StartRule::MaxInfoAtZero,
            s => StartRule::FixedItem(
                s.parse()
                    .map_err(|_| invalid("start must be `mi` or an item index"))?,
            ),
        };
        let config = CatConfig {
            start_rule,
            min_sem: self.min_sem,
            max_items: self.max_items.unwrap_or(pool),
            theta_estimator: self.estimator,
            ..CatConfig::default()
        };
        config.validate().map_err(fit_err)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatRequestEcho {
    pub model: CatModelChoice,
    pub true_theta: f64,
    pub seed: u64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatDocument {
    pub config: CatConfig,
    pub request: CatRequestEcho,
    pub item_names: Vec<String>,
    pub pattern: Vec<u32>,
    pub trajectory: CatTrajectory,
    /// `[lower, upper]` per step; `null` where no standard error exists.
    pub ci: Vec<Option<(f64, f64)>>,
}

/// Fixed 30-item 2PL pool used when no host model is wanted.
pub fn example_model() -> IrtModel {
    let n = 30;
    let items = (0..n)
        .map(|i| ItemParams::TwoPl {
            a: 1.2 + 0.2 * (i % 5) as f64,
            b: -2.5 + 5.0 * i as f64 / (n - 1) as f64,
        })
        .collect();
    let names = (1..=n).map(|i| format!("ex{i:02}")).collect();
    IrtModel::from_items(names, items).expect("example pool is valid")
}

pub fn cat(gen: &Generation, params: &CatParams) -> Result<CatDocument, AnalysisError> {
    if !params.true_theta.is_finite() || params.true_theta.abs() > 6.0 {
        return Err(invalid("true_theta must lie in [-6, 6]"));
    }
    if !(params.level > 0.0 && params.level < 1.0) {
        return Err(invalid("level must lie in (0, 1)"));
    }
    let model = match params.model {
        CatModelChoice::Example => std::sync::Arc::new(example_model()),
        CatModelChoice::Host => gen.irt_binary_model()?,
    };
    cat_with_model(&model, params)
}

pub fn cat_with_model(model: &IrtModel, params: &CatParams) -> Result<CatDocument, AnalysisError> {
    let config = params.cat_config(model.len())?;
    let pattern = generate_pattern(model, params.true_theta, params.seed);
    let trajectory = run_cat(model, &pattern, &config).map_err(fit_err)?;
    let ci = trajectory_ci(&trajectory, params.level).map_err(fit_err)?;
    Ok(CatDocument {
        config,
        request: CatRequestEcho {
            model: params.model,
            true_theta: params.true_theta,
            seed: params.seed,
            level: params.level,
        },
        item_names: model.item_names.clone(),
        pattern,
        trajectory,
        ci,
    })
}

/// Summary returned after a dataset upload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub persons: usize,
    pub items: usize,
    pub item_names: Vec<String>,
    pub item_types: Vec<ItemType>,
    pub group_present: bool,
    pub criterion_present: bool,
    pub matching_present: bool,
    pub fingerprint: String,
}

pub fn dataset_summary(ds: &ResponseDataset, fingerprint: &str) -> DatasetSummary {
    DatasetSummary {
        persons: ds.persons(),
        items: ds.items(),
        item_names: ds.item_names().map(str::to_string).collect(),
        item_types: ds.item_types(),
        group_present: ds.group().is_some(),
        criterion_present: ds.criterion().is_some(),
        matching_present: ds.matching().is_some(),
        fingerprint: fingerprint.to_string(),
    }
}
