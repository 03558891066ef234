//! Headless analysis runs: per-section JSON documents plus a Markdown
//! report with tables and curve data embedded as CSV blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use psychoforge_core::dataset::ItemType;
use psychoforge_core::dif::DifType;
use serde::Serialize;

use crate::analysis::{
    self, AnalysisError, CatDocument, CatParams, ClassicalDocument, ClassicalParams, DatasetSummary, DifDocument,
    DifParams, IrtDocument, IrtParams, RegressionDocument, RegressionParams,
};
use crate::host::HostContext;
use crate::io::{apply_metadata, load_csv, load_metadata, CsvOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Section {
    Classical,
    Regression,
    Irt,
    Dif,
    Cat,
}

impl Section {
    pub const ALL: [Section; 5] = [
        Section::Classical,
        Section::Regression,
        Section::Irt,
        Section::Dif,
        Section::Cat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Classical => "classical",
            Section::Regression => "regression",
            Section::Irt => "irt",
            Section::Dif => "dif",
            Section::Cat => "cat",
        }
    }
}

impl std::str::FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Section::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown section `{s}`; expected one of classical, regression, irt, dif, cat"))
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub data: PathBuf,
    pub metadata: Option<PathBuf>,
    /// Empty runs every section whose inputs are present.
    pub sections: Vec<Section>,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Fit(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) | CliError::Output(_) => 2,
            CliError::Fit(_) => 3,
        }
    }
}

fn analysis_error(section: Section, e: AnalysisError) -> CliError {
    let msg = format!("{}: {e}", section.as_str());
    match e {
        AnalysisError::Prerequisite(_) | AnalysisError::InvalidParameter(_) | AnalysisError::NotFound(_) => {
            CliError::Data(msg)
        }
        AnalysisError::Fit(_) => CliError::Fit(msg),
    }
}

fn f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "NA".into()
    }
}

fn of(x: Option<f64>) -> String {
    x.map_or("NA".into(), f)
}

fn write_json(dir: &Path, name: &str, doc: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).expect("documents serialize");
    text.push('\n');
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn table(md: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(md, "| {} |", header.join(" | "));
    let _ = writeln!(md, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(md, "| {} |", r.join(" | "));
    }
    md.push('\n');
}

fn csv_block(md: &mut String, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) {
    md.push_str("```csv\n");
    let _ = writeln!(md, "{}", header.join(","));
    for r in rows {
        let _ = writeln!(md, "{}", r.join(","));
    }
    md.push_str("```\n\n");
}

fn render_summary(md: &mut String, s: &DatasetSummary, source: &str) {
    let _ = writeln!(md, "# Item analysis report\n");
    let _ = writeln!(md, "Data: `{source}`  ");
    let _ = writeln!(md, "Persons: {}, items: {}  ", s.persons, s.items);
    let _ = writeln!(md, "Fingerprint: `{}`\n", s.fingerprint);
    table(
        md,
        &["item", "type"],
        s.item_names.iter().zip(&s.item_types).map(|(n, t)| vec![n.clone(), t.as_str().to_string()]),
    );
}

fn render_classical(md: &mut String, d: &ClassicalDocument) {
    let _ = writeln!(md, "## Classical item analysis\n");
    let _ = writeln!(
        md,
        "Cronbach's alpha: {}. Total score mean {}, SD {}.\n",
        of(d.alpha),
        f(d.totals.mean),
        f(d.totals.sd)
    );
    table(
        md,
        &["item", "difficulty", "rit", "rir", "uli", "n"],
        d.items.iter().map(|s| {
            vec![s.item.clone(), of(s.difficulty), of(s.rit), of(s.rir), of(s.uli), s.n_valid.to_string()]
        }),
    );
    if let Some(cv) = &d.criterion_validity {
        let _ = writeln!(md, "Criterion validity: r = {}, p = {}, n = {}.\n", of(cv.r), of(cv.p_value), cv.n);
    }
    for t in d.distractors.iter().filter(|t| t.key.is_some()) {
        let _ = writeln!(md, "### Distractors: {} (key {})\n", t.item, t.key.as_deref().unwrap_or("NA"));
        let header: Vec<String> = std::iter::once("group".to_string()).chain(t.options.iter().cloned()).collect();
        csv_block(
            md,
            &header,
            t.proportions
                .iter()
                .enumerate()
                .map(|(g, row)| std::iter::once((g + 1).to_string()).chain(row.iter().map(|&p| f(p))).collect()),
        );
    }
}

fn render_regression(md: &mut String, docs: &[RegressionDocument]) {
    let _ = writeln!(md, "## Regression ICCs\n");
    table(
        md,
        &["item", "n", "a", "b", "c"],
        docs.iter()
            .map(|d| vec![d.item.clone(), d.n.to_string(), f(d.irt.a), f(d.irt.b), f(d.irt.c)]),
    );
    for d in docs {
        let _ = writeln!(md, "### Curve: {}\n", d.item);
        csv_block(
            md,
            &["theta".into(), "probability".into()],
            d.curve
                .theta
                .iter()
                .zip(&d.curve.probability)
                .map(|(t, p)| vec![f(*t), f(*p)]),
        );
    }
}

fn render_irt(md: &mut String, d: &IrtDocument) {
    let _ = writeln!(md, "## IRT model\n");
    let _ = writeln!(
        md,
        "Log-likelihood {}, {} EM cycles, converged: {}.\n",
        of(d.model.loglik),
        d.model.em_cycles,
        d.model.converged
    );
    table(
        md,
        &["item", "parameters"],
        d.model.items.iter().map(|it| {
            let params = serde_json::to_value(&it.params).expect("params serialize");
            vec![it.name.clone(), params.to_string().replace('|', "\\|")]
        }),
    );
    for x in &d.excluded {
        let _ = writeln!(md, "Excluded `{}`: {}.  ", x.name, x.reason);
    }
    for w in &d.warnings {
        let _ = writeln!(md, "Warning: {w}.  ");
    }
    let _ = writeln!(md, "### Test information\n");
    csv_block(
        md,
        &["theta".into(), "information".into(), "se".into()],
        (0..d.information.theta.len()).map(|i| {
            vec![
                f(d.information.theta[i]),
                f(d.information.test_information[i]),
                f(d.information.standard_error[i]),
            ]
        }),
    );
}

fn render_dif(md: &mut String, d: &DifDocument) {
    let _ = writeln!(md, "## Differential item functioning\n");
    let s = &d.scan.summary;
    let _ = writeln!(
        md,
        "{} none, {} uniform, {} nonuniform, {} not tested.\n",
        s.none, s.uniform, s.nonuniform, s.errors
    );
    table(
        md,
        &["item", "lrt", "p", "type", "note"],
        d.scan.entries.iter().map(|e| {
            let r = e.result.as_ref();
            vec![
                e.item.clone(),
                of(r.map(|r| r.lrt_stat)),
                of(e.p_flag),
                match e.dif_type {
                    DifType::None => "none",
                    DifType::Uniform => "uniform",
                    DifType::Nonuniform => "nonuniform",
                }
                .to_string(),
                e.error.clone().unwrap_or_default(),
            ]
        }),
    );
}

fn render_cat(md: &mut String, d: &CatDocument) {
    let t = &d.trajectory;
    let _ = writeln!(md, "## CAT simulation\n");
    let _ = writeln!(
        md,
        "True theta {}, seed {}. Final theta {}, SE {}, {} item(s), termination {:?}.\n",
        f(d.request.true_theta),
        d.request.seed,
        f(t.final_theta),
        of(t.final_se),
        t.steps.len(),
        t.termination
    );
    csv_block(
        md,
        &["step", "item", "response", "theta", "se", "lower", "upper"].map(String::from),
        t.steps.iter().zip(&d.ci).enumerate().map(|(i, (s, ci))| {
            vec![
                (i + 1).to_string(),
                d.item_names[s.item].clone(),
                s.response.to_string(),
                f(s.theta),
                of(s.se),
                of(ci.map(|c| c.0)),
                of(ci.map(|c| c.1)),
            ]
        }),
    );
}

/// Runs the requested sections and writes `<section>.json` files and
/// `report.md` into `out`.
pub fn analyze(opts: &AnalyzeOptions) -> Result<Vec<PathBuf>, CliError> {
    let mut ds = load_csv(&opts.data, &CsvOptions::default()).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(m) = &opts.metadata {
        let rows = load_metadata(m).map_err(|e| CliError::Data(e.to_string()))?;
        apply_metadata(&mut ds, &rows).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let host = HostContext::new();
    host.publish_dataset(ds).map_err(|e| CliError::Data(e.to_string()))?;
    let gen = host.snapshot();
    let ds = gen.dataset().expect("published");
    let explicit = !opts.sections.is_empty();
    let mut sections = if explicit {
        opts.sections.clone()
    } else {
        Section::ALL.to_vec()
    };
    sections.sort();
    sections.dedup();
    fs::create_dir_all(&opts.out).map_err(|e| CliError::Output(format!("{}: {e}", opts.out.display())))?;

    let summary = analysis::dataset_summary(&ds, gen.fingerprint());
    let mut md = String::new();
    let source = opts.data.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    render_summary(&mut md, &summary, &source);
    let mut written = Vec::new();
    write_json(&opts.out, "dataset", &summary)?;
    written.push(opts.out.join("dataset.json"));

    for section in sections {
        let result = match section {
            Section::Classical => analysis::classical(&gen, &ClassicalParams::default()).map(|d| {
                render_classical(&mut md, &d);
                serde_json::to_value(d)
            }),
            Section::Regression => {
                let scored = gen.scored().map_err(|e| analysis_error(section, e.into()))?;
                let types = ds.item_types();
                ds.item_names()
                    .enumerate()
                    .filter(|(i, _)| scored.max_scores()[*i] == 1 && types[*i] != ItemType::Ordinal)
                    .map(|(_, name)| analysis::regression(&gen, name, &RegressionParams::default()))
                    .collect::<Result<Vec<_>, _>>()
                    .map(|docs| {
                        render_regression(&mut md, &docs);
                        serde_json::to_value(docs)
                    })
            }
            Section::Irt => analysis::fit_irt(&gen, &IrtParams::default()).map(|(d, _)| {
                render_irt(&mut md, &d);
                serde_json::to_value(d)
            }),
            Section::Dif => analysis::dif(&gen, &DifParams::default()).map(|d| {
                render_dif(&mut md, &d);
                serde_json::to_value(d)
            }),
            Section::Cat => {
                let params = CatParams {
                    seed: opts.seed,
                    ..CatParams::default()
                };
                analysis::cat(&gen, &params).map(|d| {
                    render_cat(&mut md, &d);
                    serde_json::to_value(d)
                })
            }
        };
        match result {
            Ok(doc) => {
                write_json(&opts.out, section.as_str(), &doc.expect("documents serialize"))?;
                written.push(opts.out.join(format!("{}.json", section.as_str())));
            }
            Err(AnalysisError::Prerequisite(m)) if !explicit => {
                let _ = writeln!(md, "## {}\n\nSkipped: {m}.\n", section.as_str());
            }
            Err(e) => return Err(analysis_error(section, e)),
        }
    }
    let path = opts.out.join("report.md");
    fs::write(&path, md).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(written)
}
