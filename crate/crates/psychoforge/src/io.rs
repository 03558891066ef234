//! CSV ingestion, the metadata sidecar, and the versioned model document.

use std::fs;
use std::io::Read;
use std::path::Path;

use psychoforge_core::dataset::{ItemInfo, ItemType, ResponseDataset};
use psychoforge_core::irt::{IrtModel, ItemParams, Quadrature};
use serde::{Deserialize, Serialize};

pub const GROUP_COLUMN: &str = "__group";
pub const CRITERION_COLUMN: &str = "__criterion";
pub const MATCHING_COLUMN: &str = "__matching";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<u64>, message: String },
    #[error("empty table")]
    EmptyData,
    #[error(transparent)]
    Data(#[from] psychoforge_core::Error),
    #[error("invalid model document: {0}")]
    Model(String),
}

impl IoError {
    fn parse(line: Option<u64>, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Io { .. } => "IoError",
            IoError::Parse { .. } => "ParseError",
            IoError::EmptyData => "EmptyDataError",
            IoError::Data(_) => "DataError",
            IoError::Model(_) => "ModelError",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
        }
    }
}

fn read_file(path: &Path) -> Result<String, IoError> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(text)
}

fn csv_error(e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("row has {len} fields, expected {expected_len}"),
        _ => e.to_string(),
    };
    IoError::parse(line, message)
}

fn parse_group(v: &str, line: u64) -> Result<Option<u8>, IoError> {
    match v.trim() {
        "" | "NA" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(IoError::parse(
            Some(line),
            format!("{GROUP_COLUMN} must be 0 or 1, found `{other}`"),
        )),
    }
}

fn parse_real(v: &str, column: &str, line: u64) -> Result<Option<f64>, IoError> {
    match v.trim() {
        "" | "NA" => Ok(None),
        s => s
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| IoError::parse(Some(line), format!("{column} value `{s}` is not a number"))),
    }
}

/// Parses a response table. Reserved columns become the group, criterion and
/// matching variables.
pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<ResponseDataset, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(false)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let header: Vec<String> = if options.has_header {
        match records.next() {
            Some(r) => r.map_err(csv_error)?.iter().map(|s| s.trim().to_string()).collect(),
            None => return Err(IoError::EmptyData),
        }
    } else {
        Vec::new()
    };
    for r in records {
        rows.push(r.map_err(csv_error)?);
    }
    let width = if options.has_header {
        header.len()
    } else {
        rows.first().map_or(0, |r| r.len())
    };
    let header = if options.has_header {
        header
    } else {
        (1..=width).map(|i| format!("item{i}")).collect()
    };
    let mut seen = std::collections::BTreeSet::new();
    for name in &header {
        if name.is_empty() {
            return Err(IoError::parse(Some(1), "empty column name"));
        }
        if !seen.insert(name.as_str()) {
            return Err(IoError::parse(Some(1), format!("duplicate column `{name}`")));
        }
    }

    let reserved = |name: &str| header.iter().position(|h| h == name);
    let (g_col, c_col, m_col) = (
        reserved(GROUP_COLUMN),
        reserved(CRITERION_COLUMN),
        reserved(MATCHING_COLUMN),
    );
    let item_cols: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != g_col && Some(i) != c_col && Some(i) != m_col)
        .collect();
    if rows.is_empty() || item_cols.is_empty() {
        return Err(IoError::EmptyData);
    }

    let mut responses = Vec::with_capacity(rows.len());
    let (mut group, mut criterion, mut matching) = (Vec::new(), Vec::new(), Vec::new());
    for rec in &rows {
        let line = rec.position().map_or(0, |p| p.line());
        responses.push(
            item_cols
                .iter()
                .map(|&i| {
                    let v = rec[i].trim();
                    (!v.is_empty() && v != "NA").then(|| v.to_string())
                })
                .collect(),
        );
        if let Some(i) = g_col {
            group.push(parse_group(&rec[i], line)?);
        }
        if let Some(i) = c_col {
            criterion.push(parse_real(&rec[i], CRITERION_COLUMN, line)?);
        }
        if let Some(i) = m_col {
            matching.push(parse_real(&rec[i], MATCHING_COLUMN, line)?);
        }
    }
    let names = item_cols.iter().map(|&i| header[i].clone()).collect();
    let mut ds = ResponseDataset::new(names, responses)?;
    if g_col.is_some() {
        ds = ds.with_group(group)?;
    }
    if c_col.is_some() {
        ds = ds.with_criterion(criterion)?;
    }
    if m_col.is_some() {
        ds = ds.with_matching(matching)?;
    }
    Ok(ds)
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<ResponseDataset, IoError> {
    parse_csv(&read_file(path)?, options)
}

/// One row of the metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRow {
    pub item: String,
    #[serde(rename = "type")]
    pub item_type: String,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub max_score: Option<u32>,
    /// Declared option codes separated by `|`.
    #[serde(default)]
    pub options: Option<String>,
}

/// Parses `item,type,key,max_score[,options]`.
pub fn parse_metadata(text: &str) -> Result<Vec<MetadataRow>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_error)?.clone();
    for required in ["item", "type"] {
        if !headers.iter().any(|h| h == required) {
            return Err(IoError::parse(Some(1), format!("metadata is missing column `{required}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<MetadataRow>() {
        let mut row = rec.map_err(csv_error)?;
        row.key = row.key.filter(|k| !k.is_empty());
        row.options = row.options.filter(|o| !o.is_empty());
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_metadata(path: &Path) -> Result<Vec<MetadataRow>, IoError> {
    parse_metadata(&read_file(path)?)
}

/// Overrides inferred item types, keys and maximum scores.
pub fn apply_metadata(dataset: &mut ResponseDataset, rows: &[MetadataRow]) -> Result<(), IoError> {
    for row in rows {
        let idx = dataset.item_index(&row.item)?;
        let item_type: ItemType = row.item_type.parse()?;
        let mut info = ItemInfo::new(row.item.clone(), item_type);
        info.key = row.key.clone();
        info.max_score = row.max_score;
        info.options = row
            .options
            .as_ref()
            .map(|o| o.split('|').map(|s| s.trim().to_string()).collect());
        dataset.set_item_info(idx, info)?;
    }
    dataset.validate()?;
    Ok(())
}

pub const MODEL_FORMAT: &str = "psychoforge-irt-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub points: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelItem {
    pub name: String,
    pub column: usize,
    #[serde(flatten)]
    pub params: ItemParams,
}

/// Interchange form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub items: Vec<ModelItem>,
    pub quadrature: QuadratureSpec,
    pub loglik: Option<f64>,
    pub em_cycles: usize,
    pub converged: bool,
}

impl ModelDocument {
    pub fn from_model(model: &IrtModel) -> Self {
        let q = &model.quadrature;
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            items: model
                .item_names
                .iter()
                .zip(&model.columns)
                .zip(&model.items)
                .map(|((name, &column), params)| ModelItem {
                    name: name.clone(),
                    column,
                    params: params.clone(),
                })
                .collect(),
            quadrature: QuadratureSpec {
                points: q.len(),
                bound: q.nodes.last().copied().unwrap_or(Quadrature::DEFAULT_BOUND),
            },
            loglik: model.loglik,
            em_cycles: model.em_cycles,
            converged: model.converged,
        }
    }

    pub fn into_model(self) -> Result<IrtModel, IoError> {
        if self.format != MODEL_FORMAT {
            return Err(IoError::Model(format!("unknown format `{}`", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(IoError::Model(format!("unsupported version {}", self.version)));
        }
        if self.quadrature.points < 2 || !(self.quadrature.bound > 0.0) {
            return Err(IoError::Model("invalid quadrature".into()));
        }
        let names = self.items.iter().map(|i| i.name.clone()).collect();
        let columns = self.items.iter().map(|i| i.column).collect();
        let params = self.items.into_iter().map(|i| i.params).collect();
        let mut model = IrtModel::from_items(names, params)?;
        model.columns = columns;
        model.quadrature = Quadrature::standard_normal(self.quadrature.points, self.quadrature.bound);
        model.loglik = self.loglik;
        model.em_cycles = self.em_cycles;
        model.converged = self.converged;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Model(e.to_string()))
    }
}
