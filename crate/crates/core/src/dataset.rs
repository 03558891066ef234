//! Response data: raw persons × items tables, scoring, and total scores.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Largest integer code for which a column is inferred as ordinal.
pub const MAX_INFERRED_ORDINAL: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemType {
    Binary,
    Ordinal,
    Nominal,
}

impl ItemType {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemType::Binary => "binary",
            ItemType::Ordinal => "ordinal",
            ItemType::Nominal => "nominal",
        }
    }
}

impl core::str::FromStr for ItemType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "binary" => Ok(ItemType::Binary),
            "ordinal" => Ok(ItemType::Ordinal),
            "nominal" => Ok(ItemType::Nominal),
            _ => Err(Error::InvalidParameter {
                name: "type",
                reason: "expected binary, ordinal or nominal",
            }),
        }
    }
}

/// Per-item description: name, type and scoring information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub name: String,
    pub item_type: ItemType,
    /// Correct option code (nominal items).
    pub key: Option<String>,
    /// Maximum score K (ordinal items).
    pub max_score: Option<u32>,
    /// Declared option codes (nominal items); observed codes are used when absent.
    pub options: Option<Vec<String>>,
}

impl ItemInfo {
    pub fn new(name: impl Into<String>, item_type: ItemType) -> Self {
        Self {
            name: name.into(),
            item_type,
            key: None,
            max_score: None,
            options: None,
        }
    }
}

/// Raw persons × items response table with optional person-level variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDataset {
    items: Vec<ItemInfo>,
    responses: Vec<Vec<Option<String>>>,
    group: Option<Vec<Option<u8>>>,
    criterion: Option<Vec<Option<f64>>>,
    matching: Option<Vec<Option<f64>>>,
}

impl ResponseDataset {
    /// Builds a dataset from raw codes, inferring each item's type.
    ///
    /// Columns whose codes are all `0`/`1` are binary, integer codes within
    /// `0..=9` are ordinal, anything else is nominal.
    pub fn new(item_names: Vec<String>, responses: Vec<Vec<Option<String>>>) -> Result<Self> {
        if responses.is_empty() || item_names.is_empty() {
            return Err(Error::EmptyData);
        }
        for row in &responses {
            if row.len() != item_names.len() {
                return Err(Error::DimensionMismatch {
                    what: "response row",
                    expected: item_names.len(),
                    found: row.len(),
                });
            }
        }
        let responses: Vec<Vec<Option<String>>> = responses
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|c| c.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()))
                    .collect()
            })
            .collect();
        let items = item_names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let column = responses.iter().filter_map(|r| r[i].as_deref());
                ItemInfo::new(name, infer_type(column))
            })
            .collect();
        Ok(Self {
            items,
            responses,
            group: None,
            criterion: None,
            matching: None,
        })
    }

    pub fn persons(&self) -> usize {
        self.responses.len()
    }

    pub fn items(&self) -> usize {
        self.items.len()
    }

    pub fn item_info(&self) -> &[ItemInfo] {
        &self.items
    }

    pub fn item_names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.name.as_str())
    }

    pub fn item_types(&self) -> Vec<ItemType> {
        self.items.iter().map(|i| i.item_type).collect()
    }

    pub fn item_index(&self, name: &str) -> Result<usize> {
        self.items
            .iter()
            .position(|i| i.name == name)
            .ok_or_else(|| Error::UnknownItem(name.to_string()))
    }

    pub fn response(&self, person: usize, item: usize) -> Option<&str> {
        self.responses[person][item].as_deref()
    }

    pub fn rows(&self) -> &[Vec<Option<String>>] {
        &self.responses
    }

    pub fn group(&self) -> Option<&[Option<u8>]> {
        self.group.as_deref()
    }

    pub fn criterion(&self) -> Option<&[Option<f64>]> {
        self.criterion.as_deref()
    }

    pub fn matching(&self) -> Option<&[Option<f64>]> {
        self.matching.as_deref()
    }

    /// Replaces an item's metadata (type, key, max score, options).
    pub fn set_item_info(&mut self, item: usize, info: ItemInfo) -> Result<()> {
        let old = core::mem::replace(&mut self.items[item], info);
        if let Err(e) = self.validate_item(item) {
            self.items[item] = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn with_group(mut self, group: Vec<Option<u8>>) -> Result<Self> {
        self.check_person_len("group", group.len())?;
        if group.iter().flatten().any(|&g| g > 1) {
            return Err(Error::InvalidParameter {
                name: "group",
                reason: "group indicator must be 0 or 1",
            });
        }
        self.group = Some(group);
        Ok(self)
    }

    pub fn with_criterion(mut self, criterion: Vec<Option<f64>>) -> Result<Self> {
        self.check_person_len("criterion", criterion.len())?;
        self.criterion = Some(criterion);
        Ok(self)
    }

    pub fn with_matching(mut self, matching: Vec<Option<f64>>) -> Result<Self> {
        self.check_person_len("matching", matching.len())?;
        self.matching = Some(matching);
        Ok(self)
    }

    fn check_person_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.persons() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.persons(),
                found: len,
            });
        }
        Ok(())
    }

    /// Checks every dataset invariant.
    pub fn validate(&self) -> Result<()> {
        if self.persons() == 0 || self.items() == 0 {
            return Err(Error::EmptyData);
        }
        for row in &self.responses {
            if row.len() != self.items() {
                return Err(Error::DimensionMismatch {
                    what: "response row",
                    expected: self.items(),
                    found: row.len(),
                });
            }
        }
        for i in 0..self.items() {
            self.validate_item(i)?;
        }
        if let Some(g) = &self.group {
            self.check_person_len("group", g.len())?;
        }
        if let Some(c) = &self.criterion {
            self.check_person_len("criterion", c.len())?;
        }
        if let Some(m) = &self.matching {
            self.check_person_len("matching", m.len())?;
        }
        Ok(())
    }

    fn validate_item(&self, item: usize) -> Result<()> {
        let info = &self.items[item];
        if info.item_type == ItemType::Nominal {
            if let Some(key) = &info.key {
                let observed = self.responses.iter().any(|r| r[item].as_deref() == Some(key));
                let declared = info
                    .options
                    .as_ref()
                    .is_some_and(|o| o.iter().any(|c| c == key));
                if !observed && !declared {
                    return Err(Error::InvalidKey {
                        item: info.name.clone(),
                        key: key.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Option codes of a nominal item: declared options, or the sorted set of
    /// observed codes.
    pub fn options(&self, item: usize) -> Vec<String> {
        if let Some(opts) = &self.items[item].options {
            return opts.clone();
        }
        let set: BTreeSet<&str> = self
            .responses
            .iter()
            .filter_map(|r| r[item].as_deref())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    /// Maximum score of an ordinal or binary item.
    pub fn max_score(&self, item: usize) -> Result<u32> {
        let info = &self.items[item];
        match info.item_type {
            ItemType::Binary => Ok(1),
            ItemType::Nominal => Ok(1),
            ItemType::Ordinal => match info.max_score {
                Some(k) => Ok(k),
                None => {
                    let mut k = 0;
                    for (p, row) in self.responses.iter().enumerate() {
                        if let Some(code) = row[item].as_deref() {
                            k = k.max(parse_score(code, &info.name, p)?);
                        }
                    }
                    Ok(k)
                }
            },
        }
    }

    /// Scores every response: nominal items against their key, binary and
    /// ordinal items copied through.
    pub fn score(&self) -> Result<ScoredMatrix> {
        self.encode(Encoding::Score)
    }

    /// Encodes responses as category indices for polytomous IRT models.
    ///
    /// Binary and ordinal items are encoded as their scores. Nominal items map
    /// the key to category 0 and the remaining options, in option order, to
    /// `1..=K`; codes outside declared options become missing.
    pub fn encode_categories(&self) -> Result<ScoredMatrix> {
        self.encode(Encoding::Categories)
    }

    fn encode(&self, encoding: Encoding) -> Result<ScoredMatrix> {
        let persons = self.persons();
        let items = self.items();
        let mut scores = alloc::vec![None; persons * items];
        let mut max_scores = Vec::with_capacity(items);
        let mut warnings = Vec::new();
        for (i, info) in self.items.iter().enumerate() {
            match info.item_type {
                ItemType::Binary | ItemType::Ordinal => {
                    let k = self.max_score(i)?;
                    for p in 0..persons {
                        if let Some(code) = self.response(p, i) {
                            let v = parse_score(code, &info.name, p)?;
                            if v > k {
                                return Err(Error::InvalidCode {
                                    item: info.name.clone(),
                                    person: p,
                                    code: code.to_string(),
                                });
                            }
                            scores[p * items + i] = Some(v);
                        }
                    }
                    max_scores.push(k);
                }
                ItemType::Nominal => {
                    let key = info.key.as_ref().ok_or_else(|| Error::MissingKey {
                        item: info.name.clone(),
                    })?;
                    let declared = info.options.as_ref();
                    let mut categories: Vec<String> = Vec::new();
                    if encoding == Encoding::Categories {
                        categories.push(key.clone());
                        categories.extend(self.options(i).into_iter().filter(|c| c != key));
                    }
                    for p in 0..persons {
                        let Some(code) = self.response(p, i) else {
                            continue;
                        };
                        let unknown = declared.is_some_and(|d| !d.iter().any(|c| c == code));
                        if unknown {
                            warnings.push(ScoreWarning {
                                item: i,
                                person: p,
                                code: code.to_string(),
                            });
                        }
                        scores[p * items + i] = match encoding {
                            Encoding::Score => Some(u32::from(code == key)),
                            Encoding::Categories if unknown => None,
                            Encoding::Categories => {
                                categories.iter().position(|c| c == code).map(|k| k as u32)
                            }
                        };
                    }
                    max_scores.push(match encoding {
                        Encoding::Score => 1,
                        Encoding::Categories => categories.len().saturating_sub(1) as u32,
                    });
                }
            }
        }
        Ok(ScoredMatrix {
            persons,
            items,
            item_names: self.items.iter().map(|i| i.name.clone()).collect(),
            scores,
            max_scores,
            warnings,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Score,
    Categories,
}

fn infer_type<'a>(codes: impl Iterator<Item = &'a str>) -> ItemType {
    let mut max = 0u32;
    for code in codes {
        match code.parse::<u32>() {
            Ok(v) if v <= MAX_INFERRED_ORDINAL => max = max.max(v),
            _ => return ItemType::Nominal,
        }
    }
    if max <= 1 {
        ItemType::Binary
    } else {
        ItemType::Ordinal
    }
}

fn parse_score(code: &str, item: &str, person: usize) -> Result<u32> {
    code.parse::<u32>().map_err(|_| Error::InvalidCode {
        item: item.to_string(),
        person,
        code: code.to_string(),
    })
}

/// A nominal response whose code is outside the item's declared options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreWarning {
    pub item: usize,
    pub person: usize,
    pub code: String,
}

/// Persons × items matrix of integer scores `0..=K_i` with missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatrix {
    persons: usize,
    items: usize,
    item_names: Vec<String>,
    scores: Vec<Option<u32>>,
    max_scores: Vec<u32>,
    warnings: Vec<ScoreWarning>,
}

impl ScoredMatrix {
    /// Builds a matrix from rows of scores, checking `0 <= score <= K_i`.
    pub fn from_rows(
        item_names: Vec<String>,
        rows: &[Vec<Option<u32>>],
        max_scores: Vec<u32>,
    ) -> Result<Self> {
        let items = item_names.len();
        if rows.is_empty() || items == 0 {
            return Err(Error::EmptyData);
        }
        if max_scores.len() != items {
            return Err(Error::DimensionMismatch {
                what: "max_scores",
                expected: items,
                found: max_scores.len(),
            });
        }
        let mut scores = Vec::with_capacity(rows.len() * items);
        for (p, row) in rows.iter().enumerate() {
            if row.len() != items {
                return Err(Error::DimensionMismatch {
                    what: "score row",
                    expected: items,
                    found: row.len(),
                });
            }
            for (i, &v) in row.iter().enumerate() {
                if let Some(v) = v {
                    if v > max_scores[i] {
                        return Err(Error::InvalidCode {
                            item: item_names[i].clone(),
                            person: p,
                            code: v.to_string(),
                        });
                    }
                }
                scores.push(v);
            }
        }
        Ok(Self {
            persons: rows.len(),
            items,
            item_names,
            scores,
            max_scores,
            warnings: Vec::new(),
        })
    }

    /// Binary matrix with generated item names `item1..itemN`.
    pub fn binary(rows: &[Vec<Option<u32>>]) -> Result<Self> {
        let items = rows.first().map_or(0, Vec::len);
        let names = (1..=items).map(|i| alloc::format!("item{i}")).collect();
        Self::from_rows(names, rows, alloc::vec![1; items])
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn max_scores(&self) -> &[u32] {
        &self.max_scores
    }

    pub fn warnings(&self) -> &[ScoreWarning] {
        &self.warnings
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> Option<u32> {
        self.scores[person * self.items + item]
    }

    pub fn row(&self, person: usize) -> &[Option<u32>] {
        &self.scores[person * self.items..(person + 1) * self.items]
    }

    pub fn column(&self, item: usize) -> impl Iterator<Item = Option<u32>> + '_ {
        (0..self.persons).map(move |p| self.get(p, item))
    }

    /// Restricts the matrix to the given item columns.
    pub fn select_items(&self, columns: &[usize]) -> ScoredMatrix {
        let mut scores = Vec::with_capacity(self.persons * columns.len());
        for p in 0..self.persons {
            scores.extend(columns.iter().map(|&i| self.get(p, i)));
        }
        ScoredMatrix {
            persons: self.persons,
            items: columns.len(),
            item_names: columns.iter().map(|&i| self.item_names[i].clone()).collect(),
            scores,
            max_scores: columns.iter().map(|&i| self.max_scores[i]).collect(),
            warnings: Vec::new(),
        }
    }

    /// Row sums over non-missing cells.
    pub fn total_scores(&self) -> TotalScore {
        let values = (0..self.persons)
            .map(|p| {
                let row = self.row(p);
                if row.iter().all(Option::is_none) {
                    None
                } else {
                    Some(row.iter().flatten().map(|&v| f64::from(v)).sum())
                }
            })
            .collect();
        TotalScore::from_values(values)
    }
}

/// Per-person totals and their z-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalScore {
    pub values: Vec<Option<f64>>,
    pub standardized: Vec<Option<f64>>,
    pub mean: f64,
    /// Sample standard deviation of the non-missing values.
    pub sd: f64,
    /// Set when fewer than two values are present or all are equal; the
    /// standardized scores are then all zero.
    pub degenerate: bool,
}

impl TotalScore {
    pub fn from_values(values: Vec<Option<f64>>) -> Self {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            math::mean(&present)
        };
        let sd = if present.len() > 1 {
            math::sqrt(math::variance(&present))
        } else {
            0.0
        };
        let degenerate = !(sd > 0.0);
        let standardized = values
            .iter()
            .map(|v| v.map(|x| if degenerate { 0.0 } else { (x - mean) / sd }))
            .collect();
        Self {
            values,
            standardized,
            mean,
            sd,
            degenerate,
        }
    }

    pub fn persons(&self) -> usize {
        self.values.len()
    }

    /// Recovers a raw value from its z-score.
    pub fn unstandardize(&self, z: f64) -> f64 {
        self.mean + self.sd * z
    }
}

/// 0/1 indicator of membership in `positive_levels`.
pub fn binarize_factor<S: AsRef<str>>(
    values: &[Option<String>],
    positive_levels: &[S],
) -> Result<Vec<Option<u8>>> {
    if positive_levels.is_empty() {
        return Err(Error::EmptySelection);
    }
    let observed: BTreeSet<&str> = values.iter().filter_map(|v| v.as_deref()).collect();
    for level in positive_levels {
        if !observed.contains(level.as_ref()) {
            return Err(Error::UnknownLevel(level.as_ref().to_string()));
        }
    }
    Ok(values
        .iter()
        .map(|v| {
            v.as_deref()
                .map(|s| u8::from(positive_levels.iter().any(|l| l.as_ref() == s)))
        })
        .collect())
}
