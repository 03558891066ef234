//! Package descriptors and module manifests.
//!
//! `PACKAGE.meta` is line oriented `key: value`. A package carries modules
//! when it has the exact line `sia-module: true`.
//!
//! `modules.yml` uses a small YAML subset:
//!
//! ```text
//! manifest := { blank | comment | module }
//! module   := NAME ":" NL { field }
//! field    := INDENT KEY ":" SCALAR NL
//!           | INDENT "binding:" NL { INDENT2 KEY ":" SCALAR NL }
//! SCALAR   := plain | "double quoted" | 'single quoted'
//! ```
//!
//! Indentation uses spaces only and must be consistent within a block.
//! Anchors, aliases, tags, flow collections, block scalars, sequences and
//! document markers are rejected.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub const PACKAGE_FILE: &str = "PACKAGE.meta";
pub const MANIFEST_FILE: &str = "modules.yml";
pub const MODULE_FLAG: &str = "sia-module: true";

pub const KNOWN_CATEGORIES: [&str; 7] = [
    "Scores",
    "Validity",
    "Reliability",
    "Item analysis",
    "Regression",
    "IRT models",
    "DIF/Fairness",
];
pub const FALLBACK_CATEGORY: &str = "Modules";

/// Known category, or the fallback for anything else.
pub fn route_category(category: &str) -> &str {
    KNOWN_CATEGORIES
        .iter()
        .find(|&&c| c == category)
        .copied()
        .unwrap_or(FALLBACK_CATEGORY)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageMeta {
    pub fields: BTreeMap<String, String>,
    pub is_module_package: bool,
}

impl PackageMeta {
    pub fn parse(text: &str) -> Self {
        let mut fields = BTreeMap::new();
        let mut flag = false;
        for line in text.lines() {
            if line.trim_end() == MODULE_FLAG {
                flag = true;
            }
            if let Some((k, v)) = line.split_once(':') {
                let k = k.trim();
                if !k.is_empty() && !k.starts_with('#') {
                    fields.insert(k.to_string(), v.trim().to_string());
                }
            }
        }
        Self {
            fields,
            is_module_package: flag,
        }
    }

    /// `package:` field, falling back to `name:`.
    pub fn name(&self) -> Option<&str> {
        self.fields
            .get("package")
            .or_else(|| self.fields.get("name"))
            .map(String::as_str)
            .filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for SyntaxError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Scalar(String),
    Map(Vec<(String, Node)>),
}

impl Node {
    fn get(&self, key: &str) -> Option<&Node> {
        match self {
            Node::Map(entries) => entries.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            Node::Scalar(_) => None,
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> SyntaxError {
    SyntaxError {
        line,
        message: message.into(),
    }
}

fn strip_comment(s: &str) -> &str {
    let mut quote = None;
    for (i, ch) in s.char_indices() {
        match (quote, ch) {
            (None, '"' | '\'') => quote = Some(ch),
            (Some(q), c) if c == q => quote = None,
            (None, '#') if i == 0 || s[..i].ends_with(' ') => return &s[..i],
            _ => {}
        }
    }
    s
}

fn parse_scalar(raw: &str, line: usize) -> Result<String, SyntaxError> {
    let v = raw.trim();
    if let Some(rest) = v.strip_prefix('"') {
        let inner = rest
            .strip_suffix('"')
            .ok_or_else(|| err(line, "unterminated double-quoted scalar"))?;
        let mut out = String::new();
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    other => return Err(err(line, format!("unsupported escape `\\{}`", other.unwrap_or(' ')))),
                }
            } else if c == '"' {
                return Err(err(line, "unescaped quote inside scalar"));
            } else {
                out.push(c);
            }
        }
        return Ok(out);
    }
    if let Some(rest) = v.strip_prefix('\'') {
        let inner = rest
            .strip_suffix('\'')
            .ok_or_else(|| err(line, "unterminated single-quoted scalar"))?;
        if inner.replace("''", "").contains('\'') {
            return Err(err(line, "unescaped quote inside scalar"));
        }
        return Ok(inner.replace("''", "'"));
    }
    match v.chars().next() {
        Some('&') => Err(err(line, "anchors are not supported")),
        Some('*') => Err(err(line, "aliases are not supported")),
        Some('!') => Err(err(line, "tags are not supported")),
        Some('{' | '[') => Err(err(line, "flow collections are not supported")),
        Some('|' | '>') => Err(err(line, "block scalars are not supported")),
        Some('@' | '`') => Err(err(line, "reserved indicator")),
        _ => Ok(v.to_string()),
    }
}

fn parse_key(raw: &str, line: usize) -> Result<String, SyntaxError> {
    let k = parse_scalar(raw, line)?;
    if k.is_empty() {
        return Err(err(line, "empty key"));
    }
    Ok(k)
}

struct Line {
    number: usize,
    indent: usize,
    key: String,
    value: Option<String>,
}

/// Parses the manifest subset into nested maps (at most three levels).
pub fn parse_yaml_subset(text: &str) -> Result<Node, SyntaxError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        if raw.contains('\t') {
            return Err(err(number, "tabs are not allowed"));
        }
        let content = strip_comment(raw).trim_end();
        if content.trim().is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        let body = content.trim_start();
        if indent == 0 && (body.starts_with("---") || body.starts_with("...")) {
            return Err(err(number, "document markers are not supported"));
        }
        if body.starts_with("- ") || body == "-" {
            return Err(err(number, "sequences are not supported"));
        }
        if body.starts_with('?') {
            return Err(err(number, "complex keys are not supported"));
        }
        let (k, v) = split_mapping(body).ok_or_else(|| err(number, "expected `key: value`"))?;
        let key = parse_key(k, number)?;
        let value = if v.trim().is_empty() {
            None
        } else {
            Some(parse_scalar(v, number)?)
        };
        lines.push(Line {
            number,
            indent,
            key,
            value,
        });
    }
    let mut pos = 0;
    let root = parse_block(&lines, &mut pos, 0, 0)?;
    Ok(root)
}

fn split_mapping(body: &str) -> Option<(&str, &str)> {
    let mut quote = None;
    for (i, ch) in body.char_indices() {
        match (quote, ch) {
            (None, '"' | '\'') => quote = Some(ch),
            (Some(q), c) if c == q => quote = None,
            (None, ':') => {
                let rest = &body[i + 1..];
                if rest.is_empty() || rest.starts_with(' ') {
                    return Some((&body[..i], rest));
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_block(lines: &[Line], pos: &mut usize, indent: usize, depth: usize) -> Result<Node, SyntaxError> {
    if depth > 2 {
        return Err(err(lines[*pos].number, "nesting deeper than three levels"));
    }
    let mut entries: Vec<(String, Node)> = Vec::new();
    while *pos < lines.len() {
        let line = &lines[*pos];
        if line.indent < indent {
            break;
        }
        if line.indent > indent {
            return Err(err(line.number, "unexpected indentation"));
        }
        if entries.iter().any(|(k, _)| *k == line.key) {
            return Err(err(line.number, format!("duplicate key `{}`", line.key)));
        }
        *pos += 1;
        let node = match &line.value {
            Some(v) => Node::Scalar(v.clone()),
            None => match lines.get(*pos) {
                Some(next) if next.indent > indent => parse_block(lines, pos, next.indent, depth + 1)?,
                _ => Node::Scalar(String::new()),
            },
        };
        entries.push((line.key.clone(), node));
    }
    Ok(Node::Map(entries))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Binding {
    pub ui: String,
    pub server: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleManifest {
    /// `{package}_{module}`.
    pub id: String,
    pub package: String,
    pub name: String,
    pub title: String,
    pub category: String,
    pub binding: Binding,
    pub source_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Problem {
    pub severity: Severity,
    pub module: Option<String>,
    /// Offending field path, e.g. `binding.server`.
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}")?;
        if let Some(m) = &self.module {
            write!(f, ": module `{m}`")?;
        }
        if let Some(field) = &self.field {
            write!(f, ": field `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Result of reading one manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ManifestReport {
    pub modules: Vec<ModuleManifest>,
    pub problems: Vec<Problem>,
}

impl ManifestReport {
    pub fn has_errors(&self) -> bool {
        self.problems.iter().any(|p| p.severity == Severity::Error)
    }
}

const MODULE_FIELDS: [&str; 3] = ["title", "category", "binding"];

/// Parses and validates a manifest. A syntax error is returned as `Err`;
/// field-level problems invalidate only the affected module.
pub fn read_manifest(text: &str, package: &str, source_path: &str) -> Result<ManifestReport, SyntaxError> {
    let root = parse_yaml_subset(text)?;
    let Node::Map(entries) = root else {
        unreachable!("root is always a map")
    };
    let mut report = ManifestReport::default();
    for (name, node) in &entries {
        let problem = |field: Option<&str>, message: String, severity: Severity| Problem {
            severity,
            module: Some(name.clone()),
            field: field.map(str::to_string),
            message,
        };
        let mut problems = Vec::new();
        if !matches!(node, Node::Map(_)) {
            report.problems.push(problem(None, "module entry must be a map".into(), Severity::Error));
            continue;
        }
        let scalar = |field: &str, problems: &mut Vec<Problem>, node: &Node| -> Option<String> {
            match node.get(field) {
                Some(Node::Scalar(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
                Some(Node::Scalar(_)) | None => {
                    problems.push(problem(Some(field), "required field is missing or empty".into(), Severity::Error));
                    None
                }
                Some(Node::Map(_)) => {
                    problems.push(problem(Some(field), "expected a scalar".into(), Severity::Error));
                    None
                }
            }
        };
        let title = scalar("title", &mut problems, node);
        let category = match node.get("category") {
            Some(Node::Scalar(s)) => Some(s.trim().to_string()),
            Some(Node::Map(_)) => {
                problems.push(problem(Some("category"), "expected a scalar".into(), Severity::Error));
                None
            }
            None => {
                problems.push(problem(Some("category"), "required field is missing".into(), Severity::Error));
                None
            }
        };
        let binding = match node.get("binding") {
            Some(b @ Node::Map(_)) => {
                let ui = scalar_in(b, "ui");
                let server = scalar_in(b, "server");
                for (field, value) in [("binding.ui", &ui), ("binding.server", &server)] {
                    if value.is_none() {
                        problems.push(problem(Some(field), "required field is missing or empty".into(), Severity::Error));
                    }
                }
                if let Node::Map(fields) = b {
                    for (k, _) in fields {
                        if k != "ui" && k != "server" {
                            problems.push(problem(
                                Some(&format!("binding.{k}")),
                                "unknown field ignored".into(),
                                Severity::Warning,
                            ));
                        }
                    }
                }
                ui.zip(server).map(|(ui, server)| Binding { ui, server })
            }
            Some(Node::Scalar(_)) | None => {
                problems.push(problem(Some("binding"), "required map with `ui` and `server`".into(), Severity::Error));
                None
            }
        };
        if let Node::Map(fields) = node {
            for (k, _) in fields {
                if !MODULE_FIELDS.contains(&k.as_str()) {
                    problems.push(problem(Some(k), "unknown field ignored".into(), Severity::Warning));
                }
            }
        }
        if let Some(c) = &category {
            if route_category(c) == FALLBACK_CATEGORY && c != FALLBACK_CATEGORY {
                problems.push(problem(
                    Some("category"),
                    format!("unknown category `{c}` routed to {FALLBACK_CATEGORY}"),
                    Severity::Warning,
                ));
            }
        }
        let failed = problems.iter().any(|p| p.severity == Severity::Error);
        report.problems.extend(problems);
        if failed {
            continue;
        }
        if let (Some(title), Some(category), Some(binding)) = (title, category, binding) {
            report.modules.push(ModuleManifest {
                id: format!("{package}_{name}"),
                package: package.to_string(),
                name: name.clone(),
                title,
                category,
                binding,
                source_path: source_path.to_string(),
            });
        }
    }
    if entries.is_empty() {
        report.problems.push(Problem {
            severity: Severity::Warning,
            module: None,
            field: None,
            message: "manifest declares no modules".into(),
        });
    }
    Ok(report)
}

fn scalar_in(node: &Node, key: &str) -> Option<String> {
    match node.get(key) {
        Some(Node::Scalar(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SM_CAT: &str = "\
# SIA Modules Manifest
cat:
  title: CAT Example
  category: Modules
  binding:
    ui: sm_cat_ui
    server: sm_cat_server
";

    #[test]
    fn reads_paper_shaped_manifest() {
        let report = read_manifest(SM_CAT, "sm", "x/modules.yml").unwrap();
        assert!(report.problems.is_empty(), "{:?}", report.problems);
        let m = &report.modules[0];
        assert_eq!(m.id, "sm_cat");
        assert_eq!(m.title, "CAT Example");
        assert_eq!(m.binding.server, "sm_cat_server");
    }

    #[test]
    fn routing() {
        assert_eq!(route_category("IRT models"), "IRT models");
        assert_eq!(route_category("Frobnication"), "Modules");
        assert_eq!(route_category(""), "Modules");
        assert_eq!(route_category("irt models"), "Modules");
    }

    #[test]
    fn every_required_field_is_checked() {
        let fields = ["title", "category", "binding", "ui", "server"];
        for field in fields {
            let text: String = SM_CAT
                .lines()
                .filter(|l| {
                    let t = l.trim_start();
                    !(t.starts_with(&format!("{field}:")))
                        && !(field == "binding" && (t.starts_with("ui:") || t.starts_with("server:")))
                })
                .map(|l| format!("{l}\n"))
                .collect();
            let report = read_manifest(&text, "sm", "m.yml").unwrap();
            assert!(report.modules.is_empty(), "{field}");
            let expected = match field {
                "ui" => "binding.ui",
                "server" => "binding.server",
                f => f,
            };
            assert!(
                report
                    .problems
                    .iter()
                    .any(|p| p.severity == Severity::Error && p.field.as_deref() == Some(expected)),
                "{field}: {:?}",
                report.problems
            );
        }
    }

    #[test]
    fn unknown_category_is_a_warning() {
        let text = SM_CAT.replace("category: Modules", "category: Frobnication");
        let report = read_manifest(&text, "sm", "m.yml").unwrap();
        assert_eq!(report.modules.len(), 1);
        assert!(!report.has_errors());
        assert!(report.problems[0].message.contains("routed to Modules"));
    }

    #[test]
    fn quoting_and_comments() {
        let text = "m:\n  title: \"A: b # c\"\n  category: 'IRT models' # trailing\n  binding:\n    ui: u\n    server: s\n";
        let report = read_manifest(text, "p", "m.yml").unwrap();
        assert_eq!(report.modules[0].title, "A: b # c");
        assert_eq!(report.modules[0].category, "IRT models");
    }

    #[test]
    fn unsupported_yaml_is_rejected() {
        for bad in [
            "---\nm:\n  title: x\n",
            "m: &a\n  title: x\n",
            "m:\n  title: *a\n",
            "m:\n  title: !!str x\n",
            "m: {title: x}\n",
            "m:\n  title: |\n    x\n",
            "m:\n  - x\n",
            "m:\n\ttitle: x\n",
            "m:\n  title: x\n  title: y\n",
            "m:\n  title: x\n   extra: y\n",
            "m:\n  a:\n    b:\n      c: d\n",
            "just text\n",
        ] {
            assert!(parse_yaml_subset(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn package_meta_flag() {
        let meta = PackageMeta::parse("package: sm\nversion: 1.0\nsia-module: true\n");
        assert!(meta.is_module_package);
        assert_eq!(meta.name(), Some("sm"));
        assert!(!PackageMeta::parse("package: sm\nsia-module: yes\n").is_module_package);
    }
}
