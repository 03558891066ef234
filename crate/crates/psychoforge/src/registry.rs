//! Module discovery, routing and invocation.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::host::HostContext;
use crate::manifest::{
    read_manifest, route_category, ModuleManifest, PackageMeta, Severity, FALLBACK_CATEGORY, KNOWN_CATEGORIES,
    MANIFEST_FILE, PACKAGE_FILE,
};
use crate::modules;
use crate::output::ModuleOutput;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandlerError {
    /// The request does not fit the module's parameters.
    BadRequest(String),
    /// The module ran but could not produce a result.
    Failed(String),
}

pub type ServerHandler = fn(&str, &HostContext, &Value) -> Result<ModuleOutput, HandlerError>;
pub type UiHandler = fn(&str) -> Value;

/// Handlers addressable by binding name.
#[derive(Clone, Default)]
pub struct HandlerTable {
    ui: BTreeMap<String, UiHandler>,
    server: BTreeMap<String, ServerHandler>,
}

impl HandlerTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Table holding the handlers of the bundled modules.
    pub fn builtin() -> Self {
        let mut t = Self::default();
        modules::register(&mut t);
        t
    }

    pub fn register_ui(&mut self, name: &str, handler: UiHandler) {
        self.ui.insert(name.to_string(), handler);
    }

    pub fn register_server(&mut self, name: &str, handler: ServerHandler) {
        self.server.insert(name.to_string(), handler);
    }

    pub fn ui(&self, name: &str) -> Option<UiHandler> {
        self.ui.get(name).copied()
    }

    pub fn server(&self, name: &str) -> Option<ServerHandler> {
        self.server.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub source: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleEntry {
    pub manifest: ModuleManifest,
    pub routed_category: String,
    pub available: bool,
    /// Why the module is unavailable.
    pub diagnostic: Option<String>,
    /// Source key of the package this entry came from.
    #[serde(skip)]
    package_key: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum InvokeError {
    #[error("unknown module `{0}`")]
    NotFound(String),
    #[error("module `{id}` is unavailable: {diagnostic}")]
    Unavailable { id: String, diagnostic: String },
    #[error("invalid request: {0}")]
    BadRequest(String),
}

/// A package found during a scan.
struct PackageSource {
    key: String,
    dir_name: String,
    meta: String,
    manifest: Result<String, String>,
}

struct Bundled {
    dir: &'static str,
    meta: &'static str,
    manifest: &'static str,
}

const BUNDLED: [Bundled; 2] = [
    Bundled {
        dir: "cat",
        meta: include_str!("../modules/cat/PACKAGE.meta"),
        manifest: include_str!("../modules/cat/modules.yml"),
    },
    Bundled {
        dir: "dif",
        meta: include_str!("../modules/dif/PACKAGE.meta"),
        manifest: include_str!("../modules/dif/modules.yml"),
    },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    roots: Vec<PathBuf>,
    modules: BTreeMap<String, ModuleEntry>,
    diagnostics: Vec<Diagnostic>,
}

fn read_package(dir: &Path) -> Option<PackageSource> {
    let meta = fs::read_to_string(dir.join(PACKAGE_FILE)).ok()?;
    let manifest_path = dir.join(MANIFEST_FILE);
    Some(PackageSource {
        key: manifest_path.display().to_string(),
        dir_name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        meta,
        manifest: fs::read_to_string(&manifest_path).map_err(|e| e.to_string()),
    })
}

fn scan_root(root: &Path, diagnostics: &mut Vec<Diagnostic>) -> Vec<PackageSource> {
    if !root.is_dir() {
        log::warn!("module root {} does not exist; skipped", root.display());
        diagnostics.push(Diagnostic {
            severity: Severity::Warning,
            source: root.display().to_string(),
            message: "module root does not exist; skipped".into(),
        });
        return Vec::new();
    }
    if let Some(p) = read_package(root) {
        return vec![p];
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    dirs.sort();
    dirs.iter().filter_map(|d| read_package(d)).collect()
}

impl Registry {
    /// Scans the bundled packages and then `roots` in order.
    pub fn discover(roots: &[PathBuf], table: &HandlerTable) -> Self {
        Self::scan(roots, table, None)
    }

    /// Runs discovery again over the same roots. A package whose manifest
    /// became unreadable keeps the modules it had before.
    pub fn rediscover(&self, table: &HandlerTable) -> Self {
        Self::scan(&self.roots, table, Some(self))
    }

    fn scan(roots: &[PathBuf], table: &HandlerTable, previous: Option<&Registry>) -> Self {
        let mut diagnostics = Vec::new();
        let mut sources: Vec<PackageSource> = BUNDLED
            .iter()
            .map(|b| PackageSource {
                key: format!("bundled:{}/{MANIFEST_FILE}", b.dir),
                dir_name: b.dir.to_string(),
                meta: b.meta.to_string(),
                manifest: Ok(b.manifest.to_string()),
            })
            .collect();
        for root in roots {
            sources.extend(scan_root(root, &mut diagnostics));
        }

        let mut modules: BTreeMap<String, ModuleEntry> = BTreeMap::new();
        for src in sources {
            let meta = PackageMeta::parse(&src.meta);
            if !meta.is_module_package {
                continue;
            }
            let package = meta.name().unwrap_or(&src.dir_name).to_string();
            let report = src
                .manifest
                .clone()
                .and_then(|text| read_manifest(&text, &package, &src.key).map_err(|e| e.to_string()));
            let report = match report {
                Ok(r) => r,
                Err(message) => {
                    let kept: Vec<ModuleEntry> = previous
                        .map(|p| p.modules.values().filter(|m| m.package_key == src.key).cloned().collect())
                        .unwrap_or_default();
                    let suffix = if kept.is_empty() {
                        String::new()
                    } else {
                        format!("; keeping {} previously registered module(s)", kept.len())
                    };
                    diagnostics.push(Diagnostic {
                        severity: Severity::Error,
                        source: src.key.clone(),
                        message: format!("{message}{suffix}"),
                    });
                    for entry in kept {
                        modules.entry(entry.manifest.id.clone()).or_insert(entry);
                    }
                    continue;
                }
            };
            for problem in &report.problems {
                diagnostics.push(Diagnostic {
                    severity: problem.severity,
                    source: src.key.clone(),
                    message: problem.to_string(),
                });
            }
            for manifest in report.modules {
                if let Some(existing) = modules.get(&manifest.id) {
                    diagnostics.push(Diagnostic {
                        severity: Severity::Error,
                        source: src.key.clone(),
                        message: format!(
                            "duplicate module id `{}` (already registered from {}); rejected",
                            manifest.id, existing.manifest.source_path
                        ),
                    });
                    continue;
                }
                let missing: Vec<String> = [
                    (table.ui(&manifest.binding.ui).is_none(), &manifest.binding.ui, "ui"),
                    (table.server(&manifest.binding.server).is_none(), &manifest.binding.server, "server"),
                ]
                .into_iter()
                .filter(|(missing, _, _)| *missing)
                .map(|(_, name, role)| format!("{role} handler `{name}` is not registered"))
                .collect();
                let diagnostic = (!missing.is_empty()).then(|| missing.join("; "));
                if let Some(d) = &diagnostic {
                    diagnostics.push(Diagnostic {
                        severity: Severity::Warning,
                        source: src.key.clone(),
                        message: format!("module `{}` unavailable: {d}", manifest.id),
                    });
                }
                modules.insert(
                    manifest.id.clone(),
                    ModuleEntry {
                        routed_category: route_category(&manifest.category).to_string(),
                        available: diagnostic.is_none(),
                        diagnostic,
                        package_key: src.key.clone(),
                        manifest,
                    },
                );
            }
        }
        Self {
            roots: roots.to_vec(),
            modules,
            diagnostics,
        }
    }

    pub fn roots(&self) -> &[PathBuf] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ModuleEntry> {
        self.modules.get(id)
    }

    /// Entries ordered by id.
    pub fn modules(&self) -> impl Iterator<Item = &ModuleEntry> {
        self.modules.values()
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Known categories in menu order, then the fallback, with their modules.
    pub fn categories(&self) -> Vec<(&'static str, Vec<&ModuleEntry>)> {
        KNOWN_CATEGORIES
            .iter()
            .copied()
            .chain(std::iter::once(FALLBACK_CATEGORY))
            .map(|c| (c, self.modules.values().filter(|m| m.routed_category == c).collect()))
            .collect()
    }

    /// Calls the module's server handler. Handler failures and panics come
    /// back as an error panel; host state is never modified by a failure.
    pub fn invoke(
        &self,
        table: &HandlerTable,
        id: &str,
        host: &HostContext,
        request: &Value,
    ) -> Result<ModuleOutput, InvokeError> {
        let entry = self.modules.get(id).ok_or_else(|| InvokeError::NotFound(id.to_string()))?;
        let handler = match (&entry.diagnostic, table.server(&entry.manifest.binding.server)) {
            (None, Some(h)) => h,
            (d, _) => {
                return Err(InvokeError::Unavailable {
                    id: id.to_string(),
                    diagnostic: d.clone().unwrap_or_else(|| "server handler is not registered".into()),
                })
            }
        };
        match catch_unwind(AssertUnwindSafe(|| handler(id, host, request))) {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(HandlerError::BadRequest(m))) => Err(InvokeError::BadRequest(m)),
            Ok(Err(HandlerError::Failed(m))) => Ok(ModuleOutput::error(id, m)),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Ok(ModuleOutput::error(id, format!("module failed: {msg}")))
            }
        }
    }

    /// Declarative UI description of a module.
    pub fn ui(&self, table: &HandlerTable, id: &str) -> Option<Value> {
        let entry = self.modules.get(id)?;
        table.ui(&entry.manifest.binding.ui).map(|h| h(id))
    }
}
