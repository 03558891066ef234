//! Host resources shared with modules.
//!
//! Every published dataset starts a new [`Generation`]. Derived resources are
//! computed lazily, at most once per generation, and readers keep the
//! generation they started with, so a reader never sees two datasets.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use psychoforge_core::dataset::{ResponseDataset, ScoredMatrix, TotalScore};
use psychoforge_core::irt::{fit_mml_em, EmConfig, IrtModel, ItemFamily};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Dataset,
    Scored,
    TotalScores,
    IrtBinaryModel,
    Group,
    Criterion,
    Matching,
}

impl Resource {
    pub fn as_str(self) -> &'static str {
        match self {
            Resource::Dataset => "dataset",
            Resource::Scored => "scored",
            Resource::TotalScores => "total_scores",
            Resource::IrtBinaryModel => "IRT_binary_model",
            Resource::Group => "group",
            Resource::Criterion => "criterion",
            Resource::Matching => "matching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResourceError {
    #[error("host resource `{res}` is not available", res = .0.as_str())]
    Absent(Resource),
    #[error("host resource `{res}` could not be computed: {1}", res = .0.as_str())]
    Failed(Resource, String),
}

type Lazy<T> = OnceLock<Result<Arc<T>, ResourceError>>;

/// One immutable snapshot of host state.
#[derive(Default)]
pub struct Generation {
    pub version: u64,
    dataset: Option<Arc<ResponseDataset>>,
    fingerprint: String,
    scored: Lazy<ScoredMatrix>,
    totals: Lazy<TotalScore>,
    irt_binary: Lazy<IrtModel>,
    counters: Arc<Counters>,
}

#[derive(Default)]
struct Counters {
    by_resource: Mutex<BTreeMap<Resource, u64>>,
}

impl Counters {
    fn bump(&self, r: Resource) {
        *self.by_resource.lock().expect("counter lock").entry(r).or_default() += 1;
    }
}

/// SHA-256 over the canonical JSON form of a dataset.
pub fn dataset_fingerprint(dataset: &ResponseDataset) -> String {
    let bytes = serde_json::to_vec(dataset).expect("dataset serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Generation {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dataset(&self) -> Result<Arc<ResponseDataset>, ResourceError> {
        self.dataset.clone().ok_or(ResourceError::Absent(Resource::Dataset))
    }

    fn lazy<T>(
        &self,
        cell: &Lazy<T>,
        resource: Resource,
        compute: impl FnOnce() -> Result<T, ResourceError>,
    ) -> Result<Arc<T>, ResourceError> {
        cell.get_or_init(|| {
            self.counters.bump(resource);
            compute().map(Arc::new)
        })
        .clone()
    }

    pub fn scored(&self) -> Result<Arc<ScoredMatrix>, ResourceError> {
        let ds = self.dataset()?;
        self.lazy(&self.scored, Resource::Scored, || {
            ds.score().map_err(|e| ResourceError::Failed(Resource::Scored, e.to_string()))
        })
    }

    pub fn total_scores(&self) -> Result<Arc<TotalScore>, ResourceError> {
        let scored = self.scored()?;
        self.lazy(&self.totals, Resource::TotalScores, || Ok(scored.total_scores()))
    }

    /// 2PL fit over the binary-scored items.
    pub fn irt_binary_model(&self) -> Result<Arc<IrtModel>, ResourceError> {
        let scored = self.scored()?;
        self.lazy(&self.irt_binary, Resource::IrtBinaryModel, || {
            let columns: Vec<usize> = (0..scored.items()).filter(|&i| scored.max_scores()[i] == 1).collect();
            let binary = scored.select_items(&columns);
            let mut model = fit_mml_em(&binary, &vec![ItemFamily::TwoPl; columns.len()], &EmConfig::default())
                .map_err(|e| ResourceError::Failed(Resource::IrtBinaryModel, e.to_string()))?;
            model.columns = model.columns.iter().map(|&c| columns[c]).collect();
            Ok(model)
        })
    }

    pub fn group(&self) -> Result<Vec<Option<u8>>, ResourceError> {
        self.dataset()?
            .group()
            .map(<[_]>::to_vec)
            .ok_or(ResourceError::Absent(Resource::Group))
    }

    pub fn criterion(&self) -> Result<Vec<Option<f64>>, ResourceError> {
        self.dataset()?
            .criterion()
            .map(<[_]>::to_vec)
            .ok_or(ResourceError::Absent(Resource::Criterion))
    }

    pub fn matching(&self) -> Result<Vec<Option<f64>>, ResourceError> {
        self.dataset()?
            .matching()
            .map(<[_]>::to_vec)
            .ok_or(ResourceError::Absent(Resource::Matching))
    }
}

/// Host state: a swappable generation plus computation counters.
pub struct HostContext {
    current: RwLock<Arc<Generation>>,
    writer: Mutex<()>,
    next_version: AtomicU64,
    counters: Arc<Counters>,
}

impl Default for HostContext {
    fn default() -> Self {
        Self::new()
    }
}

impl HostContext {
    pub fn new() -> Self {
        let counters = Arc::new(Counters::default());
        Self {
            current: RwLock::new(Arc::new(Generation {
                counters: counters.clone(),
                ..Generation::default()
            })),
            writer: Mutex::new(()),
            next_version: AtomicU64::new(1),
            counters,
        }
    }

    /// The current generation; hold on to it for a consistent view.
    pub fn snapshot(&self) -> Arc<Generation> {
        self.current.read().expect("host lock").clone()
    }

    /// Validates and installs a dataset, dropping every cached resource.
    /// On error the current state is left untouched.
    pub fn publish_dataset(&self, dataset: ResponseDataset) -> Result<u64, psychoforge_core::Error> {
        let _guard = self.writer.lock().expect("writer lock");
        dataset.validate()?;
        let scored = dataset.score()?;
        let generation = Generation {
            version: self.next_version.fetch_add(1, Ordering::SeqCst),
            fingerprint: dataset_fingerprint(&dataset),
            dataset: Some(Arc::new(dataset)),
            counters: self.counters.clone(),
            ..Generation::default()
        };
        let _ = generation.scored.set(Ok(Arc::new(scored)));
        self.counters.bump(Resource::Scored);
        let version = generation.version;
        *self.current.write().expect("host lock") = Arc::new(generation);
        Ok(version)
    }

    /// How many times `resource` has been computed since startup.
    pub fn compute_count(&self, resource: Resource) -> u64 {
        self.counters
            .by_resource
            .lock()
            .expect("counter lock")
            .get(&resource)
            .copied()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn dataset(rows: &[&[&str]]) -> ResponseDataset {
        let names = (0..rows[0].len()).map(|i| format!("i{i}")).collect();
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|s| Some(s.to_string())).collect())
            .collect();
        ResponseDataset::new(names, rows).unwrap()
    }

    #[test]
    fn absent_resources_are_typed() {
        let host = HostContext::new();
        let g = host.snapshot();
        assert_eq!(g.dataset().unwrap_err(), ResourceError::Absent(Resource::Dataset));
        assert_eq!(g.irt_binary_model().unwrap_err(), ResourceError::Absent(Resource::Dataset));
        host.publish_dataset(dataset(&[&["1", "0"], &["0", "1"]])).unwrap();
        assert_eq!(host.snapshot().group().unwrap_err(), ResourceError::Absent(Resource::Group));
    }

    #[test]
    fn lazy_totals_compute_once_per_generation() {
        let host = HostContext::new();
        host.publish_dataset(dataset(&[&["1", "0"], &["0", "1"], &["1", "1"]])).unwrap();
        let g = host.snapshot();
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let g = g.clone();
                thread::spawn(move || g.total_scores().unwrap().values.clone())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), vec![Some(1.0), Some(1.0), Some(2.0)]);
        }
        assert_eq!(host.compute_count(Resource::TotalScores), 1);
        host.publish_dataset(dataset(&[&["1", "0"], &["0", "1"], &["1", "1"]])).unwrap();
        host.snapshot().total_scores().unwrap();
        assert_eq!(host.compute_count(Resource::TotalScores), 2);
    }

    #[test]
    fn rejected_publish_keeps_state() {
        let host = HostContext::new();
        let v = host.publish_dataset(dataset(&[&["1", "0"], &["0", "1"]])).unwrap();
        let mut bad = dataset(&[&["A", "B"], &["C", "D"]]);
        let mut info = bad.item_info()[0].clone();
        info.key = None;
        info.item_type = psychoforge_core::dataset::ItemType::Nominal;
        bad.set_item_info(0, info).unwrap();
        assert!(host.publish_dataset(bad).is_err());
        assert_eq!(host.snapshot().version, v);
        assert_eq!(host.snapshot().dataset().unwrap().persons(), 2);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = dataset(&[&["1", "0"], &["0", "1"]]);
        let b = dataset(&[&["1", "0"], &["1", "1"]]);
        assert_eq!(dataset_fingerprint(&a), dataset_fingerprint(&a.clone()));
        assert_ne!(dataset_fingerprint(&a), dataset_fingerprint(&b));
    }
}
