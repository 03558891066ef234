//! HTTP/JSON service.
//!
//! Sessions are selected with the `X-Session` header (default session when
//! absent). Each session owns a [`HostContext`] and a cache of serialized IRT
//! documents keyed by dataset fingerprint, families and EM configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{self, AnalysisError, CatParams, ClassicalParams, DifParams, IrtParams, RegressionParams};
use crate::host::{Generation, HostContext};
use crate::io::{apply_metadata, parse_csv, parse_metadata, CsvOptions, IoError};
use crate::registry::{HandlerTable, InvokeError, Registry};
use crate::schema;

pub const SESSION_HEADER: &str = "x-session";
pub const CACHE_HEADER: &str = "x-cache";
pub const DEFAULT_SESSION: &str = "default";
pub const DEFAULT_PORT: u16 = 8090;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub module_roots: Vec<PathBuf>,
    /// Limit for one analysis request; expiry answers 504.
    pub timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            module_roots: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Default)]
pub struct Session {
    pub host: HostContext,
    irt_cache: Mutex<BTreeMap<String, Arc<Vec<u8>>>>,
    upload: Mutex<()>,
}

pub struct AppState {
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    registry: RwLock<Arc<Registry>>,
    rediscover_lock: Mutex<()>,
    table: HandlerTable,
    timeout: Duration,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let table = HandlerTable::builtin();
        let registry = Registry::discover(&config.module_roots, &table);
        Self {
            sessions: Mutex::new(BTreeMap::new()),
            registry: RwLock::new(Arc::new(registry)),
            rediscover_lock: Mutex::new(()),
            table,
            timeout: config.timeout,
        }
    }

    pub fn registry(&self) -> Arc<Registry> {
        self.registry.read().expect("registry lock").clone()
    }

    pub fn session(&self, headers: &HeaderMap) -> Arc<Session> {
        let id = headers
            .get(SESSION_HEADER)
            .and_then(|v| v.to_str().ok())
            .filter(|s| !s.is_empty())
            .unwrap_or(DEFAULT_SESSION);
        self.sessions
            .lock()
            .expect("session lock")
            .entry(id.to_string())
            .or_default()
            .clone()
    }
}

/// JSON error response `{"error": {"kind", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"kind": self.kind, "message": self.message}});
        (self.status, json_headers(), body.to_string()).into_response()
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Prerequisite(m) => ApiError::new(StatusCode::CONFLICT, "PrerequisiteMissing", m),
            AnalysisError::InvalidParameter(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidParameter", m),
            AnalysisError::NotFound(m) => ApiError::new(StatusCode::NOT_FOUND, "NotFound", m),
            AnalysisError::Fit(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "FitError", m),
        }
    }
}

fn json_headers() -> [(header::HeaderName, HeaderValue); 1] {
    [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))]
}

fn json_body<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("documents serialize")
}

fn json_ok(bytes: Vec<u8>) -> Response {
    (StatusCode::OK, json_headers(), bytes).into_response()
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(t)| t)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidParameter", e.body_text()))
}

/// Runs CPU-bound work off the async executor, bounded by the timeout.
async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::time::timeout(state.timeout, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(r)) => r,
        Ok(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", join.to_string())),
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "Timeout",
            format!("analysis exceeded {} s", state.timeout.as_secs_f64()),
        )),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/datasets", post(upload))
        .route("/analysis/classical", get(classical))
        .route("/analysis/regression/{item}", get(regression))
        .route("/analysis/irt", get(irt))
        .route("/analysis/dif", get(dif))
        .route("/analysis/cat", get(cat))
        .route("/modules", get(list_modules))
        .route("/modules/rediscover", post(rediscover))
        .route("/modules/{id}/invoke", post(invoke))
        .route("/modules/{id}/ui", get(module_ui))
        .route("/schemas", get(list_schemas))
        .route("/schemas/{name}", get(get_schema))
        .with_state(state)
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadJson {
    data: String,
    #[serde(default)]
    metadata: Option<String>,
}

fn io_error(e: IoError) -> ApiError {
    let kind = e.kind();
    ApiError::new(StatusCode::BAD_REQUEST, kind, e.to_string())
}

async fn upload(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let text = String::from_utf8(body.to_vec())
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "ParseError", "body is not UTF-8"))?;
    let (csv, metadata) = if is_json {
        let u: UploadJson = serde_json::from_str(&text)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "ParseError", e.to_string()))?;
        (u.data, u.metadata)
    } else {
        (text, None)
    };
    let session = state.session(&headers);
    blocking(&state, move || {
        let mut ds = parse_csv(&csv, &CsvOptions::default()).map_err(io_error)?;
        if let Some(m) = metadata {
            apply_metadata(&mut ds, &parse_metadata(&m).map_err(io_error)?).map_err(io_error)?;
        }
        let _guard = session.upload.lock().expect("upload lock");
        session
            .host
            .publish_dataset(ds)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "DataError", e.to_string()))?;
        session.irt_cache.lock().expect("cache lock").clear();
        let gen = session.host.snapshot();
        let ds = gen.dataset().expect("just published");
        Ok(json_ok(json_body(&analysis::dataset_summary(&ds, gen.fingerprint()))))
    })
    .await
}

async fn analysis_doc<P, D>(
    state: Arc<AppState>,
    headers: HeaderMap,
    params: Result<Query<P>, QueryRejection>,
    run: fn(&Generation, &P) -> Result<D, AnalysisError>,
) -> Result<Response, ApiError>
where
    P: DeserializeOwned + Send + 'static,
    D: Serialize + 'static,
{
    let params = query(params)?;
    let gen = state.session(&headers).host.snapshot();
    blocking(&state, move || Ok(json_ok(json_body(&run(&gen, &params)?)))).await
}

async fn classical(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    q: Result<Query<ClassicalParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    analysis_doc(state, headers, q, analysis::classical).await
}

async fn dif(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    q: Result<Query<DifParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    analysis_doc(state, headers, q, analysis::dif).await
}

async fn cat(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    q: Result<Query<CatParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    analysis_doc(state, headers, q, analysis::cat).await
}

async fn regression(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(item): Path<String>,
    q: Result<Query<RegressionParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let params = query(q)?;
    let gen = state.session(&headers).host.snapshot();
    blocking(&state, move || {
        Ok(json_ok(json_body(&analysis::regression(&gen, &item, &params)?)))
    })
    .await
}

/// Cache key for an IRT fit.
fn irt_key(gen: &Generation, params: &IrtParams) -> Result<String, AnalysisError> {
    let ds = gen.dataset()?;
    let families = params.resolve_families(&ds)?;
    let families: Vec<&str> = families.iter().map(|f| f.as_str()).collect();
    let config = serde_json::to_string(&params.em_config()).expect("config serializes");
    Ok(format!("{}|{}|{}", gen.fingerprint(), families.join(","), config))
}

async fn irt(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    q: Result<Query<IrtParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let params = query(q)?;
    let session = state.session(&headers);
    let gen = session.host.snapshot();
    let key = irt_key(&gen, &params)?;
    if let Some(bytes) = session.irt_cache.lock().expect("cache lock").get(&key).cloned() {
        let mut r = json_ok(bytes.as_ref().clone());
        r.headers_mut().insert(CACHE_HEADER, HeaderValue::from_static("hit"));
        return Ok(r);
    }
    let bytes = blocking(&state, move || {
        let (doc, _) = analysis::fit_irt(&gen, &params)?;
        Ok(json_body(&doc))
    })
    .await?;
    let bytes = session
        .irt_cache
        .lock()
        .expect("cache lock")
        .entry(key)
        .or_insert_with(|| Arc::new(bytes))
        .clone();
    let mut r = json_ok(bytes.as_ref().clone());
    r.headers_mut().insert(CACHE_HEADER, HeaderValue::from_static("miss"));
    Ok(r)
}

#[derive(Serialize)]
struct CategoryView<'a> {
    name: &'a str,
    modules: Vec<&'a crate::registry::ModuleEntry>,
}

pub fn module_list_document(registry: &Registry) -> Value {
    let categories: Vec<CategoryView> = registry
        .categories()
        .into_iter()
        .map(|(name, modules)| CategoryView { name, modules })
        .collect();
    json!({
        "roots": registry.roots().iter().map(|r| r.display().to_string()).collect::<Vec<_>>(),
        "categories": categories,
        "diagnostics": registry.diagnostics(),
    })
}

async fn list_modules(State(state): State<Arc<AppState>>) -> Response {
    json_ok(json_body(&module_list_document(&state.registry())))
}

async fn rediscover(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let s = state.clone();
    blocking(&state, move || {
        let _guard = s.rediscover_lock.lock().expect("rediscover lock");
        let next = Arc::new(s.registry().rediscover(&s.table));
        *s.registry.write().expect("registry lock") = next.clone();
        Ok(json_ok(json_body(&module_list_document(&next))))
    })
    .await
}

async fn invoke(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let request: Value = if body.iter().all(u8::is_ascii_whitespace) {
        Value::Null
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidRequest", e.to_string()))?
    };
    let session = state.session(&headers);
    let registry = state.registry();
    let s = state.clone();
    blocking(&state, move || {
        match registry.invoke(&s.table, &id, &session.host, &request) {
            Ok(out) => Ok(json_ok(json_body(&out))),
            Err(e @ InvokeError::NotFound(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, "NotFound", e.to_string())),
            Err(e @ InvokeError::Unavailable { .. }) => {
                Err(ApiError::new(StatusCode::CONFLICT, "ModuleUnavailable", e.to_string()))
            }
            Err(e @ InvokeError::BadRequest(_)) => {
                Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidRequest", e.to_string()))
            }
        }
    })
    .await
}

async fn module_ui(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let registry = state.registry();
    if registry.get(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("unknown module `{id}`")));
    }
    registry
        .ui(&state.table, &id)
        .map(|v| json_ok(json_body(&v)))
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "ModuleUnavailable", "ui handler is not registered"))
}

async fn list_schemas() -> Response {
    json_ok(json_body(&schema::schema_names().collect::<Vec<_>>()))
}

async fn get_schema(Path(name): Path<String>) -> Result<Response, ApiError> {
    schema::schema_text(&name)
        .map(|s| json_ok(s.as_bytes().to_vec()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("unknown schema `{name}`")))
}

/// Parses a path list the way `PATH` is written on this platform.
pub fn split_roots(s: &str) -> Vec<PathBuf> {
    std::env::split_paths(s).filter(|p| !p.as_os_str().is_empty()).collect()
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
