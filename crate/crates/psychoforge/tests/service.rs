use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use psychoforge::schema::validate_named;
use psychoforge::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const TOY: &str = include_str!("../../../data/toy.csv");
const TOY_META: &str = include_str!("../../../data/toy_metadata.csv");

struct Reply {
    status: StatusCode,
    cache: Option<String>,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap()
    }
}

async fn send(app: &axum::Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let cache = resp
        .headers()
        .get("x-cache")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, cache, bytes }
}

async fn get(app: &axum::Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &axum::Router, uri: &str, content_type: &str, body: impl Into<Body>) -> Reply {
    send(
        app,
        Request::post(uri)
            .header("content-type", content_type)
            .body(body.into())
            .unwrap(),
    )
    .await
}

fn app_with(config: ServiceConfig) -> axum::Router {
    router(Arc::new(AppState::new(config)))
}

fn app() -> axum::Router {
    app_with(ServiceConfig::default())
}

fn assert_schema(name: &str, reply: &Reply) {
    if let Err(e) = validate_named(name, &reply.json()) {
        panic!("{name} schema violations: {e:#?}");
    }
}

async fn upload_toy(app: &axum::Router) -> Reply {
    let body = json!({"data": TOY, "metadata": TOY_META}).to_string();
    post(app, "/datasets", "application/json", body).await
}

#[tokio::test]
async fn upload_summary() {
    let app = app();
    let r = post(&app, "/datasets", "text/csv", "a,b,c\n1,0,1\n0,0,1\n1,1,0\n0,1,1\n").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_schema("dataset_summary", &r);
    let v = r.json();
    assert_eq!(v["persons"], 4);
    assert_eq!(v["items"], 3);
    assert_eq!(v["item_types"], json!(["binary", "binary", "binary"]));
    assert_eq!(v["group_present"], false);

    let r = post(&app, "/datasets", "text/csv", "a,b,__group\n1,0,0\n0,1,1\n").await;
    assert_eq!(r.json()["group_present"], true);
}

#[tokio::test]
async fn ragged_upload_is_parse_error() {
    let app = app();
    let r = post(&app, "/datasets", "text/csv", "a,b,c\n1,0\n").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_schema("error", &r);
    assert_eq!(r.json()["error"]["kind"], "ParseError");
}

#[tokio::test]
async fn analysis_without_data_is_conflict() {
    let app = app();
    for uri in ["/analysis/classical", "/analysis/irt", "/analysis/dif", "/analysis/cat", "/analysis/regression/x"] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::CONFLICT, "{uri}");
        assert_schema("error", &r);
    }
}

#[tokio::test]
async fn dif_without_group_is_conflict() {
    let app = app();
    post(&app, "/datasets", "text/csv", "a,b\n1,0\n0,1\n1,1\n").await;
    let r = get(&app, "/analysis/dif").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(r.json()["error"]["message"].as_str().unwrap().contains("group"));
}

#[tokio::test]
async fn invalid_parameters_are_unprocessable() {
    let app = app();
    upload_toy(&app).await;
    for uri in [
        "/analysis/classical?n_groups=abc",
        "/analysis/classical?n_groups=1",
        "/analysis/classical?bogus=1",
        "/analysis/dif?matching=sideways",
        "/analysis/dif?alpha=2",
        "/analysis/irt?families=4PL",
        "/analysis/irt?quadrature_points=1",
        "/analysis/cat?min_sem=-1",
        "/analysis/cat?true_theta=nan",
        "/analysis/regression/i01?model=probit",
        "/analysis/regression/essay",
    ] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{uri}");
        assert_schema("error", &r);
    }
    assert_eq!(get(&app, "/analysis/regression/nope").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn analysis_documents_match_schemas() {
    let app = app();
    upload_toy(&app).await;
    for (uri, schema) in [
        ("/analysis/classical", "classical"),
        ("/analysis/classical?n_groups=5", "classical"),
        ("/analysis/regression/i03", "regression"),
        ("/analysis/regression/i03?model=3pl&matching=total", "regression"),
        ("/analysis/regression/mc1?matching=external", "regression"),
        ("/analysis/irt", "irt"),
        ("/analysis/irt?families=3PL,3PL,3PL,3PL,3PL,3PL,3PL,3PL,2PL,GPCM", "irt"),
        ("/analysis/dif", "dif"),
        ("/analysis/dif?matching=external&p_adjust=benjamini_hochberg", "dif"),
        ("/analysis/cat?true_theta=1&min_sem=0.4", "cat"),
        ("/analysis/cat?model=example&estimator=ML&seed=3", "cat"),
    ] {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&r.bytes));
        assert_schema(schema, &r);
    }
}

#[tokio::test]
async fn documents_echo_config() {
    let app = app();
    upload_toy(&app).await;
    let v = get(&app, "/analysis/classical?n_groups=4").await.json();
    assert_eq!(v["config"]["n_groups"], 4);
    let v = get(&app, "/analysis/irt?tolerance=0.001").await.json();
    assert_eq!(v["config"]["em"]["tolerance"], 0.001);
    assert_eq!(v["config"]["families"][8], "NRM");
    assert_eq!(v["config"]["families"][9], "GPCM");
    let v = get(&app, "/analysis/dif?alpha=0.01").await.json();
    assert_eq!(v["config"]["alpha"], 0.01);
    assert_eq!(v["scan"]["config"]["alpha"], 0.01);
}

#[tokio::test]
async fn cat_trajectory_meets_target_or_exhausts() {
    let app = app();
    upload_toy(&app).await;
    let v = get(&app, "/analysis/cat?true_theta=1&min_sem=0.4").await.json();
    let expected = json!({
        "start_rule": "max_info_at_zero",
        "selection": "MI",
        "min_sem": 0.4,
        "max_items": v["item_names"].as_array().unwrap().len(),
        "theta_estimator": "EAP"
    });
    assert_eq!(v["config"], expected);
    let t = &v["trajectory"];
    match t["termination"].as_str().unwrap() {
        "sem_met" => assert!(t["final_se"].as_f64().unwrap() <= 0.4),
        other => assert_eq!(other, "pool_exhausted"),
    }
}

#[tokio::test]
async fn irt_cache_hits_are_byte_identical() {
    let app = app();
    upload_toy(&app).await;
    let a = get(&app, "/analysis/irt?max_cycles=200").await;
    let b = get(&app, "/analysis/irt?max_cycles=200").await;
    assert_eq!(a.cache.as_deref(), Some("miss"));
    assert_eq!(b.cache.as_deref(), Some("hit"));
    assert_eq!(a.bytes, b.bytes);
    let c = get(&app, "/analysis/irt?max_cycles=200&tolerance=0.001").await;
    assert_eq!(c.cache.as_deref(), Some("miss"));
    // A new upload invalidates the cache even when the content is identical.
    upload_toy(&app).await;
    let d = get(&app, "/analysis/irt?max_cycles=200").await;
    assert_eq!(d.cache.as_deref(), Some("miss"));
    assert_eq!(a.bytes, d.bytes);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let req = Request::post("/datasets")
        .header("content-type", "text/csv")
        .header("x-session", "s1")
        .body(Body::from("a,b\n1,0\n0,1\n1,1\n"))
        .unwrap();
    assert_eq!(send(&app, req).await.status, StatusCode::OK);
    assert_eq!(get(&app, "/analysis/classical").await.status, StatusCode::CONFLICT);
    let req = Request::get("/analysis/classical")
        .header("x-session", "s1")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&app, req).await.status, StatusCode::OK);
}

#[tokio::test]
async fn module_listing_and_invocation() {
    let app = app();
    let r = get(&app, "/modules").await;
    assert_schema("module_list", &r);
    let v = r.json();
    let modules_cat = v["categories"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "Modules")
        .unwrap();
    assert!(modules_cat["modules"]
        .as_array()
        .unwrap()
        .iter()
        .any(|m| m["manifest"]["id"] == "cat_example"));

    let r = post(&app, "/modules/cat_example/invoke", "application/json", r#"{"model":"example","seed":1}"#).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_schema("module_output", &r);

    // Module failure is data: no dataset means an error panel with 200.
    let r = post(&app, "/modules/cat_example/invoke", "application/json", "{}").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_schema("module_output", &r);
    assert_eq!(r.json()["panels"][0]["kind"], "error");

    let r = post(&app, "/modules/cat_example/invoke", "application/json", "{not json").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = post(&app, "/modules/cat_example/invoke", "application/json", r#"{"true_theta": 10}"#).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = post(&app, "/modules/nope/invoke", "application/json", "{}").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    upload_toy(&app).await;
    let r = post(&app, "/modules/dif_c/invoke", "application/json", "").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_schema("module_output", &r);
    assert_eq!(r.json()["panels"][0]["kind"], "table");

    let ui = get(&app, "/modules/cat_example/ui").await.json();
    assert_eq!(ui["inputs"][0]["name"], "true_theta");
}

#[tokio::test]
async fn rediscover_picks_up_new_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app_with(ServiceConfig {
        module_roots: vec![tmp.path().to_path_buf()],
        ..ServiceConfig::default()
    });
    let ids = |v: &Value| -> Vec<String> {
        v["categories"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|c| c["modules"].as_array().unwrap().iter())
            .map(|m| m["manifest"]["id"].as_str().unwrap().to_string())
            .collect()
    };
    assert!(!ids(&get(&app, "/modules").await.json()).contains(&"sm_cat".to_string()));
    let d = tmp.path().join("sm");
    std::fs::create_dir_all(&d).unwrap();
    std::fs::write(d.join("PACKAGE.meta"), "package: sm\nsia-module: true\n").unwrap();
    std::fs::write(
        d.join("modules.yml"),
        "cat:\n  title: CAT Example\n  category: Modules\n  binding:\n    ui: sm_cat_ui\n    server: sm_cat_server\n",
    )
    .unwrap();
    let r = post(&app, "/modules/rediscover", "application/json", "").await;
    assert_schema("module_list", &r);
    assert!(ids(&get(&app, "/modules").await.json()).contains(&"sm_cat".to_string()));
    let r = post(&app, "/modules/sm_cat/invoke", "application/json", r#"{"model":"example"}"#).await;
    assert_eq!(r.status, StatusCode::OK);
}

#[tokio::test]
async fn unavailable_module_is_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("x");
    std::fs::create_dir_all(&d).unwrap();
    std::fs::write(d.join("PACKAGE.meta"), "package: x\nsia-module: true\n").unwrap();
    std::fs::write(
        d.join("modules.yml"),
        "m:\n  title: M\n  category: Scores\n  binding:\n    ui: none_ui\n    server: none_server\n",
    )
    .unwrap();
    let app = app_with(ServiceConfig {
        module_roots: vec![tmp.path().to_path_buf()],
        ..ServiceConfig::default()
    });
    let r = post(&app, "/modules/x_m/invoke", "application/json", "{}").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(r.json()["error"]["message"].as_str().unwrap().contains("none_server"));
}

#[tokio::test]
async fn timeout_answers_gateway_timeout() {
    let state = Arc::new(AppState::new(ServiceConfig {
        timeout: std::time::Duration::from_nanos(1),
        ..ServiceConfig::default()
    }));
    let mut ds = psychoforge::io::parse_csv(TOY, &Default::default()).unwrap();
    psychoforge::io::apply_metadata(&mut ds, &psychoforge::io::parse_metadata(TOY_META).unwrap()).unwrap();
    state.session(&Default::default()).host.publish_dataset(ds).unwrap();
    let app = router(state);
    let r = get(&app, "/analysis/irt").await;
    assert_eq!(r.status, StatusCode::GATEWAY_TIMEOUT);
    assert_schema("error", &r);
}

#[tokio::test]
async fn schemas_are_served() {
    let app = app();
    let names = get(&app, "/schemas").await.json();
    assert!(names.as_array().unwrap().contains(&json!("cat")));
    let r = get(&app, "/schemas/cat").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["title"], "CAT trajectory");
    assert_eq!(get(&app, "/schemas/nope").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_readers_see_one_dataset() {
    let app = app();
    post(&app, "/datasets", "text/csv", "a,b\n1,0\n0,1\n1,1\n").await;
    let mut handles = Vec::new();
    for i in 0..20 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            if i % 4 == 0 {
                let body = if i % 8 == 0 { "a,b\n1,0\n0,1\n1,1\n" } else { "a,b,c\n1,0,1\n0,1,1\n1,1,0\n0,0,0\n" };
                post(&app, "/datasets", "text/csv", body).await;
                None
            } else {
                Some(get(&app, "/analysis/classical").await.json())
            }
        }));
    }
    for h in handles {
        if let Some(v) = h.await.unwrap() {
            let persons = v["persons"].as_u64().unwrap();
            let items = v["items"].as_array().unwrap().len();
            assert!((persons, items) == (3, 2) || (persons, items) == (4, 3), "{persons} {items}");
        }
    }
}
