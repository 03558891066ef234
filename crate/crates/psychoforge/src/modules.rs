//! Handlers of the bundled modules.

use psychoforge_core::cat::Termination;
use psychoforge_core::dif::{dif_c_scan, dif_icc_pair, DifScanConfig, DifType, PAdjust};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::analysis::{self, grid, AnalysisError, CatParams};
use crate::host::HostContext;
use crate::output::{num, opt_num, ModuleOutput, Panel, Series};
use crate::registry::{HandlerError, HandlerTable};

pub use crate::analysis::example_model;

pub fn register(t: &mut HandlerTable) {
    t.register_ui("cat_example_ui", cat_ui);
    t.register_server("cat_example_server", cat_server);
    // Same handlers under the names used by externally packaged copies.
    t.register_ui("sm_cat_ui", cat_ui);
    t.register_server("sm_cat_server", cat_server);
    t.register_ui("dif_c_ui", dif_c_ui);
    t.register_server("dif_c_server", dif_c_server);
}

fn parse_request<T: for<'de> Deserialize<'de> + Default>(request: &Value) -> Result<T, HandlerError> {
    match request {
        Value::Null => Ok(T::default()),
        v => serde_json::from_value(v.clone()).map_err(|e| HandlerError::BadRequest(e.to_string())),
    }
}

fn handler_err(e: AnalysisError) -> HandlerError {
    match e {
        AnalysisError::InvalidParameter(m) => HandlerError::BadRequest(m),
        AnalysisError::Prerequisite(m) | AnalysisError::NotFound(m) | AnalysisError::Fit(m) => HandlerError::Failed(m),
    }
}

fn cat_ui(id: &str) -> Value {
    json!({
        "module": id,
        "title": "CAT Example",
        "inputs": [
            {"name": "true_theta", "kind": "slider", "label": "True theta", "min": -4.0, "max": 4.0, "step": 0.1, "default": 1.0},
            {"name": "model", "kind": "select", "label": "Item pool", "options": ["host", "example"], "default": "host"},
            {"name": "min_sem", "kind": "number", "label": "Target SEM", "min": 0.05, "default": 0.4},
            {"name": "estimator", "kind": "select", "label": "Estimator", "options": ["EAP", "ML"], "default": "EAP"},
            {"name": "seed", "kind": "number", "label": "Seed", "min": 0, "default": 0}
        ],
        "outputs": ["text", "curves", "table"]
    })
}

fn cat_server(id: &str, host: &HostContext, request: &Value) -> Result<ModuleOutput, HandlerError> {
    let params: CatParams = parse_request(request)?;
    if !(-4.0..=4.0).contains(&params.true_theta) {
        return Err(HandlerError::BadRequest("true_theta must lie in [-4, 4]".into()));
    }
    let doc = analysis::cat(&host.snapshot(), &params).map_err(handler_err)?;
    let traj = &doc.trajectory;
    let steps: Vec<f64> = (1..=traj.steps.len()).map(|s| s as f64).collect();
    let termination = match traj.termination {
        Termination::SemMet => "target SEM reached",
        Termination::PoolExhausted => "item pool exhausted",
        Termination::MaxItems => "maximum test length reached",
    };
    let se = traj.final_se.map_or("unavailable".to_string(), |s| format!("{s:.3}"));
    let text = format!(
        "Administered {} item(s); final theta {:.3} (SE {se}); {termination}.",
        traj.steps.len(),
        traj.final_theta
    );
    let lower = doc.ci.iter().map(|c| c.map_or(f64::NAN, |c| c.0)).collect();
    let upper = doc.ci.iter().map(|c| c.map_or(f64::NAN, |c| c.1)).collect();
    let rows = traj
        .steps
        .iter()
        .enumerate()
        .map(|(s, st)| {
            vec![
                json!(s + 1),
                json!(doc.item_names[st.item]),
                json!(st.response),
                num(st.theta),
                opt_num(st.se),
            ]
        })
        .collect();
    Ok(ModuleOutput {
        module: id.to_string(),
        panels: vec![
            Panel::Text {
                title: "Summary".into(),
                text,
            },
            Panel::Curves {
                title: "Ability trajectory".into(),
                x_label: "Step".into(),
                y_label: "Theta".into(),
                series: vec![
                    Series {
                        name: "theta".into(),
                        x: steps.clone(),
                        y: traj.steps.iter().map(|s| s.theta).collect(),
                    },
                    Series {
                        name: "lower".into(),
                        x: steps.clone(),
                        y: lower,
                    },
                    Series {
                        name: "upper".into(),
                        x: steps.clone(),
                        y: upper,
                    },
                    Series {
                        name: "true theta".into(),
                        y: vec![params.true_theta; steps.len()],
                        x: steps,
                    },
                ],
            },
            Panel::Table {
                title: "Administered items".into(),
                columns: ["step", "item", "response", "theta", "se"].map(String::from).to_vec(),
                rows,
            },
        ],
    })
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DifCRequest {
    alpha: f64,
    p_adjust: PAdjust,
}

impl Default for DifCRequest {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            p_adjust: PAdjust::None,
        }
    }
}

fn dif_c_ui(id: &str) -> Value {
    json!({
        "module": id,
        "title": "DIF-C",
        "inputs": [
            {"name": "alpha", "kind": "number", "label": "Alpha", "min": 0.001, "max": 0.5, "default": 0.05},
            {"name": "p_adjust", "kind": "select", "label": "p adjustment", "options": ["none", "benjamini_hochberg"], "default": "none"}
        ],
        "outputs": ["table", "curves"]
    })
}

fn dif_c_server(id: &str, host: &HostContext, request: &Value) -> Result<ModuleOutput, HandlerError> {
    let req: DifCRequest = parse_request(request)?;
    if !(req.alpha > 0.0 && req.alpha < 1.0) {
        return Err(HandlerError::BadRequest("alpha must lie in (0, 1)".into()));
    }
    let gen = host.snapshot();
    let failed = |e: crate::host::ResourceError| HandlerError::Failed(e.to_string());
    let scored = gen.scored().map_err(failed)?;
    let group = gen.group().map_err(failed)?;
    let matching = gen.matching().map_err(failed)?;
    let config = DifScanConfig {
        alpha: req.alpha,
        p_adjust: req.p_adjust,
    };
    let scan = dif_c_scan(&scored, &matching, &group, &config).map_err(|e| HandlerError::Failed(e.to_string()))?;
    let rows = scan
        .entries
        .iter()
        .map(|e| {
            let r = e.result.as_ref();
            vec![
                json!(e.item),
                opt_num(r.map(|r| r.lrt_stat)),
                opt_num(r.map(|r| r.p_value)),
                opt_num(e.p_flag),
                json!(match e.dif_type {
                    DifType::None => "none",
                    DifType::Uniform => "uniform",
                    DifType::Nonuniform => "nonuniform",
                }),
                e.error.as_ref().map_or(Value::Null, |m| json!(m)),
            ]
        })
        .collect();
    let (lo, hi) = matching
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let theta = grid(lo, hi, 41);
    let mut panels = vec![Panel::Table {
        title: format!(
            "DIF summary: {} none, {} uniform, {} nonuniform, {} errors",
            scan.summary.none, scan.summary.uniform, scan.summary.nonuniform, scan.summary.errors
        ),
        columns: ["item", "lrt", "p", "p_flag", "dif_type", "error"].map(String::from).to_vec(),
        rows,
    }];
    for e in scan.entries.iter().filter(|e| e.dif_type != DifType::None) {
        let Some(r) = &e.result else { continue };
        let (reference, focal) = dif_icc_pair(&r.beta, &theta);
        panels.push(Panel::Curves {
            title: format!("{}: group curves", e.item),
            x_label: "Matching criterion".into(),
            y_label: "P(correct)".into(),
            series: vec![
                Series {
                    name: "reference".into(),
                    x: theta.clone(),
                    y: reference,
                },
                Series {
                    name: "focal".into(),
                    x: theta.clone(),
                    y: focal,
                },
            ],
        });
    }
    Ok(ModuleOutput {
        module: id.to_string(),
        panels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use psychoforge_core::dataset::ResponseDataset;

    fn host_with_data() -> HostContext {
        let host = HostContext::new();
        let n = 400;
        let names = (0..6).map(|i| format!("q{i}")).collect();
        let mut group = Vec::new();
        let mut matching = Vec::new();
        let rows = (0..n)
            .map(|p| {
                let g = (p % 2) as u8;
                let t = -2.0 + 4.0 * ((p * 37) % n) as f64 / n as f64;
                group.push(Some(g));
                matching.push(Some(t));
                (0..6)
                    .map(|i| {
                        let shift = if i == 0 { 1.5 * g as f64 } else { 0.0 };
                        let eta = 1.3 * t - 0.3 * i as f64 + 0.2 - shift;
                        let u = ((p * 7919 + i * 104_729) % 1000) as f64 / 1000.0;
                        Some(if u < 1.0 / (1.0 + (-eta).exp()) { "1" } else { "0" }.to_string())
                    })
                    .collect()
            })
            .collect();
        let ds = ResponseDataset::new(names, rows)
            .unwrap()
            .with_group(group)
            .unwrap()
            .with_matching(matching)
            .unwrap();
        host.publish_dataset(ds).unwrap();
        host
    }

    #[test]
    fn cat_on_example_pool() {
        let host = HostContext::new();
        let out = cat_server("cat_example", &host, &json!({"model": "example", "seed": 3})).unwrap();
        assert_eq!(out.panels.len(), 3);
        assert!(!out.is_error());
        let again = cat_server("cat_example", &host, &json!({"model": "example", "seed": 3})).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn cat_without_data_fails_softly() {
        let err = cat_server("cat_example", &HostContext::new(), &Value::Null).unwrap_err();
        assert!(matches!(err, HandlerError::Failed(m) if m.contains("dataset")));
    }

    #[test]
    fn cat_rejects_bad_requests() {
        let host = HostContext::new();
        for bad in [json!({"true_theta": 9.0}), json!({"bogus": 1}), json!({"min_sem": -1.0, "model": "example"})] {
            assert!(matches!(cat_server("x", &host, &bad), Err(HandlerError::BadRequest(_))), "{bad}");
        }
    }

    #[test]
    fn dif_c_flags_shifted_item() {
        let host = host_with_data();
        let out = dif_c_server("dif_c", &host, &Value::Null).unwrap();
        let Panel::Table { rows, .. } = &out.panels[0] else { panic!() };
        assert_eq!(rows.len(), 6);
        assert_ne!(rows[0][4], json!("none"));
        assert!(out.panels.iter().any(|p| matches!(p, Panel::Curves { title, .. } if title.starts_with("q0"))));
    }

    #[test]
    fn dif_c_needs_matching() {
        let err = dif_c_server("dif_c", &HostContext::new(), &Value::Null).unwrap_err();
        assert!(matches!(err, HandlerError::Failed(_)));
    }

    #[test]
    fn ui_descriptions() {
        let ui = cat_ui("cat_example");
        assert_eq!(ui["inputs"][0]["min"], json!(-4.0));
        assert_eq!(ui["inputs"][0]["default"], json!(1.0));
        assert_eq!(dif_c_ui("dif_c")["module"], json!("dif_c"));
    }
}
