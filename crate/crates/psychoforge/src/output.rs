//! Module output documents: a list of panels the client renders by kind.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Panel {
    Table {
        title: String,
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
    },
    Curves {
        title: String,
        x_label: String,
        y_label: String,
        series: Vec<Series>,
    },
    Text {
        title: String,
        text: String,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleOutput {
    pub module: String,
    pub panels: Vec<Panel>,
}

impl ModuleOutput {
    pub fn error(module: &str, message: impl Into<String>) -> Self {
        Self {
            module: module.to_string(),
            panels: vec![Panel::Error {
                message: message.into(),
            }],
        }
    }

    pub fn is_error(&self) -> bool {
        self.panels.iter().any(|p| matches!(p, Panel::Error { .. }))
    }
}

/// JSON number, or `null` for non-finite values.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}
