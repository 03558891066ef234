//! Published JSON schemas for service documents and a validator for the
//! subset of JSON Schema they use.
//!
//! Supported keywords: `type`, `properties`, `required`,
//! `additionalProperties`, `items`, `minItems`, `maxItems`, `enum`, `const`,
//! `minimum`, `maximum`, `oneOf`, `anyOf` and local `$ref` into
//! `#/definitions` or `#/$defs`.

use serde_json::Value;

pub const SCHEMAS: [(&str, &str); 9] = [
    ("error", include_str!("../schemas/error.json")),
    ("dataset_summary", include_str!("../schemas/dataset_summary.json")),
    ("classical", include_str!("../schemas/classical.json")),
    ("regression", include_str!("../schemas/regression.json")),
    ("irt", include_str!("../schemas/irt.json")),
    ("dif", include_str!("../schemas/dif.json")),
    ("cat", include_str!("../schemas/cat.json")),
    ("module_list", include_str!("../schemas/module_list.json")),
    ("module_output", include_str!("../schemas/module_output.json")),
];

pub fn schema_names() -> impl Iterator<Item = &'static str> {
    SCHEMAS.iter().map(|(n, _)| *n)
}

pub fn schema_text(name: &str) -> Option<&'static str> {
    SCHEMAS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn schema(name: &str) -> Option<Value> {
    schema_text(name).map(|s| serde_json::from_str(s).expect("bundled schema is valid JSON"))
}

/// Validates `doc` against the named bundled schema.
pub fn validate_named(name: &str, doc: &Value) -> Result<(), Vec<String>> {
    let s = schema(name).ok_or_else(|| vec![format!("unknown schema `{name}`")])?;
    validate(&s, doc)
}

/// Validates `doc` against `schema`; errors carry a JSON pointer.
pub fn validate(schema: &Value, doc: &Value) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    check(schema, schema, doc, "", &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn resolve<'a>(root: &'a Value, reference: &str) -> Option<&'a Value> {
    let path = reference.strip_prefix("#/")?;
    path.split('/').try_fold(root, |node, part| node.get(part))
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "null" => v.is_null(),
        "boolean" => v.is_boolean(),
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some() || v.as_f64().is_some_and(|f| f.fract() == 0.0),
        _ => false,
    }
}

fn check(root: &Value, schema: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    let Some(s) = schema.as_object() else {
        if schema == &Value::Bool(false) {
            errors.push(format!("{at}: no value allowed"));
        }
        return;
    };
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        match resolve(root, r) {
            Some(target) => check(root, target, v, at, errors),
            None => errors.push(format!("{at}: unresolvable $ref `{r}`")),
        }
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(t, v)),
            _ => true,
        };
        if !ok {
            errors.push(format!("{at}: expected type {t}, found {}", short(v)));
            return;
        }
    }
    if let Some(c) = s.get("const") {
        if c != v {
            errors.push(format!("{at}: expected constant {c}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(v) {
            errors.push(format!("{at}: {} is not one of {}", short(v), Value::Array(options.clone())));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(min) = s.get("minimum").and_then(Value::as_f64) {
            if x < min {
                errors.push(format!("{at}: {x} is below minimum {min}"));
            }
        }
        if let Some(max) = s.get("maximum").and_then(Value::as_f64) {
            if x > max {
                errors.push(format!("{at}: {x} is above maximum {max}"));
            }
        }
    }
    if let Value::Object(map) = v {
        if let Some(Value::Array(req)) = s.get("required") {
            for key in req.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    errors.push(format!("{at}: missing required property `{key}`"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (key, value) in map {
            let path = format!("{at}/{key}");
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(root, sub, value, &path, errors),
                None => match s.get("additionalProperties") {
                    Some(Value::Bool(false)) => errors.push(format!("{at}: unexpected property `{key}`")),
                    Some(sub @ Value::Object(_)) => check(root, sub, value, &path, errors),
                    _ => {}
                },
            }
        }
    }
    if let Value::Array(items) = v {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                errors.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(max) = s.get("maxItems").and_then(Value::as_u64) {
            if items.len() as u64 > max {
                errors.push(format!("{at}: more than {max} items"));
            }
        }
        if let Some(sub) = s.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(root, sub, item, &format!("{at}/{i}"), errors);
            }
        }
    }
    if let Some(Value::Array(any)) = s.get("anyOf") {
        if !any.iter().any(|sub| validate_at(root, sub, v, at).is_empty()) {
            errors.push(format!("{at}: matches none of anyOf"));
        }
    }
    if let Some(Value::Array(one)) = s.get("oneOf") {
        let matched = one.iter().filter(|sub| validate_at(root, sub, v, at).is_empty()).count();
        if matched != 1 {
            errors.push(format!("{at}: matches {matched} oneOf branches, expected exactly 1"));
        }
    }
}

fn validate_at(root: &Value, schema: &Value, v: &Value, at: &str) -> Vec<String> {
    let mut e = Vec::new();
    check(root, schema, v, at, &mut e);
    e
}

fn short(v: &Value) -> String {
    let s = v.to_string();
    if s.len() > 40 {
        format!("{}...", &s[..s.char_indices().nth(37).map_or(s.len(), |(i, _)| i)])
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn bundled_schemas_parse() {
        for name in schema_names() {
            let s = schema(name).unwrap();
            assert!(s.is_object(), "{name}");
        }
    }

    #[test]
    fn keywords() {
        let s = json!({
            "type": "object",
            "required": ["a"],
            "additionalProperties": false,
            "properties": {
                "a": {"type": "integer", "minimum": 0, "maximum": 3},
                "b": {"type": "array", "items": {"$ref": "#/definitions/k"}, "minItems": 1},
                "c": {"oneOf": [{"type": "string"}, {"type": "null"}]}
            },
            "definitions": {"k": {"enum": ["x", "y"]}}
        });
        assert!(validate(&s, &json!({"a": 2, "b": ["x"], "c": null})).is_ok());
        let errs = validate(&s, &json!({"b": ["z"], "d": 1})).unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(validate(&s, &json!({"a": 4})).is_err());
        assert!(validate(&s, &json!({"a": 1.5})).is_err());
        assert!(validate(&s, &json!({"a": 1, "b": []})).is_err());
        assert!(validate(&s, &json!({"a": 1, "c": 3})).is_err());
    }

    #[test]
    fn one_of_requires_exactly_one() {
        let s = json!({"oneOf": [{"type": "number"}, {"type": "integer"}]});
        assert!(validate(&s, &json!(1.5)).is_ok());
        assert!(validate(&s, &json!(1)).is_err());
    }
}
