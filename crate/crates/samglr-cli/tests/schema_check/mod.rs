//! Minimal JSON Schema checker covering the subset used by the shipped
//! report schemas: type, required, properties, items, enum, minimum,
//! maximum, and $ref (same-file definitions and sibling-file references).

use std::path::Path;

use serde_json::Value;

pub fn validate_against_schema(instance: &Value, schema_path: &Path) {
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let dir = schema_path.parent().unwrap().to_path_buf();
    let mut errors = Vec::new();
    check(instance, &schema, &schema, &dir, "$", &mut errors);
    assert!(
        errors.is_empty(),
        "schema violations against {}:\n{}",
        schema_path.display(),
        errors.join("\n")
    );
}

fn resolve<'a>(reference: &str, root: &'a Value, dir: &Path) -> (Value, Value) {
    // Returns (resolved schema, its root document) so nested same-file refs
    // keep working after crossing files.
    let (doc, pointer) = match reference.split_once('#') {
        Some(("", p)) => (root.clone(), p.to_string()),
        Some((file, p)) => {
            let loaded: Value =
                serde_json::from_str(&std::fs::read_to_string(dir.join(file)).unwrap()).unwrap();
            (loaded, p.to_string())
        }
        None => {
            let loaded: Value =
                serde_json::from_str(&std::fs::read_to_string(dir.join(reference)).unwrap())
                    .unwrap();
            (loaded, String::new())
        }
    };
    let resolved = if pointer.is_empty() {
        doc.clone()
    } else {
        doc.pointer(&pointer)
            .unwrap_or_else(|| panic!("unresolved $ref {reference}"))
            .clone()
    };
    (resolved, doc)
}

fn check(
    instance: &Value,
    schema: &Value,
    root: &Value,
    dir: &Path,
    path: &str,
    errors: &mut Vec<String>,
) {
    if let Some(reference) = schema.get("$ref").and_then(Value::as_str) {
        let (resolved, new_root) = resolve(reference, root, dir);
        check(instance, &resolved, &new_root, dir, path, errors);
        return;
    }
    if let Some(expected) = schema.get("type").and_then(Value::as_str) {
        let ok = match expected {
            "object" => instance.is_object(),
            "array" => instance.is_array(),
            "string" => instance.is_string(),
            "boolean" => instance.is_boolean(),
            "number" => instance.is_number(),
            "integer" => {
                instance.is_i64()
                    || instance.is_u64()
                    || instance
                        .as_f64()
                        .map(|f| f.fract() == 0.0)
                        .unwrap_or(false)
            }
            other => panic!("unsupported type keyword {other}"),
        };
        if !ok {
            errors.push(format!("{path}: expected type {expected}, got {instance}"));
            return;
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(instance) {
            errors.push(format!("{path}: {instance} not in enum"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        if let Some(v) = instance.as_f64() {
            if v < min {
                errors.push(format!("{path}: {v} below minimum {min}"));
            }
        }
    }
    if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
        if let Some(v) = instance.as_f64() {
            if v > max {
                errors.push(format!("{path}: {v} above maximum {max}"));
            }
        }
    }
    if let Some(required) = schema.get("required").and_then(Value::as_array) {
        for key in required {
            let key = key.as_str().unwrap();
            if instance.get(key).is_none() {
                errors.push(format!("{path}: missing required field '{key}'"));
            }
        }
    }
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        if let Some(obj) = instance.as_object() {
            for (key, sub) in props {
                if let Some(value) = obj.get(key) {
                    check(value, sub, root, dir, &format!("{path}.{key}"), errors);
                }
            }
        }
    }
    if let Some(items) = schema.get("items") {
        if let Some(arr) = instance.as_array() {
            for (i, value) in arr.iter().enumerate() {
                check(value, items, root, dir, &format!("{path}[{i}]"), errors);
            }
        }
    }
}
