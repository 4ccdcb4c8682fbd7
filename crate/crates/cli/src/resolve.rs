//! Layered configuration: built-in defaults, then a JSON file, then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::UsageError;

/// Reads a JSON object from `path`.
pub fn read_config(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(UsageError(format!("config {} must hold a JSON object", path.display())).into());
    }
    Ok(v)
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn unknown_keys(base: &Value, patch: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(b), Value::Object(p)) = (base, patch) {
        for (k, v) in p {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match b.get(k) {
                None => out.push(path),
                Some(bv) => unknown_keys(bv, v, &path, out),
            }
        }
    }
}

/// Overlays `file` onto `base`. Keys that `base` does not have are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(base: T, file: Option<&Value>) -> anyhow::Result<T> {
    overlay_at(base, file, "")
}

/// As [`overlay`], for a config object found under the key path `prefix`.
pub fn overlay_at<T: Serialize + DeserializeOwned>(base: T, file: Option<&Value>, prefix: &str) -> anyhow::Result<T> {
    let Some(patch) = file else { return Ok(base) };
    let mut v = serde_json::to_value(&base)?;
    let mut unknown = Vec::new();
    unknown_keys(&v, patch, prefix, &mut unknown);
    if !unknown.is_empty() {
        return Err(UsageError(format!("unknown config keys: {}", unknown.join(", "))).into());
    }
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| UsageError(format!("config: {e}")).into())
}

/// Value of a key at the top level of an optional config object.
pub fn peek<T: DeserializeOwned>(file: Option<&Value>, key: &str) -> anyhow::Result<Option<T>> {
    match file.and_then(|v| v.get(key)) {
        Some(v) => Ok(Some(
            serde_json::from_value(v.clone()).map_err(|e| UsageError(format!("config key '{key}': {e}")))?,
        )),
        None => Ok(None),
    }
}

pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

pub fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    v.as_deref().ok_or_else(|| UsageError(format!("missing {flag}")).into())
}

pub fn print_resolved<T: Serialize>(command: &str, resolved: &T) -> anyhow::Result<()> {
    println!("resolved {command} config:\n{}", serde_json::to_string_pretty(resolved)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Inner {
        a: f64,
        b: Option<u32>,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Outer {
        x: u32,
        inner: Inner,
    }

    fn base() -> Outer {
        Outer {
            x: 1,
            inner: Inner { a: 0.5, b: None },
        }
    }

    #[test]
    fn nested_keys_merge_and_keep_siblings() {
        let got = overlay(base(), Some(&json!({"inner": {"b": 7}}))).unwrap();
        assert_eq!(
            got,
            Outer {
                x: 1,
                inner: Inner { a: 0.5, b: Some(7) }
            }
        );
    }

    #[test]
    fn unknown_key_is_named() {
        let err = overlay(base(), Some(&json!({"inner": {"c": 1}, "y": 2}))).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("inner.c") && msg.contains('y'), "{msg}");
    }

    #[test]
    fn wrong_type_is_a_usage_error() {
        let err = overlay(base(), Some(&json!({"x": "three"}))).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
