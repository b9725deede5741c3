//! Text configuration: either a JSON object or `key = value` lines.
//!
//! In the line format, `#` starts a comment and each value is read as JSON
//! when it parses as JSON, otherwise as a bare string. Both forms decode into
//! the same serde structs.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub fn parse_text(text: &str) -> Result<Value> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    let mut map = Map::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::BadConfig(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::BadConfig(format!("line {}: empty key", n + 1)));
        }
        let value = value.trim();
        let parsed =
            serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        if map.insert(key.to_string(), parsed).is_some() {
            return Err(Error::BadConfig(format!("duplicate key `{key}`")));
        }
    }
    Ok(Value::Object(map))
}

pub fn from_text<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_value(parse_text(text)?).map_err(|e| Error::BadConfig(e.to_string()))
}

/// Renders a struct as `key = value` lines with JSON-encoded values.
pub fn to_text<T: Serialize>(value: &T) -> Result<String> {
    let Value::Object(map) = serde_json::to_value(value)? else {
        return Err(Error::BadConfig("only structs can be written as key = value".into()));
    };
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(&format!("{k} = {v}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Demo {
        name: String,
        size: (usize, usize),
        rate: f64,
    }

    #[test]
    fn both_syntaxes_agree() {
        let kv = "# demo\nname = street\nsize = [4, 1]\nrate = 0.5\n";
        let json = r#"{"name": "street", "size": [4, 1], "rate": 0.5}"#;
        let a: Demo = from_text(kv).unwrap();
        let b: Demo = from_text(json).unwrap();
        assert_eq!(a, b);
        let again: Demo = from_text(&to_text(&a).unwrap()).unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(parse_text("just words"), Err(Error::BadConfig(_))));
        assert!(matches!(parse_text("a = 1\na = 2"), Err(Error::BadConfig(_))));
    }
}
