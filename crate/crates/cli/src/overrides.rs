//! `key=value` overrides applied to a JSON config before strict parsing.

use anyhow::{anyhow, bail, Result};
use serde_json::{Map, Value};

/// Sets `path` (dot-separated) in `root` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise.
pub fn apply(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        bail!("override `{assignment}` has an empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().expect("just set")
            }
            _ => bail!("override `{path}`: `{key}` is inside a non-object value"),
        };
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one key")
}
