//! Line-oriented `key = value` text shared by run configs and dataset manifests.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits `text` into entries. `#` starts a comment, blank lines are skipped,
/// keys may not repeat.
pub fn parse(source: &str, text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(source, line, format!("expected key = value, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::parse(source, line, "empty key"));
        }
        if !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::parse(source, line, format!("invalid key {key:?}")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::parse(
                source,
                line,
                format!("duplicate key {key} (first set on line {})", prev.line),
            ));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(out)
}

/// Renders entries one per line, in order.
pub fn render<'a>(entries: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}
