//! Flat `key = value` text: one entry per line, `#` starts a comment.

use crate::error::{NcsrError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| NcsrError::Config(format!("line {line}: expected `key = value`, got `{body}`")))?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(NcsrError::Config(format!("line {line}: bad key `{key}`")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(NcsrError::Config(format!("line {line}: `{key}` already set on line {}", prev.line)));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn render(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn bad(key: &str, value: &str, what: &str) -> NcsrError {
    NcsrError::Config(format!("`{key}`: cannot parse `{value}` as {what}"))
}

pub fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

pub fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

pub fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(key, value, "a finite number"))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "`true` or `false`")),
    }
}

/// Comma-separated integers; an empty value is an empty list.
pub fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse_usize(key, s.trim())).collect()
}

pub fn render_list(items: &[usize]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Shortest text that parses back to the same `f64`.
pub fn render_f64(v: f64) -> String {
    format!("{v:?}")
}
