//! Plain-text model checkpoints.
//!
//! Format: a version line, `meta key=value` lines describing the
//! architecture, then for each parameter a `param <name> <rows> <cols>`
//! line followed by one line of values. Floats are printed in Rust's
//! shortest round-trip form, so save → load reproduces values exactly.

use std::fs;
use std::path::Path;

use super::linalg::Mat;
use super::tape::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &str = "crowdes-net v1";

pub fn save_params(path: &Path, meta: &[(String, String)], store: &ParamStore) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (k, v) in meta {
        debug_assert!(!k.contains(char::is_whitespace) && !v.contains(char::is_whitespace));
        out.push_str(&format!("meta {k}={v}\n"));
    }
    for (name, m) in store.entries_for_save() {
        out.push_str(&format!("param {name} {} {}\n", m.rows, m.cols));
        let line: Vec<String> = m.data.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<(Vec<(String, String)>, Vec<(String, Mat)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(Error::parse(path, 1, "not a model checkpoint")),
    }
    let mut meta = Vec::new();
    let mut params = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, "bad meta line"))?;
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("param ") {
            let mut it = rest.split_whitespace();
            let name = it
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "missing parameter name"))?;
            let rows: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(path, lineno, "bad row count"))?;
            let cols: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(path, lineno, "bad column count"))?;
            let (vidx, vline) = lines
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "missing value line"))?;
            let data: Vec<f64> = vline
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, vidx + 1, "bad parameter value"))?;
            if data.len() != rows * cols {
                return Err(Error::parse(
                    path,
                    vidx + 1,
                    format!("expected {} values, found {}", rows * cols, data.len()),
                ));
            }
            params.push((name.to_string(), Mat::from_vec(rows, cols, data)));
        } else {
            return Err(Error::parse(path, lineno, "unrecognized checkpoint line"));
        }
    }
    Ok((meta, params))
}

/// Convenience: look up one meta key.
pub fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn meta_parse<T: std::str::FromStr>(
    meta: &[(String, String)],
    key: &str,
    path: &Path,
) -> Result<T> {
    meta_value(meta, key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, format!("checkpoint meta `{key}` missing or invalid")))
}
