//! Text encoding helpers shared by the on-disk formats.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! `parse(format(x))` reproduces `x` bit for bit for every finite value.

use std::fmt::Write as _;
use std::str::FromStr;

pub(crate) fn join_floats(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
    out
}

pub(crate) fn parse_floats(field: &str) -> Result<Vec<f64>, String> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|s| s.parse::<f64>().map_err(|e| format!("bad float {s:?}: {e}")))
        .collect()
}

pub(crate) fn parse_num<T: FromStr>(field: &str, what: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    field
        .parse::<T>()
        .map_err(|e| format!("bad {what} {field:?}: {e}"))
}

/// Parses `key=value` and checks the key.
pub(crate) fn parse_kv<T: FromStr>(token: &str, key: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    match token.split_once('=') {
        Some((k, v)) if k == key => parse_num(v, key),
        _ => Err(format!("expected {key}=<value>, got {token:?}")),
    }
}
