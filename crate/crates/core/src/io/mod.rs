//! Text formats: experiment configs (TOML), the `--grid` flag, and the
//! columnar field and bundle files. Floats are written in shortest
//! round-trip form, so decode∘encode is the identity and reruns are
//! byte-identical.

mod bundle;
mod config;
mod field;

pub use bundle::{decode_bundle, encode_bundle, write_bundle, BUNDLE_MAGIC};
pub use config::{parse_grid_flag, CheckConfig, ExperimentConfig, GridSpec, SimulationConfig};
pub use field::{decode_field, encode_field, FIELD_MAGIC};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Header line `tag key=value ...`.
pub(crate) fn header_line(tag: &str, pairs: &[(&str, String)]) -> String {
    let mut s = String::from(tag);
    for (k, v) in pairs {
        s.push(' ');
        s.push_str(k);
        s.push('=');
        s.push_str(v);
    }
    s.push('\n');
    s
}

pub(crate) fn parse_header(line_no: usize, line: &str, tag: &str) -> Result<BTreeMap<String, String>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::parse(line_no, format!("expected `{tag}` header")));
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::parse(line_no, format!("malformed entry `{kv}`")))
        })
        .collect()
}

pub(crate) fn field_of<T: std::str::FromStr>(map: &BTreeMap<String, String>, line: usize, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::parse(line, format!("missing `{key}`")))?
        .parse()
        .map_err(|_| Error::parse(line, format!("bad value for `{key}`")))
}

pub(crate) fn float_list(map: &BTreeMap<String, String>, line: usize, key: &str) -> Result<Vec<f64>> {
    let raw = map.get(key).ok_or_else(|| Error::parse(line, format!("missing `{key}`")))?;
    raw.split(',').map(|v| v.parse().map_err(|_| Error::parse(line, format!("bad number in `{key}`")))).collect()
}

pub(crate) fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn fmt_f(x: f64) -> String {
    format!("{x:e}")
}

pub(crate) fn parse_f(line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(line, "missing column"))?;
    tok.parse().map_err(|_| Error::parse(line, format!("bad number `{tok}`")))
}

pub(crate) fn parse_u(line: usize, tok: Option<&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(line, "missing column"))?;
    tok.parse().map_err(|_| Error::parse(line, format!("bad index `{tok}`")))
}

/// Pretty JSON for reports; non-finite numbers become `null`.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
}
