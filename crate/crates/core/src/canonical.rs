//! Canonical JSON: object keys sorted, two-space indentation, trailing newline.
//!
//! Equal values always produce identical bytes, which is what golden files and
//! the gateway's byte-identical reads depend on.

use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn to_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // serde_json's Value map is a BTreeMap unless `preserve_order` is enabled,
    // so going through Value sorts every object.
    let value = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&value)?;
    out.push('\n');
    Ok(out)
}

pub fn to_compact<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    serde_json::to_string(&value)
}

pub fn from_str<T: DeserializeOwned>(s: &str) -> serde_json::Result<T> {
    serde_json::from_str(s)
}

/// Rounds to a fixed number of decimals for wire output.
pub(crate) fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let rounded = (value * scale).round() / scale;
    // avoid "-0.0"
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}
