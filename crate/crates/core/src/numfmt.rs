//! JSON helpers that write reals with 17 significant digits.
//!
//! `serde_json` on its own emits the shortest round-trip form. LM files are
//! meant to be diffable across machines and tools, so every parameter is
//! written in fixed 17-digit scientific notation instead.

use serde::ser::{Serialize, SerializeSeq, Serializer};
use serde_json::value::RawValue;

/// Formats a finite real as `d.dddddddddddddddde±x`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A real that serializes through [`format_f64`]. Only meaningful with
/// `serde_json`; non-finite values fall back to `null`.
#[derive(Clone, Copy, Debug)]
pub struct Real17(pub f64);

impl Serialize for Real17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(format_f64(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub fn vec<S: Serializer>(values: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    let mut seq = serializer.serialize_seq(Some(values.len()))?;
    for &v in values {
        seq.serialize_element(&Real17(v))?;
    }
    seq.end()
}

pub fn matrix<S: Serializer>(rows: &[Vec<f64>], serializer: S) -> Result<S::Ok, S::Error> {
    struct Row<'a>(&'a [f64]);
    impl Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
            vec(self.0, serializer)
        }
    }
    let mut seq = serializer.serialize_seq(Some(rows.len()))?;
    for row in rows {
        seq.serialize_element(&Row(row))?;
    }
    seq.end()
}

pub fn opt_matrix<S: Serializer>(
    rows: &Option<Vec<Vec<f64>>>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    match rows {
        Some(rows) => matrix(rows, serializer),
        None => serializer.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        let xs = [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0];
        let text = serde_json::to_string(&xs.iter().map(|&x| Real17(x)).collect::<Vec<_>>()).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, xs);
        assert!(text.contains("1.0000000000000001e-1"));
    }
}
