//! Artifact formatting: CSV tables and JSON summaries.

use serde::{Serialize, Serializer};

/// A reported number together with how it was obtained and how far to trust it.
#[derive(Clone, Debug, Serialize)]
pub struct Quantity {
    #[serde(serialize_with = "extended_f64")]
    pub value: f64,
    pub estimator: &'static str,
    /// Absolute tolerance the value is checked or quoted against; 0 for exact values.
    #[serde(serialize_with = "extended_f64")]
    pub tolerance: f64,
}

pub fn q(value: f64, estimator: &'static str, tolerance: f64) -> Quantity {
    Quantity {
        value,
        estimator,
        tolerance,
    }
}

/// Exact count or index.
pub fn exact(value: f64, estimator: &'static str) -> Quantity {
    q(value, estimator, 0.0)
}

/// JSON has no infinities; they are written as the strings `"inf"`, `"-inf"`, `"nan"`.
fn extended_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// 17 significant digits, enough for a lossless `f64` round trip.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV table whose first column is the time-like variable.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| fmt17(*v)))?;
        }
        Ok(w.into_inner()?)
    }
}

/// Component column names `prefix_1..prefix_n`.
pub fn columns(first: &str, prefix: &str, n: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=n).map(|i| format!("{prefix}_{i}")))
        .collect()
}

pub fn json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
