//! Versioned run reports and CSV tables. Every float is written with 12
//! significant digits, and key order is fixed, so equal inputs give equal bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::error::{QcmiError, Result};

/// Bumped whenever a field is renamed, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANT_DIGITS: usize = 12;

/// `x` rounded to [`SIGNIFICANT_DIGITS`]; non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().expect("formatted float parses")
}

/// Shortest text that reads back as `round_sig(x)`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    Number::from_f64(round_sig(x)).expect("finite").to_string()
}

/// Rounds every float in a JSON tree; integers are untouched.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_floats(v))).collect::<Map<_, _>>()),
        other => other,
    }
}

/// One numeric claim checked by a run, tagged with the result it comes from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub anchor: String,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl Assertion {
    /// `value ≤ bound + tol`.
    pub fn at_most(anchor: &str, name: impl Into<String>, value: f64, bound: f64, tol: f64) -> Self {
        Self { anchor: anchor.into(), name: name.into(), value, bound, holds: value <= bound + tol }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorObject {
    pub kind: String,
    pub message: String,
}

impl ErrorObject {
    pub fn from_error(e: &QcmiError) -> Self {
        Self { kind: e.kind().into(), message: e.to_string() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: "validation".into(), message: message.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    BoundFailure,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::BoundFailure => 1,
            Status::Error => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: Value,
    pub status: Status,
    pub exit_code: i32,
    pub assertions: Vec<Assertion>,
    pub results: Value,
    pub errors: Vec<ErrorObject>,
}

impl Report {
    /// Status follows the errors first, then the assertions.
    pub fn new(command: &str, config: Value, assertions: Vec<Assertion>, results: Value, errors: Vec<ErrorObject>) -> Self {
        let status = if !errors.is_empty() {
            Status::Error
        } else if assertions.iter().all(|a| a.holds) {
            Status::Pass
        } else {
            Status::BoundFailure
        };
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            status,
            exit_code: status.exit_code(),
            assertions,
            results,
            errors,
        }
    }

    /// Pretty JSON with rounded floats and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::to_value(self).map_err(|e| QcmiError::Serialization(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&round_floats(v)).map_err(|e| QcmiError::Serialization(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    /// Row length must match the header.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    /// Header plus rows; a table without columns renders as nothing.
    pub fn to_csv(&self) -> Result<String> {
        if self.header.is_empty() {
            return Ok(String::new());
        }
        let err = |e: csv::Error| QcmiError::Serialization(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| QcmiError::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| QcmiError::Serialization(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Writes the report (JSON) or its table (CSV) to `path`, or to stdout.
pub fn emit_report(report: &Report, table: &Table, format: Format, path: Option<&Path>) -> Result<()> {
    let text = match format {
        Format::Json => report.to_json()?,
        Format::Csv => table.to_csv()?,
    };
    write_text(&text, path)
}

pub fn write_text(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| QcmiError::Io { path: p.to_path_buf(), source }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| QcmiError::Io { path: "<stdout>".into(), source })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(format_float(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_float(1e-20), "1e-20");
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn integers_are_not_rounded() {
        let v = round_floats(serde_json::json!({"n": 12345678901234u64, "x": 0.1234567890123456}));
        assert_eq!(v["n"], 12345678901234u64);
        assert_eq!(v["x"], 0.123456789012);
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(Table::new(&["t", "p"]).to_csv().unwrap(), "t,p\n");
    }

    #[test]
    fn hundred_rows_round_trip() {
        let mut t = Table::new(&["i", "x"]);
        for i in 0..100 {
            t.push(vec![i.into(), (i as f64 / 7.0).into()]);
        }
        let text = t.to_csv().unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 100);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[0].parse::<usize>().unwrap(), i);
            assert!((row[1].parse::<f64>().unwrap() - i as f64 / 7.0).abs() < 1e-10);
        }
    }

    #[test]
    fn status_follows_errors_then_bounds() {
        let ok = Assertion::at_most("Lemma 4.6", "x", 0.5, 1.0, 0.0);
        let bad = Assertion::at_most("Lemma 4.6", "x", 2.0, 1.0, 0.0);
        assert_eq!(Report::new("c", Value::Null, vec![ok.clone()], Value::Null, vec![]).exit_code, 0);
        assert_eq!(Report::new("c", Value::Null, vec![ok, bad.clone()], Value::Null, vec![]).exit_code, 1);
        let e = vec![ErrorObject::validation("bad")];
        assert_eq!(Report::new("c", Value::Null, vec![bad], Value::Null, e).exit_code, 2);
    }

    #[test]
    fn report_is_single_json_object() {
        let r = Report::new("attack", serde_json::json!({"seed": 1}), vec![], serde_json::json!({"key_match_prob": 1.0}), vec![]);
        let v: Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(v.is_object());
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys[0], "schema_version");
    }
}
