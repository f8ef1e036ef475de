//! Per-suite results and their serialization.

use std::fmt::Write as _;
use std::time::Duration;

use serde_json::{json, Map, Value};

/// One pass/fail item of a suite.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    /// Signed margin where one exists (positive means inside the bound).
    pub slack: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn new(id: &str, passed: bool, slack: Option<f64>, detail: impl Into<String>) -> Self {
        Self { id: id.to_string(), passed, slack, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct ReportRecord {
    pub suite: String,
    pub config_hash: String,
    pub checks: Vec<Check>,
    /// Fitted constants, in insertion order.
    pub constants: Vec<(String, f64)>,
    /// Suite-specific structured output, in insertion order.
    pub details: Vec<(String, Value)>,
    /// Kept out of every written artifact so reruns stay byte-identical.
    pub wall_time: Duration,
}

impl ReportRecord {
    pub fn new(suite: &str, config_hash: &str) -> Self {
        Self {
            suite: suite.to_string(),
            config_hash: config_hash.to_string(),
            checks: Vec::new(),
            constants: Vec::new(),
            details: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn constant(&mut self, name: &str, value: f64) {
        self.constants.push((name.to_string(), value));
    }

    pub fn detail(&mut self, name: &str, value: Value) {
        self.details.push((name.to_string(), value));
    }

    pub fn to_json(&self) -> Value {
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "status": if c.passed { "pass" } else { "fail" },
                    "slack": c.slack.map(num),
                    "detail": c.detail,
                })
            })
            .collect();
        let mut constants = Map::new();
        for (k, v) in &self.constants {
            constants.insert(k.clone(), num(*v));
        }
        let mut v = json!({
            "suite": self.suite,
            "config_hash": self.config_hash,
            "status": if self.passed() { "pass" } else { "fail" },
            "checks": checks,
            "constants": constants,
        });
        if !self.details.is_empty() {
            let d: Map<String, Value> = self.details.iter().cloned().collect();
            v["details"] = Value::Object(d);
        }
        v
    }
}

/// JSON number, or a string for values JSON cannot hold.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(format!("{x}")))
}

/// The whole-run summary.
pub fn summary_json(config_hash: &str, records: &[ReportRecord]) -> String {
    let v = json!({
        "config_hash": config_hash,
        "status": if records.iter().all(|r| r.passed()) { "pass" } else { "fail" },
        "suites": records.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string_pretty(&v).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Small CSV builder; values use the shortest round-trip representation.
pub struct Csv {
    text: String,
    columns: usize,
}

pub enum Cell<'a> {
    F(f64),
    I(u64),
    S(&'a str),
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text, columns: header.len() }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.columns, "CSV row width");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(x) => write!(self.text, "{x:?}").unwrap(),
                Cell::I(x) => write!(self.text, "{x}").unwrap(),
                Cell::S(x) => self.text.push_str(x),
            }
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_has_no_wall_time() {
        let mut r = ReportRecord::new("spectrum", "abc");
        r.wall_time = Duration::from_secs(3);
        r.check(Check::new("x", true, Some(0.5), ""));
        r.constant("C", 2.0);
        let s = summary_json("abc", &[r]);
        assert!(!s.contains("wall"));
        assert!(s.contains("\"C\": 2.0"));
    }

    #[test]
    fn csv_formatting() {
        let mut c = Csv::new(&["a", "b", "c"]);
        c.row(&[Cell::F(0.1), Cell::I(3), Cell::S("x")]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "a,b,c\n0.1,3,x\n");
    }
}
