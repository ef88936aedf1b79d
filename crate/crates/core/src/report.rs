//! Flat `key = value` reports.
//!
//! Keys are dotted paths, written in insertion order. Floats use a fixed
//! scientific format so the same inputs always give the same bytes.

use std::fmt::{self, Display, Write};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    lines: Vec<(String, String)>,
}

/// Float formatting shared by every report.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.12e}")
    }
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        let v = value.to_string().replace('\n', " ");
        self.lines.push((key.into(), v));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, v: f64) {
        self.lines.push((key.into(), fmt_f64(v)));
    }

    pub fn push_opt_f64(&mut self, key: impl Into<String>, v: Option<f64>) {
        match v {
            Some(v) => self.push_f64(key, v),
            None => self.push(key, "none"),
        }
    }

    pub fn extend(&mut self, prefix: &str, other: &Report) {
        for (k, v) in &other.lines {
            self.lines.push((format!("{prefix}.{k}"), v.clone()));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.lines
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
