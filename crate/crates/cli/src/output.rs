//! CSV and JSON writers. Every number is printed with 12 significant digits
//! so reruns are byte-identical and diffs stay readable.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;

const DIGITS: i32 = 12;

/// Shortest rendering of `x` rounded to 12 significant digits, fixed
/// notation for moderate exponents and scientific otherwise.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-4..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// `x` rounded to 12 significant digits as a JSON number; non-finite
/// values become `null`.
pub fn num(x: f64) -> Value {
    fmt_num(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

/// Rounds every number inside `value`.
pub fn rounded(value: Value) -> Value {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(items) => Value::Array(items.into_iter().map(rounded).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

pub fn write_json(path: &Path, value: Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&rounded(value))? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Comma-separated table preceded by `#` comment lines.
pub struct Table {
    text: String,
    separator: &'static str,
}

impl Table {
    pub fn csv(comments: &[String], columns: &[String]) -> Self {
        Self::new(comments, columns, ",")
    }

    /// Whitespace-separated variant read directly by gnuplot.
    pub fn dat(comments: &[String], columns: &[String]) -> Self {
        Self::new(comments, columns, " ")
    }

    fn new(comments: &[String], columns: &[String], separator: &'static str) -> Self {
        let mut text = String::new();
        for c in comments {
            text.push_str("# ");
            text.push_str(c);
            text.push('\n');
        }
        if separator == " " {
            text.push_str("# ");
        }
        text.push_str(&columns.join(separator));
        text.push('\n');
        Self { text, separator }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(self.separator));
        self.text.push('\n');
    }

    pub fn numbers(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&x| fmt_num(x)).collect();
        self.row(&cells);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).with_context(|| format!("writing {}", path.display()))
    }
}
