//! Deterministic artifact writers. Every floating value is printed with
//! 17 significant digits ({:.16e}), so rerunning a command with the same
//! config and seed reproduces artifacts byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// 17-significant-digit rendering used in every artifact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Minimal ordered-JSON builder: keys appear in insertion order and
/// numbers go through [`fmt_f64`].
pub struct JsonReport {
    buf: String,
    first: bool,
}

impl JsonReport {
    pub fn new() -> Self {
        Self {
            buf: String::from("{"),
            first: true,
        }
    }

    fn key(&mut self, key: &str) {
        if !self.first {
            self.buf.push(',');
        }
        self.first = false;
        let _ = write!(self.buf, "\n  \"{key}\": ");
    }

    pub fn number(mut self, key: &str, value: f64) -> Self {
        self.key(key);
        let _ = write!(self.buf, "\"{}\"", fmt_f64(value));
        self
    }

    pub fn integer(mut self, key: &str, value: u64) -> Self {
        self.key(key);
        let _ = write!(self.buf, "{value}");
        self
    }

    pub fn boolean(mut self, key: &str, value: bool) -> Self {
        self.key(key);
        let _ = write!(self.buf, "{value}");
        self
    }

    pub fn string(mut self, key: &str, value: &str) -> Self {
        self.key(key);
        let escaped = value.replace('\\', "\\\\").replace('"', "\\\"");
        let _ = write!(self.buf, "\"{escaped}\"");
        self
    }

    pub fn number_array(mut self, key: &str, values: &[f64]) -> Self {
        self.key(key);
        self.buf.push('[');
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.buf.push_str(", ");
            }
            let _ = write!(self.buf, "\"{}\"", fmt_f64(*v));
        }
        self.buf.push(']');
        self
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("\n}\n");
        self.buf
    }
}

/// Writes a CSV file with the given header and rows of 17-digit floats.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_render_with_17_significant_digits() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
        // Round trip.
        let x = std::f64::consts::PI;
        let back: f64 = fmt_f64(x).parse().unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn json_builder_is_ordered_and_stable() {
        let a = JsonReport::new()
            .number("alpha", 1.5)
            .integer("count", 3)
            .boolean("pass", true)
            .string("name", "x\"y")
            .finish();
        let b = JsonReport::new()
            .number("alpha", 1.5)
            .integer("count", 3)
            .boolean("pass", true)
            .string("name", "x\"y")
            .finish();
        assert_eq!(a, b);
        assert!(a.starts_with("{\n  \"alpha\""));
    }
}
