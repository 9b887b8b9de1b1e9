//! Out-of-process pool members.
//!
//! Protocol: the child receives the lookback as CSV on stdin (a header row of
//! channel names, then one row per step, missing values left empty) and the
//! horizon in the `ANCHORCAST_HORIZON` environment variable. It must print
//! exactly `H` CSV rows on stdout; the first field of each row is the target
//! forecast. Blank lines are ignored. A nonzero exit status is a failure.

use std::io::Write;
use std::process::{Command, Stdio};

use super::models::ForecastModel;
use crate::error::{Error, Result};
use crate::series::LookbackView;

pub const HORIZON_ENV: &str = "ANCHORCAST_HORIZON";

pub struct ExternalModel {
    name: String,
    command: String,
    args: Vec<String>,
}

impl ExternalModel {
    pub fn new(name: String, command: String, args: Vec<String>) -> Self {
        Self { name, command, args }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Model { model: self.id(), message: message.into() }
    }
}

/// Lookback as protocol CSV.
pub fn lookback_csv(view: &LookbackView<'_>) -> String {
    let layout = view.layout();
    let mut out = layout.names.join(",");
    out.push('\n');
    for row in view.matrix().rows() {
        let cells: Vec<String> = row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses plugin output into exactly `horizon` values.
pub fn parse_plugin_output(stdout: &str, horizon: usize) -> std::result::Result<Vec<f64>, String> {
    let mut values = Vec::with_capacity(horizon);
    for (i, line) in stdout.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let first = line.split(',').next().unwrap_or("").trim();
        let v: f64 = first.parse().map_err(|_| format!("line {}: '{first}' is not a number", i + 1))?;
        if !v.is_finite() {
            return Err(format!("line {}: non-finite value", i + 1));
        }
        values.push(v);
    }
    if values.len() != horizon {
        return Err(format!("expected {horizon} rows, got {}", values.len()));
    }
    Ok(values)
}

impl ForecastModel for ExternalModel {
    fn id(&self) -> String {
        format!("external({})", self.name)
    }

    fn min_lookback(&self) -> usize {
        1
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .env(HORIZON_ENV, view.horizon().to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.fail(format!("spawn '{}': {e}", self.command)))?;
        let input = lookback_csv(view);
        {
            let mut stdin = child.stdin.take().ok_or_else(|| self.fail("stdin unavailable"))?;
            // A plugin may exit without reading everything; that shows up as a
            // bad exit status or short output below.
            let _ = stdin.write_all(input.as_bytes());
        }
        let out = child.wait_with_output().map_err(|e| self.fail(e.to_string()))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(self.fail(format!("exited with {}: {}", out.status, stderr.trim())));
        }
        let stdout = String::from_utf8(out.stdout).map_err(|_| self.fail("stdout is not UTF-8"))?;
        parse_plugin_output(&stdout, view.horizon()).map_err(|m| self.fail(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Window;

    #[test]
    fn csv_leaves_missing_cells_empty() {
        let w = Window::univariate(&[1.0, f64::NAN, 2.5], None, 2).unwrap();
        assert_eq!(lookback_csv(&w.view()), "value\n1\n\n2.5\n");
    }

    #[test]
    fn output_parser_checks_row_count() {
        assert_eq!(parse_plugin_output("1.5\n\n2,extra\n", 2).unwrap(), vec![1.5, 2.0]);
        assert!(parse_plugin_output("1\n", 2).is_err());
        assert!(parse_plugin_output("x\n1\n", 2).is_err());
        assert!(parse_plugin_output("NaN\n1\n", 2).is_err());
    }
}
