//! Candidate response grammar.
//!
//! A response is free-form reasoning followed by a fenced block with one
//! comma-separated row per horizon step (one field per target channel). The
//! fence may carry a language tag. A JSON object `{"values": [...]}`, fenced
//! or bare, is accepted as an alternative. When several fenced blocks are
//! present the last one is used.

use serde::Deserialize;

#[derive(Deserialize)]
struct ValuesObject {
    values: Vec<f64>,
}

fn parse_json(text: &str) -> Option<Result<Vec<f64>, String>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    Some(
        serde_json::from_str::<ValuesObject>(&text[start..=end])
            .map(|o| o.values)
            .map_err(|e| format!("invalid JSON forecast object: {e}")),
    )
}

fn parse_rows(block: &str) -> Result<Vec<f64>, String> {
    let mut values = vec![];
    for (i, line) in block.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 1 {
            return Err(format!("row {} has {} fields, expected 1", i + 1, fields.len()));
        }
        let v: f64 = fields[0].parse().map_err(|_| format!("row {}: '{}' is not a number", i + 1, fields[0]))?;
        values.push(v);
    }
    Ok(values)
}

/// The last fenced block, without its language tag line.
fn last_fenced_block(text: &str) -> Option<&str> {
    let parts: Vec<&str> = text.split("```").collect();
    if parts.len() < 3 {
        return None;
    }
    let idx = if parts.len() % 2 == 1 { parts.len() - 2 } else { parts.len() - 3 };
    let block = parts[idx];
    let (first, rest) = block.split_once('\n').unwrap_or((block, ""));
    let tag = first.trim();
    if tag.chars().all(|c| c.is_ascii_alphabetic()) {
        Some(rest)
    } else {
        Some(block)
    }
}

/// Values extracted from a response, before the length and finiteness checks.
fn extract(text: &str) -> Result<Vec<f64>, String> {
    if let Some(block) = last_fenced_block(text) {
        if block.trim_start().starts_with('{') {
            return parse_json(block).unwrap_or_else(|| Err("unterminated JSON object".into()));
        }
        return parse_rows(block);
    }
    parse_json(text).unwrap_or_else(|| Err("no fenced forecast block or JSON values object".into()))
}

/// Parses a candidate into exactly `horizon` finite values.
pub fn parse_forecast(text: &str, horizon: usize) -> Result<Vec<f64>, String> {
    let values = extract(text)?;
    if values.len() != horizon {
        return Err(format!("expected {horizon} values, found {}", values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(format!("value {} is not finite", i + 1));
    }
    Ok(values)
}

/// Renders values in the fenced-row grammar. `{}` formatting round-trips
/// every finite `f64` exactly.
pub fn render_block(values: &[f64]) -> String {
    let mut s = String::from("```csv\n");
    for v in values {
        s.push_str(&format!("{v}\n"));
    }
    s.push_str("```\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_rows_parse() {
        let text = "Reasoning here.\n```csv\n1.5\n2\n-3e2\n```\n";
        assert_eq!(parse_forecast(text, 3).unwrap(), vec![1.5, 2.0, -300.0]);
    }

    #[test]
    fn untagged_fence_and_last_block_win() {
        let text = "example:\n```\n9\n```\nfinal:\n```\n1\n2\n```";
        assert_eq!(parse_forecast(text, 2).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn json_alternatives_parse() {
        assert_eq!(parse_forecast("```json\n{\"values\": [1, 2]}\n```", 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(parse_forecast("the answer is {\"values\": [4.5]}", 1).unwrap(), vec![4.5]);
        assert!(parse_forecast("{\"values\": [1, \"x\"]}", 2).is_err());
    }

    #[test]
    fn length_and_content_errors() {
        assert!(parse_forecast("```\n1\n2\n```", 3).unwrap_err().contains("expected 3"));
        assert!(parse_forecast("```\n1,2\n```", 1).is_err());
        assert!(parse_forecast("```\nabc\n```", 1).is_err());
        assert!(parse_forecast("```\nNaN\n```", 1).is_err());
        assert!(parse_forecast("no numbers here", 1).is_err());
    }

    #[test]
    fn rendered_block_round_trips_exactly() {
        let v = vec![0.1 + 0.2, 1e-300, -123456.789, 50.0];
        assert_eq!(parse_forecast(&render_block(&v), 4).unwrap(), v);
    }
}
