//! CSV ingestion: first column is the time index (integer or ISO-8601), the
//! rest are real-valued channels. A header row is mandatory and channel roles
//! are supplied by the caller.

use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{ChannelLayout, Frequency, TimeSeries};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRoles {
    pub target: String,
    #[serde(default)]
    pub exogenous: Vec<String>,
    /// Optional regime label column, kept out of the series and only used for
    /// cluster purity reports.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub channels: Vec<ChannelDropout>,
    pub ignored_columns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelDropout {
    pub name: String,
    pub role: String,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub series: TimeSeries,
    pub labels: Option<Vec<String>>,
    pub report: IngestReport,
}

pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(i) = s.parse::<i64>() {
        return Some(i);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn parse_value(raw: &str, row: usize, col: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Ingest(format!("row {row}, column {col}: cannot parse {s:?} as a number")))
}

fn infer_frequency(ts: &[i64]) -> Frequency {
    match ts {
        [a, b, ..] => Frequency(format!("{}", b - a)),
        _ => Frequency::default(),
    }
}

pub fn read_csv<R: Read>(reader: R, roles: &ChannelRoles) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Ingest(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.len() < 2 {
        return Err(Error::Ingest("need a timestamp column and at least one channel".into()));
    }
    // A header row made of a timestamp and numbers is data, not a header.
    if parse_timestamp(&headers[0]).is_some() && headers[1..].iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::Ingest("missing header row".into()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .skip(1)
            .position(|h| h == name)
            .map(|i| i + 1)
            .ok_or_else(|| Error::Ingest(format!("column {name:?} not found in header")))
    };
    let target_col = find(&roles.target)?;
    let exo_cols = roles.exogenous.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let label_col = roles.label.as_deref().map(find).transpose()?;
    let mut used = vec![target_col];
    used.extend(&exo_cols);
    let ignored_columns = headers
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(i, _)| !used.contains(i) && Some(*i) != label_col)
        .map(|(_, h)| h.clone())
        .collect();

    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| Error::Ingest(format!("row {row}: {e}")))?;
        let ts = record.get(0).and_then(parse_timestamp).ok_or_else(|| {
            Error::Ingest(format!("row {row}: unparseable timestamp {:?}", record.get(0).unwrap_or("")))
        })?;
        timestamps.push(ts);
        for &c in &used {
            data.push(parse_value(record.get(c).unwrap_or(""), row, &headers[c])?);
        }
        if let (Some(l), Some(c)) = (labels.as_mut(), label_col) {
            l.push(record.get(c).unwrap_or("").trim().to_string());
        }
    }
    let rows = timestamps.len();
    let values = Array2::from_shape_vec((rows, used.len()), data).map_err(|e| Error::Ingest(e.to_string()))?;
    let names: Vec<String> = used.iter().map(|&c| headers[c].clone()).collect();
    let layout = ChannelLayout::new(names, 0, (1..used.len()).collect())?;
    let frequency = infer_frequency(&timestamps);
    let series = TimeSeries::new(timestamps, values, layout, frequency).map_err(|e| Error::Ingest(e.to_string()))?;
    let channels = series
        .dropout_by_channel()
        .into_iter()
        .enumerate()
        .map(|(i, dropout)| ChannelDropout {
            name: series.layout().names[i].clone(),
            role: if i == 0 { "target".into() } else { "exogenous".into() },
            dropout,
        })
        .collect();
    Ok(Ingested { series, labels, report: IngestReport { rows, channels, ignored_columns } })
}

pub fn read_csv_file(path: &std::path::Path, roles: &ChannelRoles) -> Result<Ingested> {
    let f = std::fs::File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    read_csv(f, roles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epf_roles() -> ChannelRoles {
        ChannelRoles {
            target: "price".into(),
            exogenous: vec!["generation".into(), "load".into()],
            label: None,
        }
    }

    #[test]
    fn epf_shaped_csv() {
        let csv = "date,price,generation,load\n\
                   2020-01-01 00:00:00,30.1,100,200\n\
                   2020-01-01 01:00:00,31.5,101,210\n\
                   2020-01-01 02:00:00,29.0,99,205\n";
        let ing = read_csv(csv.as_bytes(), &epf_roles()).unwrap();
        let layout = ing.series.layout();
        assert_eq!(layout.target, 0);
        assert_eq!(layout.exogenous, vec![1, 2]);
        assert_eq!(ing.series.len(), 3);
        assert_eq!(ing.series.frequency().0, "3600");
    }

    #[test]
    fn missing_header_is_rejected() {
        let csv = "0,1.0,2.0,3.0\n1,1.0,2.0,3.0\n";
        assert!(matches!(read_csv(csv.as_bytes(), &epf_roles()), Err(Error::Ingest(_))));
    }

    #[test]
    fn blanks_count_as_dropout() {
        let mut csv = String::from("t,price\n");
        for i in 0..100 {
            if i % 20 == 3 {
                csv.push_str(&format!("{i},\n"));
            } else {
                csv.push_str(&format!("{i},{}.5\n", i));
            }
        }
        let roles = ChannelRoles { target: "price".into(), exogenous: vec![], label: None };
        let ing = read_csv(csv.as_bytes(), &roles).unwrap();
        assert!((ing.report.channels[0].dropout - 0.05).abs() < 1e-12);
        assert!(ing.series.target()[3].is_nan());
    }

    #[test]
    fn label_column_kept_aside() {
        let csv = "t,y,regime\n0,1.0,a\n1,2.0,b\n";
        let roles = ChannelRoles { target: "y".into(), exogenous: vec![], label: Some("regime".into()) };
        let ing = read_csv(csv.as_bytes(), &roles).unwrap();
        assert_eq!(ing.series.layout().channel_count(), 1);
        assert_eq!(ing.labels.unwrap(), vec!["a", "b"]);
    }
}
