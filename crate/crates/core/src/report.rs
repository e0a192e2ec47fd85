//! Report files: one versioned header line, then pretty-printed JSON.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const REPORT_FORMAT: &str = "carl-report v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("expected header `{REPORT_FORMAT} {expected}`, found `{found}`")]
    Header { expected: String, found: String },
}

pub fn render<T: Serialize>(kind: &str, body: &T) -> Result<String, ReportError> {
    Ok(format!("{REPORT_FORMAT} {kind}\n{}\n", serde_json::to_string_pretty(body)?))
}

pub fn parse<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, ReportError> {
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    let expected = format!("{REPORT_FORMAT} {kind}");
    if header.trim_end() != expected {
        return Err(ReportError::Header {
            expected: kind.to_string(),
            found: header.to_string(),
        });
    }
    Ok(serde_json::from_str(body)?)
}

pub fn write<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), ReportError> {
    Ok(fs::write(path, render(kind, body)?)?)
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, ReportError> {
    parse(kind, &fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn round_trip_and_header_check() {
        let body = BTreeMap::from([("ktau".to_string(), 0.5)]);
        let text = render("train", &body).unwrap();
        assert!(text.starts_with("carl-report v1 train\n"));
        assert_eq!(parse::<BTreeMap<String, f64>>("train", &text).unwrap(), body);
        assert!(matches!(parse::<BTreeMap<String, f64>>("eval", &text), Err(ReportError::Header { .. })));
    }
}
