//! Prediction records shared by every model that feeds the evaluator.

use std::fmt;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Why a greedy n-gram completion stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// The current context was never seen in training.
    H1,
    /// The emitted tokens closed the step object.
    H2,
    /// The emission cap was reached.
    Cap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::H1 => "h1",
            StopReason::H2 => "h2",
            StopReason::Cap => "cap",
        })
    }
}

/// One line of a predictions JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

/// Reads a JSONL stream, skipping blank lines. Errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| JsonlError::Line {
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), JsonlError> {
    for item in items {
        serde_json::to_writer(&mut writer, item)
            .map_err(|source| JsonlError::Line { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}
