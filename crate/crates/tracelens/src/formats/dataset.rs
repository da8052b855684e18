//! JSON-lines dataset files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracelens_core::dataset::{featurize, Dataset, Sample};

use crate::error::{CliError, Result};

/// How samples given as text are turned into feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextFeatures {
    pub dims: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    group: String,
    #[serde(default)]
    pair_id: Option<String>,
    label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
}

pub fn read_dataset(path: &Path, text: TextFeatures) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: Line = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if raw.label > 1 {
            return Err(parse_err(format!("label must be 0 or 1, got {}", raw.label)));
        }
        let (features, raw_text) = match (raw.features, raw.text) {
            (Some(f), None) => (f, None),
            (None, Some(t)) => (featurize(&t, text.dims, text.seed)?, Some(t)),
            _ => return Err(parse_err("exactly one of `text` or `features` is required".into())),
        };
        samples.push(Sample {
            id: raw.id,
            group: raw.group,
            pair_id: raw.pair_id,
            features,
            label: raw.label,
            raw_text,
        });
    }
    Dataset::new(samples).map_err(|e| CliError::Core(e.context(path.display().to_string())))
}

/// Writes one object per line. Samples that came from text keep their text.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in data.samples() {
        let line = Line {
            id: s.id.clone(),
            group: s.group.clone(),
            pair_id: s.pair_id.clone(),
            label: s.label,
            text: s.raw_text.clone(),
            features: if s.raw_text.is_some() { None } else { Some(s.features.clone()) },
        };
        let json = serde_json::to_string(&line).expect("sample serializes");
        writeln!(w, "{json}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
