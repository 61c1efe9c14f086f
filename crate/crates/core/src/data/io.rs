use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LabeledSequence;
use crate::error::{Error, Result};

/// One manifest row: a CSV file holding a single labelled sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub record_id: String,
}

fn read_sequence(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut steps: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("column {}: not a finite number: {cell:?}", c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = steps.first() {
            if row.len() != first.len() {
                return Err(parse_err(format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        steps.push(row);
    }
    if steps.is_empty() || steps[0].is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: None,
            message: "no data rows".into(),
        });
    }
    Ok(steps)
}

/// Load a dataset from a JSON manifest of `{path, label, record_id}`
/// entries. Relative paths resolve against the manifest's directory.
pub fn load_csv(manifest_path: &Path, has_header: bool) -> Result<Vec<LabeledSequence>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut data: Vec<LabeledSequence> = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let steps = read_sequence(&path, has_header)?;
        if let Some(first) = data.first() {
            if steps[0].len() != first.dim() {
                return Err(Error::Parse {
                    path,
                    line: None,
                    message: format!("expected {} channels, found {}", first.dim(), steps[0].len()),
                });
            }
        }
        data.push(LabeledSequence {
            steps,
            label: entry.label,
            record_id: entry.record_id,
        });
    }
    Ok(data)
}

/// Write one headerless CSV per sequence plus `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, data: &[LabeledSequence]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::with_capacity(data.len());
    for (i, seq) in data.iter().enumerate() {
        let name = PathBuf::from(format!("seq_{i:05}.csv"));
        let path = dir.join(&name);
        let mut out = String::new();
        for x in &seq.steps {
            let row: Vec<String> = x.iter().map(f64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(&path, e))?;
        manifest.push(ManifestEntry {
            path: name,
            label: seq.label,
            record_id: seq.record_id.clone(),
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
