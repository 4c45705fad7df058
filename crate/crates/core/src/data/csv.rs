use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::{Dataset, FieldSchema};
use crate::error::{Error, Result};

/// Loads a comma-separated file with a header row. Every column except
/// `label_column` becomes a categorical field. Quoted cells are rejected.
pub fn load_csv(path: &Path, label_column: &str, hash_buckets: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let ingest = |line: usize, msg: String| Error::Ingest { path: path.to_path_buf(), line, msg };

    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(ingest(1, "missing header row".into())),
    };
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if header.iter().any(|c| c.contains('"')) {
        return Err(ingest(1, "quoted cells are not supported".into()));
    }
    let label_pos = header
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| ingest(1, format!("label column {label_column:?} not in header")))?;
    if header.len() < 2 {
        return Err(ingest(1, "need at least one feature column".into()));
    }

    let mut schemas = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_pos)
        .map(|(_, name)| match hash_buckets {
            Some(b) => FieldSchema::hashed(*name, b),
            None => Ok(FieldSchema::new(*name)),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut labels = Vec::new();
    let mut indices = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(ingest(
                line_no,
                format!("expected {} columns, found {}", header.len(), cells.len()),
            ));
        }
        if cells.iter().any(|c| c.contains('"')) {
            return Err(ingest(line_no, "quoted cells are not supported".into()));
        }
        let label = match cells[label_pos].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(ingest(line_no, format!("non-binary label {other:?}"))),
        };
        labels.push(label);
        let features = cells.iter().enumerate().filter(|&(i, _)| i != label_pos);
        for (schema, (_, token)) in schemas.iter_mut().zip(features) {
            indices.push(schema.intern(token));
        }
    }
    if labels.is_empty() {
        return Err(ingest(2, "no data rows".into()));
    }
    Dataset::new(schemas, labels, indices)
}
