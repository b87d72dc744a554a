use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRow {
    pub id: String,
    pub text: String,
    pub label: usize,
}

/// Labeled text, the input of an embedding extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTable {
    /// Label names in first-appearance order; `TextRow::label` indexes this.
    pub classes: Vec<String>,
    pub rows: Vec<TextRow>,
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Read one JSON object per line. The row id is the `id` field when present,
/// otherwise the 1-based line number. Blank lines are skipped.
pub fn import_jsonl(path: impl AsRef<Path>, text_field: &str, label_field: &str) -> Result<TextTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut classes: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut id_lines: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line).map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |name: &str| -> Result<String> {
            obj.get(name).and_then(scalar_to_string).ok_or_else(|| Error::Line {
                line: line_no,
                message: format!("missing or non-scalar field {name:?}"),
            })
        };
        let text = field(text_field)?;
        let label_name = field(label_field)?;
        let id = obj
            .get("id")
            .and_then(scalar_to_string)
            .unwrap_or_else(|| line_no.to_string());

        if let Some(&first_line) = id_lines.get(&id) {
            return Err(Error::DuplicateLineId {
                id,
                first_line,
                second_line: line_no,
            });
        }
        id_lines.insert(id.clone(), line_no);

        let label = *class_index.entry(label_name.clone()).or_insert_with(|| {
            classes.push(label_name);
            classes.len() - 1
        });
        rows.push(TextRow { id, text, label });
    }
    Ok(TextTable { classes, rows })
}
