use std::collections::HashMap;

use csv::StringRecord;

use super::{IngestError, SourceFile};

/// A CSV file with a header row, columns addressed by name.
pub(crate) struct Table {
    pub file: String,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, StringRecord)>,
}

/// Column indices resolved once per file.
pub(crate) struct Columns(Vec<usize>);

impl Columns {
    pub fn get<'r>(&self, row: &'r StringRecord, i: usize) -> Option<&'r str> {
        row.get(self.0[i]).map(str::trim)
    }
}

impl Table {
    pub fn read(src: &SourceFile) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(src.bytes.as_slice());
        let headers = reader
            .headers()
            .map_err(|source| IngestError::Csv {
                file: src.name.clone(),
                source,
            })?
            .clone();
        let columns = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| IngestError::Csv {
                file: src.name.clone(),
                source,
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            rows.push((line, rec));
        }
        Ok(Self {
            file: src.name.clone(),
            columns,
            rows,
        })
    }

    pub fn columns(&self, names: &[&str]) -> Result<Columns, IngestError> {
        names
            .iter()
            .map(|n| {
                self.columns.get(*n).copied().ok_or_else(|| IngestError::UnknownColumn {
                    file: self.file.clone(),
                    column: (*n).to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Columns)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn rows(&self) -> impl Iterator<Item = &(u64, StringRecord)> {
        self.rows.iter()
    }
}

pub(crate) fn parse_f64(row: &StringRecord, cols: &Columns, i: usize, name: &str) -> Result<f64, String> {
    let raw = cols.get(row, i).ok_or_else(|| format!("missing field `{name}`"))?;
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("field `{name}` is not a number: `{raw}`"))?;
    if !v.is_finite() {
        return Err(format!("field `{name}` is not finite"));
    }
    Ok(v)
}

pub(crate) fn parse_i64(row: &StringRecord, cols: &Columns, i: usize, name: &str) -> Result<i64, String> {
    let raw = cols.get(row, i).ok_or_else(|| format!("missing field `{name}`"))?;
    raw.parse::<i64>()
        .or_else(|_| {
            // some exports write integral ids as `12.0`
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && v.is_finite())
                .map(|v| v as i64)
                .ok_or(())
        })
        .map_err(|_| format!("field `{name}` is not an integer: `{raw}`"))
}

pub(crate) fn parse_str(row: &StringRecord, cols: &Columns, i: usize, name: &str) -> Result<String, String> {
    cols.get(row, i)
        .map(str::to_string)
        .ok_or_else(|| format!("missing field `{name}`"))
}
