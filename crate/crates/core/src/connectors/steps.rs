//! Daily step export import (CSV, header `date,steps`, dates `YYYY-MM-DD`).

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STEPS_CSV_HEADER: [&str; 2] = ["date", "steps"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepExportRow {
    pub date: NaiveDate,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepImport {
    pub rows: Vec<StepExportRow>,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Error)]
pub enum StepFileError {
    #[error("step export must start with the header `date,steps`, found `{0}`")]
    Header(String),
    #[error("step export could not be read: {0}")]
    Csv(#[from] csv::Error),
}

/// Parses a step export. Bad rows are reported and skipped; the rest of the
/// file still imports. A date repeated with the same count is kept once.
pub fn import_steps<R: Read>(reader: R) -> Result<StepImport, StepFileError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != STEPS_CSV_HEADER {
        return Err(StepFileError::Header(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut seen: BTreeMap<NaiveDate, u32> = BTreeMap::new();
    let mut out = StepImport::default();
    for record in csv.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        match parse_row(&record) {
            Ok(row) => match seen.get(&row.date) {
                Some(steps) if *steps == row.steps => {}
                Some(steps) => out.errors.push(RowError {
                    line,
                    message: format!("{} already imported with {steps} steps", row.date),
                }),
                None => {
                    seen.insert(row.date, row.steps);
                    out.rows.push(row);
                }
            },
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

fn parse_row(record: &csv::StringRecord) -> Result<StepExportRow, String> {
    if record.len() != 2 {
        return Err(format!("expected 2 fields, found {}", record.len()));
    }
    let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
        .map_err(|e| format!("bad date '{}': {e}", &record[0]))?;
    let steps: i64 = record[1]
        .parse()
        .map_err(|_| format!("bad step count '{}'", &record[1]))?;
    let steps = u32::try_from(steps).map_err(|_| format!("step count {steps} out of range"))?;
    Ok(StepExportRow { date, steps })
}
