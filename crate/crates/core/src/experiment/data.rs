//! Dataset ingestion for the experiment harness.
//!
//! CSV files are read in file order. Columns whose every value parses as a
//! number become one numeric feature each; any other column is treated as
//! categorical and one-hot encoded, with one feature per distinct value in
//! sorted order, named `column=value`. Missing (empty) cells are rejected
//! everywhere. Schema errors name the offending 1-based data row and the
//! column.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataset::{SurvivalDataset, SurvivalRecord};
use crate::error::{Error, Result};

fn schema_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Load a survival dataset from CSV. `features: None` takes every column
/// except the time and event columns, in header order.
pub fn load_csv(
    path: &Path,
    time_column: &str,
    event_column: &str,
    features: Option<&[String]>,
) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Config(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();

    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema_err(0, name, "column not found in header"))
    };
    let time_idx = col_index(time_column)?;
    let event_idx = col_index(event_column)?;

    let feature_cols: Vec<usize> = match features {
        Some(names) => names.iter().map(|n| col_index(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != time_idx && i != event_idx)
            .collect(),
    };
    if feature_cols.contains(&time_idx) || feature_cols.contains(&event_idx) {
        return Err(Error::Config(
            "time/event columns cannot double as features".into(),
        ));
    }
    if feature_cols.is_empty() {
        return Err(Error::Config("no feature columns selected".into()));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            schema_err(i + 1, "-", format!("unreadable csv record: {e}"))
        })?;
        if record.len() != headers.len() {
            return Err(schema_err(
                i + 1,
                "-",
                format!("{} fields, header has {}", record.len(), headers.len()),
            ));
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{} has no data rows", path.display())));
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, value) in row.iter().enumerate() {
            if value.is_empty() {
                return Err(schema_err(i + 1, &headers[j], "missing value"));
            }
        }
    }

    // A feature column is numeric iff every value parses; otherwise it is
    // categorical and expands to sorted one-hot indicators.
    enum Encoding {
        Numeric,
        OneHot(Vec<String>),
    }
    let mut encodings = Vec::with_capacity(feature_cols.len());
    let mut feature_names = Vec::new();
    for &col in &feature_cols {
        let numeric = rows.iter().all(|row| row[col].parse::<f64>().is_ok());
        if numeric {
            feature_names.push(headers[col].clone());
            encodings.push(Encoding::Numeric);
        } else {
            let values: BTreeSet<String> = rows.iter().map(|row| row[col].clone()).collect();
            let values: Vec<String> = values.into_iter().collect();
            for v in &values {
                feature_names.push(format!("{}={v}", headers[col]));
            }
            encodings.push(Encoding::OneHot(values));
        }
    }

    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row_no = i + 1;
        let time: f64 = row[time_idx]
            .parse()
            .map_err(|_| schema_err(row_no, time_column, format!("not a number: {:?}", row[time_idx])))?;
        if !time.is_finite() || time <= 0.0 {
            return Err(schema_err(
                row_no,
                time_column,
                format!("time must be finite and > 0, got {time}"),
            ));
        }
        let event_raw: f64 = row[event_idx]
            .parse()
            .map_err(|_| schema_err(row_no, event_column, format!("not a number: {:?}", row[event_idx])))?;
        let event = if event_raw == 0.0 {
            false
        } else if event_raw == 1.0 {
            true
        } else {
            return Err(schema_err(
                row_no,
                event_column,
                format!("event indicator must be 0 or 1, got {}", row[event_idx]),
            ));
        };

        let mut x = Vec::with_capacity(feature_names.len());
        for (&col, encoding) in feature_cols.iter().zip(&encodings) {
            match encoding {
                Encoding::Numeric => {
                    let v: f64 = row[col].parse().expect("checked numeric above");
                    if !v.is_finite() {
                        return Err(schema_err(
                            row_no,
                            &headers[col],
                            format!("non-finite feature value {v}"),
                        ));
                    }
                    x.push(v);
                }
                Encoding::OneHot(values) => {
                    for v in values {
                        x.push(if &row[col] == v { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        records.push(SurvivalRecord {
            features: x,
            event,
            time,
        });
    }
    SurvivalDataset::new(records, feature_names)
}

/// Per-dataset forest sizing determined by cross-validated grid search:
/// (number of trees, max depth; `None` = unbounded).
/// Write a dataset back out as CSV: one column per feature (in
/// `feature_names` order) plus the named time and event columns. Values
/// use shortest round-trip decimals, so a reload is bit-exact.
pub fn write_csv(
    dataset: &SurvivalDataset,
    path: &Path,
    time_column: &str,
    event_column: &str,
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Config(format!("cannot write {}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(time_column);
    header.push(event_column);
    writer.write_record(&header).map_err(csv_err)?;
    for record in &dataset.records {
        let mut row: Vec<String> = record.features.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", record.time));
        row.push(if record.event { "1" } else { "0" }.to_string());
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn dataset_forest_defaults(name: &str) -> Option<(usize, Option<usize>)> {
    match name.to_ascii_lowercase().as_str() {
        "whas500" => Some((400, Some(1))),
        "gbsg2" => Some((700, Some(1))),
        "metabric" => Some((500, None)),
        "nwtco" => Some((600, Some(1))),
        "flchain" => Some((200, None)),
        "lombardyhf" => Some((1000, None)),
        "fed-tcga-brca" => Some((1000, None)),
        _ => None,
    }
}
