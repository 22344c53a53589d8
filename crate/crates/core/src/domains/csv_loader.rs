//! Tabular fairness datasets from CSV.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fairness::FairnessDataset;
use crate::data::split_indices;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Raw label values mapped to 1.
    pub label_positive: Vec<String>,
    /// Raw label values mapped to 0.
    pub label_negative: Vec<String>,
    pub protected_column: String,
    /// Raw protected values mapped to 1; everything else maps to 0.
    pub protected_positive: Vec<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_train_fraction() -> f64 {
    0.8
}

/// A loaded dataset with its train/test split; numeric features are scaled
/// with the training rows' minima and maxima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvDataset {
    pub data: FairnessDataset,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl CsvDataset {
    pub fn train_set(&self) -> FairnessDataset {
        self.data.subset(&self.train)
    }

    pub fn test_set(&self) -> FairnessDataset {
        self.data.subset(&self.test)
    }
}

enum Column {
    Numeric(usize),
    Categorical(usize, Vec<String>),
}

pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<CsvDataset> {
    if !(schema.train_fraction > 0.0 && schema.train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1], got {}",
            schema.train_fraction
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            reason: "empty file: no header row".into(),
        });
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_col = find(&schema.label_column)?;
    let protected_col = find(&schema.protected_column)?;
    let categorical: BTreeSet<usize> = schema
        .categorical_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;
    let ignored: BTreeSet<usize> = schema.ignore_columns.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut columns: Vec<Column> = (0..header.len())
        .filter(|i| *i != label_col && *i != protected_col && !ignored.contains(i))
        .map(|i| {
            if categorical.contains(&i) {
                Column::Categorical(i, Vec::new())
            } else {
                Column::Numeric(i)
            }
        })
        .collect();

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        for col in &mut columns {
            if let Column::Categorical(i, levels) = col {
                let v = &rec[*i];
                if !levels.iter().any(|l| l == v) {
                    levels.push(v.to_string());
                }
            }
        }
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            reason: "empty file: no data rows".into(),
        });
    }

    let mut labels = Vec::with_capacity(rows.len());
    let mut protected = Vec::with_capacity(rows.len());
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let label = &rec[label_col];
        let y = if schema.label_positive.iter().any(|v| v == label) {
            1
        } else if schema.label_negative.iter().any(|v| v == label) {
            0
        } else {
            return Err(Error::Parse {
                line: *line,
                reason: format!("label value `{label}` is not mapped by the schema"),
            });
        };
        labels.push(y);
        protected.push(u8::from(
            schema.protected_positive.iter().any(|v| v == &rec[protected_col]),
        ));
        let mut row = Vec::new();
        for col in &columns {
            match col {
                Column::Numeric(i) => {
                    let v: f64 = rec[*i].parse().map_err(|_| Error::Parse {
                        line: *line,
                        reason: format!("column `{}` value `{}` is not numeric", header[*i], &rec[*i]),
                    })?;
                    row.push(v);
                }
                Column::Categorical(i, levels) => {
                    row.extend(levels.iter().map(|l| f64::from(u8::from(l == &rec[*i]))));
                }
            }
        }
        raw.push(row);
    }

    let mut names = Vec::new();
    let mut numeric_slots = Vec::new();
    for col in &columns {
        match col {
            Column::Numeric(i) => {
                numeric_slots.push(names.len());
                names.push(header[*i].clone());
            }
            Column::Categorical(i, levels) => names.extend(levels.iter().map(|l| format!("{}={l}", header[*i]))),
        }
    }

    let (train, test) = split_indices(rows.len(), schema.train_fraction, schema.split_seed);
    for &slot in &numeric_slots {
        let (lo, hi) = train
            .iter()
            .map(|&r| raw[r][slot])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = hi - lo;
        for row in &mut raw {
            row[slot] = if span > 0.0 { (row[slot] - lo) / span } else { 0.0 };
        }
    }
    Ok(CsvDataset {
        data: FairnessDataset::new(names, raw, labels, protected)?,
        train,
        test,
    })
}
