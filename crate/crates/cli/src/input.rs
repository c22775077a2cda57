//! Reading tables and schemas, and encoding rows against a stored model.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use plcopula::data::{ColumnKind, DesignEncoder, RawColumn};
use plcopula::model_io::StoredModel;
use plcopula::{RawTable, RegressionDataset, Schema};

use crate::error::CliError;

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

pub fn read_schema(path: &Path) -> Result<Schema, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read schema {}: {e}", path.display())))?;
    text.parse().map_err(|e: plcopula::Error| CliError::Config(format!("{}: {e}", path.display())))
}

/// Numeric columns stay numeric; text columns become categorical with the
/// most frequent label (first seen on ties) as baseline.
pub fn infer_schema(raw: &RawTable, response: &str) -> Result<Schema, CliError> {
    if raw.numeric(response).is_none() {
        return Err(CliError::Data(format!("response column {response:?} missing or not numeric")));
    }
    let mut schema = Schema::new(response);
    for name in raw.names() {
        if name == response {
            continue;
        }
        schema = match raw.column(name) {
            Some(RawColumn::Numeric(_)) => schema.numeric(name.as_str()),
            Some(RawColumn::Categorical { labels, codes }) => {
                let mut counts: HashMap<u32, usize> = HashMap::new();
                for &c in codes {
                    *counts.entry(c).or_default() += 1;
                }
                let top = (0..labels.len() as u32)
                    .max_by_key(|c| (counts.get(c).copied().unwrap_or(0), std::cmp::Reverse(*c)))
                    .unwrap_or(0);
                schema.categorical(name.as_str(), labels[top as usize].as_str())
            }
            None => schema,
        };
    }
    Ok(schema)
}

/// Training table, its schema and the encoder resolved on it.
pub struct Training {
    pub dataset: RegressionDataset,
    pub encoder: DesignEncoder,
}

pub fn load_training(
    data: &Path,
    schema: Option<&Path>,
    response: &str,
    standardize: bool,
) -> Result<Training, CliError> {
    let (raw, schema) = match schema {
        Some(p) => {
            let schema = read_schema(p)?;
            (RawTable::from_csv_with_schema(open(data)?, &schema)?, schema)
        }
        None => {
            let raw = RawTable::from_csv(open(data)?)?;
            let schema = infer_schema(&raw, response)?.with_standardize(standardize);
            (raw, schema)
        }
    };
    if raw.n_rows() == 0 {
        return Err(CliError::Data(format!("{} has no rows", data.display())));
    }
    // The encoder logs its own warnings.
    let (encoder, _) = DesignEncoder::fit(&schema, &raw)?;
    let x = encoder.encode(&raw)?;
    let y = raw
        .numeric(&schema.response)
        .ok_or_else(|| CliError::Data(format!("response column {:?} missing or not numeric", schema.response)))?
        .to_vec();
    let dataset = RegressionDataset::new(x, y, encoder.feature_names())?.with_baselines(encoder.baseline_map());
    Ok(Training { dataset, encoder })
}

/// Schema used to read rows for a stored model. Models saved without one
/// take every feature as a raw numeric column.
fn stored_schema(stored: &StoredModel) -> Schema {
    stored.schema.clone().unwrap_or_else(|| {
        let mut s = Schema::new("y");
        for name in &stored.feature_names {
            s.columns.push(plcopula::data::ColumnSpec {
                name: name.clone(),
                kind: ColumnKind::Numeric {
                    center: Some(0.0),
                    scale: Some(1.0),
                },
            });
        }
        s
    })
}

/// Covariate rows encoded onto the model's features, plus the response
/// when the file has one.
pub fn load_rows(path: &Path, stored: &StoredModel) -> Result<(Array2<f64>, Option<Vec<f64>>), CliError> {
    let schema = stored_schema(stored);
    let raw = RawTable::from_csv_with_schema(open(path)?, &schema)?;
    for spec in &schema.columns {
        if spec.kind != ColumnKind::Ignore && raw.column(&spec.name).is_none() {
            return Err(CliError::Data(format!("{}: missing column {:?}", path.display(), spec.name)));
        }
    }
    if raw.n_rows() == 0 {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    let encoder = DesignEncoder::from_resolved(&schema)?;
    if encoder.feature_names() != stored.feature_names {
        return Err(CliError::Data(format!(
            "{}: encoded features do not match the model",
            path.display()
        )));
    }
    let x = encoder.encode(&raw)?;
    let y = raw.numeric(&schema.response).map(<[f64]>::to_vec);
    Ok((x, y))
}
