//! CSV I/O. Floats are written with 17 significant digits so they round-trip.

use std::io::{Read, Write};

use super::LabeledDataset;
use crate::error::{Error, Result};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("row {row}: bad number {field:?}")))
}

fn parse_u(field: &str, row: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("row {row}: bad integer {field:?}")))
}

fn feature_header(dim: usize) -> impl Iterator<Item = String> {
    (0..dim).map(|j| format!("f{j}"))
}

/// Columns `id,true_label,noisy_label,f0,...`.
pub fn write_dataset_csv<W: Write>(writer: W, dataset: &LabeledDataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "true_label".into(), "noisy_label".into()];
    header.extend(feature_header(dataset.dim()));
    out.write_record(&header)?;
    let truth = dataset.truth();
    for i in 0..dataset.len() {
        let mut row = vec![
            dataset.ids()[i].to_string(),
            truth.label(i).to_string(),
            dataset.noisy_labels()[i].to_string(),
        ];
        row.extend(dataset.features()[i].iter().map(|&v| fmt(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the format of [`write_dataset_csv`]; `n_classes` defaults to the largest label + 1.
pub fn read_dataset_csv<R: Read>(reader: R, n_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers()?.clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "true_label" || &header[2] != "noisy_label" {
        return Err(Error::Format("expected header id,true_label,noisy_label,f0,...".into()));
    }
    let (mut ids, mut features, mut noisy, mut truth) = (vec![], vec![], vec![], vec![]);
    for (row, record) in input.records().enumerate() {
        let record = record?;
        ids.push(parse_u(&record[0], row)?);
        truth.push(parse_u(&record[1], row)?);
        noisy.push(parse_u(&record[2], row)?);
        features.push(record.iter().skip(3).map(|f| parse_f(f, row)).collect::<Result<Vec<_>>>()?);
    }
    let k = n_classes.unwrap_or_else(|| truth.iter().chain(&noisy).max().map_or(0, |m| m + 1));
    LabeledDataset::from_parts(ids, features, noisy, truth, k)
}

/// Columns `id,f0,...` (OOD sets and exported features).
pub fn write_features_csv<W: Write>(writer: W, ids: &[usize], features: &[Vec<f64>]) -> Result<()> {
    if ids.len() != features.len() {
        return Err(Error::Dimension { context: "feature ids", expected: features.len(), got: ids.len() });
    }
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(feature_header(features.first().map_or(0, Vec::len)));
    out.write_record(&header)?;
    for (id, row) in ids.iter().zip(features) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|&v| fmt(v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut input = csv::Reader::from_reader(reader);
    if input.headers()?.get(0) != Some("id") {
        return Err(Error::Format("expected header id,f0,...".into()));
    }
    let (mut ids, mut features) = (vec![], vec![]);
    for (row, record) in input.records().enumerate() {
        let record = record?;
        ids.push(parse_u(&record[0], row)?);
        features.push(record.iter().skip(1).map(|f| parse_f(f, row)).collect::<Result<Vec<_>>>()?);
    }
    Ok((ids, features))
}
