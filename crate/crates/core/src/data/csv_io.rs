use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::error::{Error, Result};

/// Which column of a CSV holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Bare integers are column indices; anything else is a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(idx) => LabelColumn::Index(idx),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Reads a comma-separated file into a [`Dataset`].
///
/// Integer labels are used as-is (`C = max + 1`); otherwise label strings are
/// mapped to classes in order of first appearance. Row numbers in errors are
/// 1-based file lines.
pub fn load_csv(path: &Path, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, label, has_header)
}

pub(crate) fn parse_csv(text: &str, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        records.push((line, rec));
    }
    let mut records = records.into_iter();

    let header = if has_header {
        match records.next() {
            Some((_, h)) => Some(h.iter().map(str::to_string).collect::<Vec<_>>()),
            None => return Err(Error::EmptyDataset),
        }
    } else {
        None
    };
    let body: Vec<_> = records.collect();
    let width = match (&header, body.first()) {
        (_, None) => return Err(Error::EmptyDataset),
        (Some(h), _) => h.len(),
        (None, Some((_, r))) => r.len(),
    };

    let label_idx = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::InvalidArgument(format!(
                "label column {i} out of range for {width} columns"
            )))
        }
        LabelColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::InvalidArgument(format!("no column named {name:?}")))?,
    };
    if width < 2 {
        return Err(Error::InvalidArgument(
            "need at least one feature column besides the label".into(),
        ));
    }

    let p = width - 1;
    let n = body.len();
    let mut values = Vec::with_capacity(n * p);
    let mut raw_labels = Vec::with_capacity(n);
    for (line, rec) in &body {
        if rec.len() != width {
            return Err(Error::Parse {
                row: *line,
                column: None,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: *line,
                column: Some(j),
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: *line,
                    column: Some(j),
                    message: format!("{cell:?} is not finite"),
                });
            }
            values.push(v);
        }
    }

    let (labels, n_classes, class_names) = map_labels(&raw_labels);
    let feature_names = match header {
        Some(h) => h
            .into_iter()
            .enumerate()
            .filter_map(|(j, name)| (j != label_idx).then_some(name))
            .collect(),
        None => (0..width)
            .filter(|&j| j != label_idx)
            .map(|j| format!("x{j}"))
            .collect(),
    };
    let features = DMatrix::from_row_slice(n, p, &values);
    Dataset::with_names(
        features,
        labels,
        n_classes.max(2),
        feature_names,
        class_names,
    )
}

fn map_labels(raw: &[String]) -> (Vec<usize>, usize, Option<Vec<String>>) {
    let ints: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    if let Some(ints) = ints {
        let c = ints.iter().max().map_or(0, |m| m + 1);
        return (ints, c, None);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let labels = raw
        .iter()
        .map(|s| {
            *index.entry(s.as_str()).or_insert_with(|| {
                names.push(s.clone());
                names.len() - 1
            })
        })
        .collect();
    let c = names.len();
    (labels, c, Some(names))
}

/// Writes features plus a trailing integer `label` column.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{other:?}")),
    })?;
    let mut header: Vec<String> = dataset.feature_names().to_vec();
    header.push("label".into());
    w.write_record(&header)?;
    let x = dataset.features();
    for i in 0..dataset.n() {
        let mut row: Vec<String> = (0..dataset.p()).map(|j| x[(i, j)].to_string()).collect();
        row.push(dataset.labels()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
