use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use serde::Deserialize;

use super::{CategoryVocabulary, Dataset, Point, PointPattern};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct PointRow {
    sample_id: String,
    x: String,
    y: String,
    category: String,
}

#[derive(Deserialize)]
struct LabelRow {
    sample_id: String,
    label: String,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn row_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

fn parse_coord(path: &Path, line: u64, field: &str, raw: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("{field} is not a finite number: {raw:?}"))),
    }
}

/// Reads a points CSV (`sample_id,x,y,category`) and a labels CSV
/// (`sample_id,label`). Categories and class names are sorted by name; one
/// pattern per labelled sample, ordered by sample id.
pub fn load_csv(points_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (points_path, labels_path) = (points_path.as_ref(), labels_path.as_ref());

    let mut labels: BTreeMap<String, String> = BTreeMap::new();
    let mut rdr = reader(labels_path)?;
    let headers = rdr.headers().map_err(|e| csv_err(labels_path, e))?.clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(labels_path, e))?;
        let line = row_line(&rec);
        let row: LabelRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(labels_path, line, e.to_string()))?;
        if labels.insert(row.sample_id.clone(), row.label).is_some() {
            return Err(parse_err(
                labels_path,
                line,
                format!("sample {} labelled twice", row.sample_id),
            ));
        }
    }

    let mut raw: BTreeMap<String, Vec<(f64, f64, String)>> = BTreeMap::new();
    let mut categories = BTreeSet::new();
    let mut rdr = reader(points_path)?;
    let headers = rdr.headers().map_err(|e| csv_err(points_path, e))?.clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(points_path, e))?;
        let line = row_line(&rec);
        let row: PointRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(points_path, line, e.to_string()))?;
        let x = parse_coord(points_path, line, "x", &row.x)?;
        let y = parse_coord(points_path, line, "y", &row.y)?;
        if row.category.is_empty() {
            return Err(parse_err(points_path, line, "empty category"));
        }
        if !labels.contains_key(&row.sample_id) {
            return Err(parse_err(
                points_path,
                line,
                format!("sample {} has no label", row.sample_id),
            ));
        }
        categories.insert(row.category.clone());
        raw.entry(row.sample_id).or_default().push((x, y, row.category));
    }

    let vocabulary = CategoryVocabulary::sorted(categories);
    let class_names: Vec<String> = labels
        .values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut patterns = Vec::with_capacity(raw.len());
    for (sample_id, pts) in raw {
        let label_name = &labels[&sample_id];
        let label = class_names.binary_search(label_name).expect("collected above");
        let points = pts
            .into_iter()
            .map(|(x, y, c)| Point::new(x, y, vocabulary.id(&c).expect("collected above")))
            .collect();
        patterns.push(PointPattern {
            sample_id,
            points,
            label,
        });
    }
    Dataset::new(vocabulary, patterns, class_names)
}

/// Writes the two CSV files read by [`load_csv`].
pub fn write_csv(
    dataset: &Dataset,
    points_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (points_path, labels_path) = (points_path.as_ref(), labels_path.as_ref());
    let mut w = csv::Writer::from_path(points_path).map_err(|e| csv_write_err(points_path, e))?;
    w.write_record(["sample_id", "x", "y", "category"])
        .map_err(|e| csv_write_err(points_path, e))?;
    for p in &dataset.patterns {
        for q in &p.points {
            let cat = dataset.vocabulary.name(q.category).unwrap_or("?");
            w.write_record([p.sample_id.as_str(), &q.x.to_string(), &q.y.to_string(), cat])
                .map_err(|e| csv_write_err(points_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(points_path, e))?;

    let mut w = csv::Writer::from_path(labels_path).map_err(|e| csv_write_err(labels_path, e))?;
    w.write_record(["sample_id", "label"])
        .map_err(|e| csv_write_err(labels_path, e))?;
    for p in &dataset.patterns {
        w.write_record([p.sample_id.as_str(), &dataset.class_names[p.label]])
            .map_err(|e| csv_write_err(labels_path, e))?;
    }
    w.flush().map_err(|e| Error::io(labels_path, e))
}

fn csv_write_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{}: {other:?}", path.display())),
    }
}
