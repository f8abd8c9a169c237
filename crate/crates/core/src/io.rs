//! CSV formats: long-form landmark files, label files and numeric tables.
//!
//! Landmark files have the header `specimen_id,label,landmark_index,x,y,z`;
//! rows of one specimen are contiguous and `landmark_index` runs `0..N`.
//! Floats are written with 17 significant digits so they parse back exactly.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Result, ShapeError};
use crate::landmarks::LandmarkConfiguration;

pub const LANDMARK_HEADER: [&str; 6] = ["specimen_id", "label", "landmark_index", "x", "y", "z"];
pub const LABEL_HEADER: [&str; 2] = ["specimen_id", "label"];

/// Shortest-exact scientific form with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| ShapeError::invalid(format!("line {line}: {what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(ShapeError::invalid(format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected {
        return Err(ShapeError::invalid(format!(
            "expected header {}, found {}",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

pub fn write_landmarks<W: Write>(writer: W, specimens: &[LandmarkConfiguration]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LANDMARK_HEADER)?;
    for s in specimens {
        let label = s.label.as_deref().unwrap_or("");
        for (i, row) in s.points.row_iter().enumerate() {
            w.write_record([
                s.specimen_id.as_str(),
                label,
                &i.to_string(),
                &format_f64(row[0]),
                &format_f64(row[1]),
                &format_f64(row[2]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a landmark file; specimens keep their order of first appearance.
///
/// An empty label field means the specimen is unlabelled.
pub fn read_landmarks<R: Read>(reader: R) -> Result<Vec<LandmarkConfiguration>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(r.headers()?, &LANDMARK_HEADER)?;
    let mut out: Vec<(String, Option<String>, Vec<[f64; 3]>)> = Vec::new();
    let mut seen = HashSet::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].trim();
        if id.is_empty() {
            return Err(ShapeError::invalid(format!("line {line}: empty specimen id")));
        }
        let label = Some(record[1].trim()).filter(|l| !l.is_empty()).map(str::to_string);
        let index: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| ShapeError::invalid(format!("line {line}: bad landmark index {:?}", &record[2])))?;
        let point = [
            parse_f64(&record[3], "x", line)?,
            parse_f64(&record[4], "y", line)?,
            parse_f64(&record[5], "z", line)?,
        ];
        let starts_new = out.last().is_none_or(|(last, ..)| last != id);
        if starts_new {
            if !seen.insert(id.to_string()) {
                return Err(ShapeError::invalid(format!("line {line}: rows of specimen {id} are not contiguous")));
            }
            out.push((id.to_string(), label.clone(), Vec::new()));
        }
        let (_, spec_label, points) = out.last_mut().expect("pushed above");
        if *spec_label != label {
            return Err(ShapeError::invalid(format!("line {line}: specimen {id} has conflicting labels")));
        }
        if index != points.len() {
            return Err(ShapeError::invalid(format!(
                "line {line}: specimen {id} expected landmark_index {}, found {index}",
                points.len()
            )));
        }
        points.push(point);
    }
    if out.is_empty() {
        return Err(ShapeError::invalid("landmark file has no rows"));
    }
    out.into_iter()
        .map(|(id, label, pts)| {
            let m = DMatrix::from_fn(pts.len(), 3, |i, c| pts[i][c]);
            LandmarkConfiguration::new(id, m, label)
        })
        .collect()
}

pub fn write_labels<W: Write>(writer: W, labels: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LABEL_HEADER)?;
    for (id, label) in labels {
        w.write_record([id, label])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(r.headers()?, &LABEL_HEADER)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let (id, label) = (record[0].trim(), record[1].trim());
        if id.is_empty() || label.is_empty() {
            return Err(ShapeError::invalid(format!("line {line}: empty specimen id or label")));
        }
        if !seen.insert(id.to_string()) {
            return Err(ShapeError::invalid(format!("line {line}: duplicate specimen id {id}")));
        }
        out.push((id.to_string(), label.to_string()));
    }
    Ok(out)
}

/// Replaces specimen labels with those of `labels`.
///
/// Every specimen must have exactly one label and every label a specimen;
/// otherwise the error lists the unmatched ids on both sides.
pub fn join_labels(specimens: &[LandmarkConfiguration], labels: &[(String, String)]) -> Result<Vec<LandmarkConfiguration>> {
    let map: HashMap<&str, &str> = labels.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
    let ids: HashSet<&str> = specimens.iter().map(|s| s.specimen_id.as_str()).collect();
    let missing: Vec<&str> = specimens
        .iter()
        .map(|s| s.specimen_id.as_str())
        .filter(|id| !map.contains_key(id))
        .collect();
    let extra: Vec<&str> = labels.iter().map(|(i, _)| i.as_str()).filter(|id| !ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(ShapeError::invalid(format!(
            "label file mismatch; specimens without labels: [{}]; labels without specimens: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    Ok(specimens
        .iter()
        .map(|s| LandmarkConfiguration { label: Some(map[s.specimen_id.as_str()].to_string()), ..s.clone() })
        .collect())
}

/// Distinct labels in sorted order and each specimen's index into them.
pub fn encode_labels(specimens: &[LandmarkConfiguration]) -> Result<(Vec<String>, Vec<usize>)> {
    let mut names: Vec<String> = Vec::new();
    for s in specimens {
        let l = s
            .label
            .as_ref()
            .ok_or_else(|| ShapeError::invalid(format!("specimen {} has no label", s.specimen_id)))?;
        if !names.contains(l) {
            names.push(l.clone());
        }
    }
    names.sort();
    let codes = specimens
        .iter()
        .map(|s| names.iter().position(|n| Some(n) == s.label.as_ref()).expect("collected above"))
        .collect();
    Ok((names, codes))
}

/// A header plus rows of string cells; numeric cells use [`format_f64`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(ShapeError::DimensionMismatch(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}
