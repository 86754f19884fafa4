//! CSV manifest: `path,label,any_au,subject_id,landmarks`.
//!
//! `label` and `any_au` are `0`/`1` (`any_au` may be empty), landmarks are
//! `x1:y1;x2:y2;…` in source-image pixel coordinates (may be empty).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Conventional manifest file name inside a corpus directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

const HEADER: [&str; 5] = ["path", "label", "any_au", "subject_id", "landmarks"];

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    /// Relative to the manifest's directory unless absolute.
    pub image_path: String,
    /// 1 when AU12 (smile) is set.
    pub label: u8,
    /// 1 when any action unit is set.
    pub any_au: Option<u8>,
    pub subject_id: Option<String>,
    pub landmarks: Option<Vec<(f64, f64)>>,
}

impl ManifestRecord {
    pub fn new(image_path: impl Into<String>, label: u8) -> Self {
        ManifestRecord {
            image_path: image_path.into(),
            label,
            any_au: None,
            subject_id: None,
            landmarks: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
}

fn parse_flag(field: &str, what: &str, line: usize) -> Result<Option<u8>> {
    match field.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(Error::Manifest(format!(
            "line {line}: {what} must be 0 or 1, got {other:?}"
        ))),
    }
}

fn parse_landmarks(field: &str, line: usize) -> Result<Option<Vec<(f64, f64)>>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .split(';')
        .map(|pt| {
            let parsed = pt
                .split_once(':')
                .and_then(|(x, y)| Some((x.trim().parse().ok()?, y.trim().parse().ok()?)));
            match parsed {
                Some((x, y)) if f64::is_finite(x) && f64::is_finite(y) => Ok((x, y)),
                _ => Err(Error::Manifest(format!("line {line}: bad landmark {pt:?}"))),
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn format_landmarks(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(x, y)| format!("{x}:{y}"))
        .collect::<Vec<_>>()
        .join(";")
}

impl DatasetManifest {
    /// Checks path uniqueness, binary labels and consistent landmark counts.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut landmark_len = None;
        for (i, r) in records.iter().enumerate() {
            if r.image_path.is_empty() {
                return Err(Error::Manifest(format!("record {i}: empty path")));
            }
            if !seen.insert(r.image_path.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate path {:?}",
                    r.image_path
                )));
            }
            if r.label > 1 || r.any_au.is_some_and(|a| a > 1) {
                return Err(Error::Manifest(format!(
                    "record {i}: labels must be binary"
                )));
            }
            if let Some(points) = &r.landmarks {
                match landmark_len {
                    None => landmark_len = Some(points.len()),
                    Some(n) if n != points.len() => {
                        return Err(Error::Manifest(format!(
                            "record {i}: {} landmarks, earlier records have {n}",
                            points.len()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ManifestRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Manifest(e.to_string()))?
            .clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols != HEADER {
            return Err(Error::Manifest(format!(
                "header must be {:?}, got {cols:?}",
                HEADER.join(",")
            )));
        }
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Manifest(e.to_string()))?;
            let line = i + 2;
            let label = parse_flag(&row[1], "label", line)?
                .ok_or_else(|| Error::Manifest(format!("line {line}: missing label")))?;
            let subject = row[3].trim();
            records.push(ManifestRecord {
                image_path: row[0].trim().to_string(),
                label,
                any_au: parse_flag(&row[2], "any_au", line)?,
                subject_id: (!subject.is_empty()).then(|| subject.to_string()),
                landmarks: parse_landmarks(&row[4], line)?,
            });
        }
        Self::new(records)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(HEADER).expect("in-memory write");
        for r in &self.records {
            let any_au = r.any_au.map(|a| a.to_string()).unwrap_or_default();
            let landmarks = r
                .landmarks
                .as_deref()
                .map(format_landmarks)
                .unwrap_or_default();
            writer
                .write_record([
                    r.image_path.as_str(),
                    &r.label.to_string(),
                    &any_au,
                    r.subject_id.as_deref().unwrap_or(""),
                    &landmarks,
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
