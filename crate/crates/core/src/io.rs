//! File formats shared by the pipeline stages.
//!
//! * records: JSONL, one [`RawRecord`] per line
//! * labels: `source_a,id_a,source_b,id_b,label`
//! * candidates: `source_a,id_a,source_b,id_b`
//! * features: `source_a,id_a,source_b,id_b,label,<feature names...>`
//!
//! Labels are written as `1`/`0`; `-1` and `+1` are also accepted on input.
//! An empty label cell means "unlabeled".

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::RawRecord;
use crate::model::{Label, LabeledExample, SourceId, SourcePair};
use crate::solver::Dataset;

/// Dense source indices keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRegistry {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SourceRegistry {
    /// Names in the given order; duplicates and empty names are rejected.
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation("empty source name".into()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate source name {name:?}")));
            }
        }
        Ok(SourceRegistry { names, index })
    }

    /// Sorted, deduplicated names, so indices do not depend on input order.
    pub fn from_unsorted<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self::new(set.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> Vec<SourceId> {
        self.names
            .iter()
            .enumerate()
            .map(|(index, name)| SourceId {
                index,
                name: name.clone(),
            })
            .collect()
    }

    pub fn pair(&self, a: &str, b: &str) -> Result<SourcePair> {
        let lookup = |n: &str| {
            self.index(n)
                .ok_or_else(|| Error::Validation(format!("unknown source {n:?}")))
        };
        SourcePair::new(lookup(a)?, lookup(b)?)
    }

    /// Fails with every name not present in the registry.
    pub fn check_known<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let unknown: BTreeSet<&str> = names.into_iter().filter(|n| self.index(n).is_none()).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "unknown sources: {}",
                unknown.into_iter().collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Identifies one record pair by source names and record ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub source_a: String,
    pub id_a: String,
    pub source_b: String,
    pub id_b: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub key: PairKey,
    pub label: Option<Label>,
    pub x: Vec<f64>,
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            field: format!("{} line {}", path.display(), n + 1),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn expect_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let ok = found.len() >= expected.len() && expected.iter().zip(found.iter()).all(|(a, b)| *a == b);
    if ok {
        Ok(())
    } else {
        Err(Error::Parse {
            field: format!("{} header", path.display()),
            message: format!("expected columns {expected:?}, found {:?}", found.iter().collect::<Vec<_>>()),
        })
    }
}

const KEY_COLUMNS: [&str; 4] = ["source_a", "id_a", "source_b", "id_b"];

fn key_of(rec: &csv::StringRecord) -> PairKey {
    PairKey {
        source_a: rec[0].to_string(),
        id_a: rec[1].to_string(),
        source_b: rec[2].to_string(),
        id_b: rec[3].to_string(),
    }
}

pub fn write_labels(path: &Path, labels: &[(PairKey, Label)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(KEY_COLUMNS.iter().chain(&["label"]))?;
    for (k, y) in labels {
        w.write_record([&k.source_a, &k.id_a, &k.source_b, &k.id_b, y.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<(PairKey, Label)>> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    expect_header(path, &header, &["source_a", "id_a", "source_b", "id_b", "label"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((key_of(&rec), Label::parse(&rec[4])?));
    }
    Ok(out)
}

pub fn write_candidates(path: &Path, keys: &[PairKey]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(KEY_COLUMNS)?;
    for k in keys {
        w.write_record([&k.source_a, &k.id_a, &k.source_b, &k.id_b])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_candidates(path: &Path) -> Result<Vec<PairKey>> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    expect_header(path, &header, &KEY_COLUMNS)?;
    r.records().map(|rec| Ok(key_of(&rec?))).collect()
}

pub fn write_features(path: &Path, feature_names: &[String], rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
    header.push("label");
    header.extend(feature_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for row in rows {
        if row.x.len() != feature_names.len() {
            return Err(Error::Shape {
                expected: feature_names.len(),
                found: row.x.len(),
            });
        }
        let mut fields = vec![
            row.key.source_a.clone(),
            row.key.id_a.clone(),
            row.key.source_b.clone(),
            row.key.id_b.clone(),
            row.label.map_or(String::new(), |y| y.as_str().to_string()),
        ];
        fields.extend(row.x.iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Returns the feature names from the header and all rows.
pub fn read_features(path: &Path) -> Result<(Vec<String>, Vec<FeatureRow>)> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    expect_header(path, &header, &["source_a", "id_a", "source_b", "id_b", "label"])?;
    let names: Vec<String> = header.iter().skip(5).map(String::from).collect();
    if names.is_empty() {
        return Err(Error::Parse {
            field: format!("{} header", path.display()),
            message: "no feature columns".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let label = match rec[4].trim() {
            "" => None,
            text => Some(Label::parse(text)?),
        };
        let x = rec
            .iter()
            .skip(5)
            .zip(&names)
            .map(|(v, name)| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    field: name.clone(),
                    message: format!("{v:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if x.len() != names.len() {
            return Err(Error::Shape {
                expected: names.len(),
                found: x.len(),
            });
        }
        rows.push(FeatureRow {
            key: key_of(&rec),
            label,
            x,
        });
    }
    Ok((names, rows))
}

/// Labeled rows as a dataset over the registry's sources. Unlabeled rows
/// and unknown sources are validation errors.
pub fn rows_to_dataset(feature_names: &[String], rows: &[FeatureRow], sources: &SourceRegistry) -> Result<Dataset> {
    sources.check_known(rows.iter().flat_map(|r| [r.key.source_a.as_str(), r.key.source_b.as_str()]))?;
    let mut examples = Vec::with_capacity(rows.len());
    for (n, row) in rows.iter().enumerate() {
        let y = row
            .label
            .ok_or_else(|| Error::Validation(format!("feature row {} is unlabeled", n + 1)))?;
        examples.push(LabeledExample {
            x: row.x.clone(),
            pair: sources.pair(&row.key.source_a, &row.key.source_b)?,
            y,
        });
    }
    Dataset::new(examples, sources.len(), feature_names.len())?
        .with_names(feature_names.to_vec(), sources.names().to_vec())
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
