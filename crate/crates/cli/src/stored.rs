//! On-disk model files: the transfer/pooled layout from the core crate, or
//! a per-pair weight table for the independent baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use er_transfer::{Error, IndepModel, PairScorer, Result, SourcePair, TransferModel};

#[derive(Debug, Serialize, Deserialize)]
struct PairWeights {
    a: usize,
    b: usize,
    w: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndepFile {
    kind: String,
    d: usize,
    feature_names: Vec<String>,
    sources: Vec<String>,
    weights: Vec<PairWeights>,
}

pub enum StoredModel {
    Transfer(TransferModel),
    Indep {
        model: IndepModel,
        feature_names: Vec<String>,
        sources: Vec<String>,
    },
}

impl StoredModel {
    pub fn feature_names(&self) -> &[String] {
        match self {
            StoredModel::Transfer(m) => &m.feature_names,
            StoredModel::Indep { feature_names, .. } => feature_names,
        }
    }

    pub fn source_names(&self) -> Vec<String> {
        match self {
            StoredModel::Transfer(m) => m.sources.clone(),
            StoredModel::Indep { sources, .. } => sources.clone(),
        }
    }

    pub fn scorer(&self) -> &dyn PairScorer {
        match self {
            StoredModel::Transfer(m) => m,
            StoredModel::Indep { model, .. } => model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            StoredModel::Transfer(m) => m.save(path),
            StoredModel::Indep {
                model,
                feature_names,
                sources,
            } => {
                let file = IndepFile {
                    kind: "indep".into(),
                    d: model.dim,
                    feature_names: feature_names.clone(),
                    sources: sources.clone(),
                    weights: model
                        .weights
                        .iter()
                        .map(|(p, w)| PairWeights {
                            a: p.a(),
                            b: p.b(),
                            w: w.clone(),
                        })
                        .collect(),
                };
                let mut text = serde_json::to_string_pretty(&file)?;
                text.push('\n');
                fs::write(path, text).map_err(|e| Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("kind").and_then(|k| k.as_str()) != Some("indep") {
            return TransferModel::from_json(&text).map(StoredModel::Transfer);
        }
        let file: IndepFile = serde_json::from_value(value)?;
        if file.feature_names.len() != file.d {
            return Err(Error::Shape {
                expected: file.d,
                found: file.feature_names.len(),
            });
        }
        let n = file.sources.len();
        let mut weights = BTreeMap::new();
        for pw in file.weights {
            let pair = SourcePair::new(pw.a, pw.b)?;
            if pair.b() >= n {
                return Err(Error::SourceIndex {
                    index: pair.b(),
                    n_sources: n,
                });
            }
            if pw.w.len() != file.d {
                return Err(Error::Shape {
                    expected: file.d,
                    found: pw.w.len(),
                });
            }
            weights.insert(pair, pw.w);
        }
        Ok(StoredModel::Indep {
            model: IndepModel {
                weights,
                dim: file.d,
                n_sources: n,
                warnings: Vec::new(),
            },
            feature_names: file.feature_names,
            sources: file.sources,
        })
    }
}
