//! Transfer model parameters and pair scoring.
//!
//! A model holds one shared vector `w0` and one vector per source. The
//! scoring function for a source pair `(i, j)` uses the combined weight
//! `w0 + (w_i + w_j) / 2`; the pairwise perturbation is never stored
//! because in the large-coupling limit it equals half the difference of
//! the two source vectors and cancels into that average.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// A data source: dense index plus a short human-readable name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceId {
    pub index: usize,
    pub name: String,
}

impl SourceId {
    pub fn new(index: usize, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Validation(format!("source {index} has an empty name")));
        }
        Ok(SourceId { index, name })
    }
}

/// An unordered pair of distinct sources, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourcePair {
    a: usize,
    b: usize,
}

impl SourcePair {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => Ok(SourcePair { a: i, b: j }),
            std::cmp::Ordering::Greater => Ok(SourcePair { a: j, b: i }),
            std::cmp::Ordering::Equal => Err(Error::Argument(format!(
                "a source pair needs two distinct sources, got ({i}, {j})"
            ))),
        }
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn contains(&self, source: usize) -> bool {
        self.a == source || self.b == source
    }

    /// Every pair over `n` sources in lexicographic order.
    pub fn all(n: usize) -> Vec<SourcePair> {
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                out.push(SourcePair { a, b });
            }
        }
        out
    }

    pub(crate) fn check(&self, n_sources: usize) -> Result<()> {
        if self.b >= n_sources {
            return Err(Error::SourceIndex {
                index: self.b,
                n_sources,
            });
        }
        Ok(())
    }
}

impl fmt::Display for SourcePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

/// Binary match label. Internally the regression target is `±1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Match,
    NonMatch,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Match => 1.0,
            Label::NonMatch => -1.0,
        }
    }

    pub fn is_match(self) -> bool {
        self == Label::Match
    }

    /// Accepts `1`, `+1`, `-1` and `0` (mapped to non-match).
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "1" | "+1" => Ok(Label::Match),
            "0" | "-1" => Ok(Label::NonMatch),
            other => Err(Error::Parse {
                field: "label".into(),
                message: format!("expected one of 1, +1, 0, -1; got {other:?}"),
            }),
        }
    }

    /// 0/1 text form used in CSV output.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Match => "1",
            Label::NonMatch => "0",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub pair: SourcePair,
    pub y: Label,
}

/// Anything that maps a source pair and feature vector to a similarity score.
pub trait PairScorer: Sync {
    fn score(&self, pair: SourcePair, x: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferModel {
    pub w0: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub sources: Vec<String>,
    pub lambda_a: f64,
}

impl TransferModel {
    /// All-zero model with default feature and source names.
    pub fn zeros(dim: usize, n_sources: usize) -> Self {
        TransferModel {
            w0: vec![0.0; dim],
            w: vec![vec![0.0; dim]; n_sources],
            feature_names: default_names("f", dim),
            sources: default_names("s", n_sources),
            lambda_a: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w0.len()
    }

    pub fn n_sources(&self) -> usize {
        self.w.len()
    }

    /// Checks dimensions, names and finiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Validation("model dimension is zero".into()));
        }
        if self.feature_names.len() != d {
            return Err(Error::Validation(format!(
                "feature_names has {} entries, expected {d}",
                self.feature_names.len()
            )));
        }
        if self.sources.len() != self.w.len() {
            return Err(Error::Validation(format!(
                "sources lists {} names but w has {} vectors",
                self.sources.len(),
                self.w.len()
            )));
        }
        if let Some(name) = self.sources.iter().find(|s| s.is_empty()) {
            return Err(Error::Validation(format!("empty source name {name:?}")));
        }
        for (i, wi) in self.w.iter().enumerate() {
            if wi.len() != d {
                return Err(Error::Validation(format!(
                    "w[{i}] has length {}, expected {d}",
                    wi.len()
                )));
            }
        }
        let finite = self.w0.iter().chain(self.w.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("model contains non-finite weights".into()));
        }
        if !(self.lambda_a >= 0.0 && self.lambda_a.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda_a must be a finite nonnegative number, got {}",
                self.lambda_a
            )));
        }
        Ok(())
    }

    /// `w0 + (w_i + w_j) / 2` for the pair.
    pub fn combined_weight(&self, pair: SourcePair) -> Result<Vec<f64>> {
        pair.check(self.n_sources())?;
        let mut out = vec![0.0; self.dim()];
        self.combined_weight_into(pair, &mut out);
        Ok(out)
    }

    /// Unchecked variant writing into `out`; the pair must be in range.
    pub(crate) fn combined_weight_into(&self, pair: SourcePair, out: &mut [f64]) {
        let (wa, wb) = (&self.w[pair.a()], &self.w[pair.b()]);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.w0[k] + 0.5 * (wa[k] + wb[k]);
        }
    }

    pub fn score(&self, pair: SourcePair, x: &[f64]) -> Result<f64> {
        pair.check(self.n_sources())?;
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.score_unchecked(pair, x))
    }

    pub(crate) fn score_unchecked(&self, pair: SourcePair, x: &[f64]) -> f64 {
        let (wa, wb) = (&self.w[pair.a()], &self.w[pair.b()]);
        x.iter()
            .enumerate()
            .map(|(k, xk)| (self.w0[k] + 0.5 * (wa[k] + wb[k])) * xk)
            .sum()
    }

    /// True when every per-source vector is exactly zero.
    pub fn is_pooled(&self) -> bool {
        self.w.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Pretty JSON text of the model file, newline terminated.
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let file = ModelFile {
            d: self.dim(),
            feature_names: &self.feature_names,
            sources: &self.sources,
            w0: &self.w0,
            w: &self.w,
            lambda_a: self.lambda_a,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            field: "model".into(),
            message: e.to_string(),
        })?;
        let d: usize = field(&value, "d")?;
        let model = TransferModel {
            feature_names: field(&value, "feature_names")?,
            sources: field(&value, "sources")?,
            w0: field(&value, "w0")?,
            w: field(&value, "w")?,
            lambda_a: field(&value, "lambda_a")?,
        };
        if model.dim() != d {
            return Err(Error::Validation(format!(
                "w0 has length {}, but d = {d}",
                model.dim()
            )));
        }
        model.validate()?;
        Ok(model)
    }
}

impl PairScorer for TransferModel {
    fn score(&self, pair: SourcePair, x: &[f64]) -> Result<f64> {
        TransferModel::score(self, pair, x)
    }
}

/// `+1` when `s - tau >= 0`; the boundary counts as a match.
pub fn classify(s: f64, tau: f64) -> Label {
    if s - tau >= 0.0 {
        Label::Match
    } else {
        Label::NonMatch
    }
}

pub(crate) fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

// Field order here is the on-disk order.
#[derive(Serialize)]
struct ModelFile<'a> {
    d: usize,
    feature_names: &'a [String],
    sources: &'a [String],
    w0: &'a [f64],
    w: &'a [Vec<f64>],
    lambda_a: f64,
}

fn field<T: for<'de> Deserialize<'de>>(value: &Value, name: &str) -> Result<T> {
    let raw = value.get(name).ok_or_else(|| Error::Parse {
        field: name.into(),
        message: "missing".into(),
    })?;
    T::deserialize(raw).map_err(|e| Error::Parse {
        field: name.into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_123() -> TransferModel {
        let mut m = TransferModel::zeros(1, 3);
        m.w0 = vec![1.0];
        m.w[1] = vec![2.0];
        m.w[2] = vec![4.0];
        m
    }

    #[test]
    fn combined_weight_averages_sources() {
        let m = model_123();
        let p = SourcePair::new(1, 2).unwrap();
        assert_eq!(m.combined_weight(p).unwrap(), vec![4.0]);
        assert_eq!(m.score(p, &[0.5]).unwrap(), 2.0);
        assert_eq!(m.score(p, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_source_vectors_reduce_to_shared_weight() {
        let mut m = TransferModel::zeros(2, 4);
        m.w0 = vec![0.3, -1.2];
        for p in SourcePair::all(4) {
            assert_eq!(m.combined_weight(p).unwrap(), m.w0);
        }
        assert!(m.is_pooled());
    }

    #[test]
    fn pair_is_canonical() {
        let p = SourcePair::new(5, 2).unwrap();
        assert_eq!((p.a(), p.b()), (2, 5));
        assert_eq!(p, SourcePair::new(2, 5).unwrap());
        assert!(SourcePair::new(3, 3).is_err());
        assert_eq!(SourcePair::all(30).len(), 435);
    }

    #[test]
    fn out_of_range_and_shape_errors() {
        let m = model_123();
        let p = SourcePair::new(1, 3).unwrap();
        assert!(matches!(m.combined_weight(p), Err(Error::SourceIndex { index: 3, .. })));
        let q = SourcePair::new(0, 1).unwrap();
        assert!(matches!(m.score(q, &[1.0, 2.0]), Err(Error::Shape { expected: 1, found: 2 })));
    }

    #[test]
    fn classify_boundary_is_match() {
        assert_eq!(classify(0.7, 0.5), Label::Match);
        assert_eq!(classify(0.3, 0.5), Label::NonMatch);
        assert_eq!(classify(0.5, 0.5), Label::Match);
    }

    #[test]
    fn label_parsing() {
        assert_eq!(Label::parse("0").unwrap(), Label::NonMatch);
        assert_eq!(Label::parse("-1").unwrap(), Label::NonMatch);
        assert_eq!(Label::parse(" +1").unwrap(), Label::Match);
        assert!(Label::parse("2").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = TransferModel::zeros(3, 3);
        m.w0 = vec![0.1, 1.0 / 3.0, -2.5e-17];
        m.w[0] = vec![f64::MIN_POSITIVE, 7.0, -0.0];
        m.w[2] = vec![1e300, -1e-300, 0.2];
        m.lambda_a = 0.75;
        m.save(&path).unwrap();
        let back = TransferModel::load(&path).unwrap();
        for (a, b) in m.w0.iter().chain(m.w.iter().flatten()).zip(back.w0.iter().chain(back.w.iter().flatten())) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, m);

        let text = fs::read_to_string(&path).unwrap();
        let order: Vec<usize> = ["\"d\"", "\"feature_names\"", "\"sources\"", "\"w0\"", "\"w\"", "\"lambda_a\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn load_rejects_bad_files() {
        let wrong_len = r#"{"d":2,"feature_names":["a","b"],"sources":["x","y"],
            "w0":[0,0],"w":[[0,0],[0]],"lambda_a":0}"#;
        assert!(matches!(TransferModel::from_json(wrong_len), Err(Error::Validation(m)) if m.contains("w[1]")));

        let bad_field = r#"{"d":1,"feature_names":["a"],"sources":["x","y"],
            "w0":"oops","w":[[0],[0]],"lambda_a":0}"#;
        assert!(matches!(TransferModel::from_json(bad_field), Err(Error::Parse { field, .. }) if field == "w0"));

        let missing = r#"{"d":1,"feature_names":["a"],"sources":["x","y"],"w0":[1],"lambda_a":0}"#;
        assert!(matches!(TransferModel::from_json(missing), Err(Error::Parse { field, .. }) if field == "w"));

        let err = TransferModel::load(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
