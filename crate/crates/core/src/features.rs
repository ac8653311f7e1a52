//! Record normalization, pairwise feature scores and standardization.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::Dataset;

/// One entity record as ingested from a source.
///
/// Movie fields follow the crawled-catalogue layout. `attrs` carries purely
/// numeric attributes (used by generated data); absent keys mean missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source: String,
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub alt_titles: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<i32>,
    #[serde(default)]
    pub cast: Vec<String>,
    #[serde(default)]
    pub directors: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attrs: Vec<f64>,
}

impl RawRecord {
    pub fn new(source: impl Into<String>, id: impl Into<String>, title: impl Into<String>) -> Self {
        RawRecord {
            source: source.into(),
            id: id.into(),
            title: title.into(),
            alt_titles: Vec::new(),
            year: None,
            runtime: None,
            cast: Vec::new(),
            directors: Vec::new(),
            attrs: Vec::new(),
        }
    }

    /// Whitespace tokens of the title and all alternate titles.
    pub fn title_tokens(&self) -> BTreeSet<&str> {
        std::iter::once(&self.title)
            .chain(&self.alt_titles)
            .flat_map(|t| t.split_whitespace())
            .collect()
    }
}

/// Lowercase, drop punctuation, collapse runs of whitespace and trim.
pub fn normalize_text(text: &str) -> String {
    let lowered = text.to_lowercase();
    let kept: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_list(items: &[String]) -> Vec<String> {
    items
        .iter()
        .map(|s| normalize_text(s))
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn normalize_record(r: &RawRecord) -> Result<RawRecord> {
    let title = normalize_text(&r.title);
    if title.is_empty() {
        return Err(Error::Validation(format!(
            "record {}/{} has an empty title after normalization",
            r.source, r.id
        )));
    }
    Ok(RawRecord {
        source: r.source.clone(),
        id: r.id.clone(),
        title,
        alt_titles: normalize_list(&r.alt_titles),
        year: r.year,
        runtime: r.runtime,
        cast: normalize_list(&r.cast),
        directors: normalize_list(&r.directors),
        attrs: r.attrs.clone(),
    })
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 1.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    jaccard_or(a, b, 1.0)
}

pub fn jaccard_or<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>, both_empty: f64) -> f64 {
    if a.is_empty() && b.is_empty() {
        return both_empty;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// `-|a - b|` when both values are present, else 0.
pub fn absdiff_score(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        // `+ 0.0` turns -0.0 into 0.0.
        (Some(a), Some(b)) => -(a - b).abs() + 0.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    TitleJaccard,
    CastJaccard,
    DirectorJaccard,
    YearAbsDiff,
    RuntimeAbsDiff,
    /// Numeric attribute at this index.
    AttrAbsDiff(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub features: Vec<FeatureDef>,
    /// Jaccard score when both sides lack the attribute.
    pub empty_jaccard: f64,
}

impl Default for FeatureSpec {
    /// Title (with alternates), cast and director Jaccard; year and
    /// runtime absolute differences.
    fn default() -> Self {
        let defs = [
            ("title_jaccard", FeatureKind::TitleJaccard),
            ("cast_jaccard", FeatureKind::CastJaccard),
            ("director_jaccard", FeatureKind::DirectorJaccard),
            ("year_absdiff", FeatureKind::YearAbsDiff),
            ("runtime_absdiff", FeatureKind::RuntimeAbsDiff),
        ];
        FeatureSpec {
            features: defs
                .into_iter()
                .map(|(name, kind)| FeatureDef {
                    name: name.into(),
                    kind,
                })
                .collect(),
            empty_jaccard: 1.0,
        }
    }
}

impl FeatureSpec {
    /// One absolute-difference feature per numeric attribute.
    pub fn numeric(dim: usize) -> Self {
        FeatureSpec {
            features: (0..dim)
                .map(|i| FeatureDef {
                    name: format!("attr{i}_absdiff"),
                    kind: FeatureKind::AttrAbsDiff(i),
                })
                .collect(),
            empty_jaccard: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Validation("feature spec is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Validation(format!("duplicate feature name {:?}", f.name)));
            }
        }
        Ok(())
    }
}

fn set(items: &[String]) -> BTreeSet<&str> {
    items.iter().map(String::as_str).collect()
}

/// Feature vector for a pair of normalized records.
pub fn featurize_pair(r1: &RawRecord, r2: &RawRecord, spec: &FeatureSpec) -> Vec<f64> {
    spec.features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::TitleJaccard => jaccard_or(&r1.title_tokens(), &r2.title_tokens(), spec.empty_jaccard),
            FeatureKind::CastJaccard => jaccard_or(&set(&r1.cast), &set(&r2.cast), spec.empty_jaccard),
            FeatureKind::DirectorJaccard => {
                jaccard_or(&set(&r1.directors), &set(&r2.directors), spec.empty_jaccard)
            }
            FeatureKind::YearAbsDiff => absdiff_score(r1.year.map(f64::from), r2.year.map(f64::from)),
            FeatureKind::RuntimeAbsDiff => absdiff_score(r1.runtime.map(f64::from), r2.runtime.map(f64::from)),
            FeatureKind::AttrAbsDiff(i) => absdiff_score(r1.attrs.get(i).copied(), r2.attrs.get(i).copied()),
        })
        .collect()
}

/// Per-feature affine map to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Argument("cannot fit a standardizer on an empty set".into()))?;
        let d = first.as_ref().len();
        if let Some(bad) = vectors.iter().map(|v| v.as_ref().len()).find(|&l| l != d) {
            return Err(Error::Shape { expected: d, found: bad });
        }
        let n = vectors.len() as f64;
        let mut means = vec![0.0; d];
        let mut stds = vec![1.0; d];
        for k in 0..d {
            let column = || vectors.iter().map(|v| v.as_ref()[k]);
            let (lo, hi) = column().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if lo == hi {
                means[k] = lo;
                continue;
            }
            let mean = column().sum::<f64>() / n;
            let var = column().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            means[k] = mean;
            if var > 0.0 {
                stds[k] = var.sqrt();
            }
        }
        Ok(Standardizer { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

/// Name of the constant feature appended after standardization.
pub const CONSTANT_FEATURE: &str = "bias";

/// Training-time feature transform, saved alongside a model so scoring
/// applies exactly the same map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub input_features: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub append_constant: bool,
}

impl Preprocessor {
    pub fn identity(input_features: Vec<String>) -> Self {
        Preprocessor {
            input_features,
            standardizer: None,
            append_constant: false,
        }
    }

    /// Fits on `train` only.
    pub fn fit(train: &Dataset, standardize: bool, append_constant: bool) -> Result<Self> {
        let standardizer = if standardize {
            let xs: Vec<&[f64]> = train.examples.iter().map(|e| e.x.as_slice()).collect();
            Some(Standardizer::fit(&xs)?)
        } else {
            None
        };
        Ok(Preprocessor {
            input_features: train.feature_names.clone(),
            standardizer,
            append_constant,
        })
    }

    pub fn output_names(&self) -> Vec<String> {
        let mut names = self.input_features.clone();
        if self.append_constant {
            names.push(CONSTANT_FEATURE.into());
        }
        names
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        if self.append_constant {
            out.push(1.0);
        }
        out
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim != self.input_features.len() {
            return Err(Error::Shape {
                expected: self.input_features.len(),
                found: data.dim,
            });
        }
        let mut out = data.clone();
        for ex in &mut out.examples {
            ex.x = self.apply(&ex.x);
        }
        out.feature_names = self.output_names();
        out.dim = out.feature_names.len();
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Preprocessor = serde_json::from_str(&text).map_err(|e| Error::Parse {
            field: "preprocessor".into(),
            message: e.to_string(),
        })?;
        if let Some(s) = &p.standardizer {
            if s.dim() != p.input_features.len() || s.stds.len() != s.dim() {
                return Err(Error::Validation("standardizer dimension disagrees with feature names".into()));
            }
            if s.stds.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Validation("standardizer has a nonpositive std".into()));
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set<'a>(items: &[&'a str]) -> BTreeSet<&'a str> {
        items.iter().copied().collect()
    }

    #[test]
    fn normalization_rules() {
        let mut r = RawRecord::new("imdb", "1", "  The Matrix! ");
        r.cast = vec!["Keanu REEVES".into(), "  ".into()];
        r.alt_titles = vec!["Matrix,  The".into()];
        let n = normalize_record(&r).unwrap();
        assert_eq!(n.title, "the matrix");
        assert_eq!(n.cast, vec!["keanu reeves"]);
        assert_eq!(n.alt_titles, vec!["matrix the"]);
        assert_eq!(normalize_record(&n).unwrap(), n);
        assert!(normalize_record(&RawRecord::new("a", "2", " ?! ")).is_err());
    }

    #[test]
    fn jaccard_cases() {
        approx::assert_relative_eq!(jaccard(&set(&["a", "b"]), &set(&["b", "c"])), 1.0 / 3.0);
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard::<&str>(&set(&[]), &set(&[])), 1.0);
        assert_eq!(jaccard_or::<&str>(&set(&[]), &set(&[]), 0.0), 0.0);
    }

    #[test]
    fn absdiff_cases() {
        assert_eq!(absdiff_score(Some(1999.0), Some(1999.0)), 0.0);
        assert!(absdiff_score(Some(1999.0), Some(1999.0)).is_sign_positive());
        assert_eq!(absdiff_score(Some(120.0), Some(115.0)), -5.0);
        assert_eq!(absdiff_score(None, Some(1999.0)), 0.0);
    }

    #[test]
    fn identical_records_score_full_overlap() {
        let mut r = RawRecord::new("imdb", "1", "the matrix");
        r.year = Some(1999);
        r.runtime = Some(136);
        r.cast = vec!["keanu reeves".into()];
        r.directors = vec!["lana wachowski".into()];
        assert_eq!(featurize_pair(&r, &r, &FeatureSpec::default()), vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cast_overlap_two_of_four() {
        let mut a = RawRecord::new("x", "1", "heat");
        let mut b = RawRecord::new("y", "1", "heat");
        a.cast = vec!["al pacino".into(), "robert de niro".into(), "val kilmer".into()];
        b.cast = vec!["al pacino".into(), "robert de niro".into(), "jon voight".into()];
        // union {pacino, de niro, kilmer, voight}, intersection 2
        let f = featurize_pair(&a, &b, &FeatureSpec::default());
        assert_eq!(f[1], 0.5);
    }

    #[test]
    fn standardizer_hand_case() {
        let s = Standardizer::fit(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(s.means, vec![1.0]);
        assert_eq!(s.stds, vec![1.0]);
        assert_eq!(s.apply(&[2.0]), vec![1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = Standardizer::fit(&[vec![0.1, 1.0], vec![0.1, 2.0], vec![0.1, 4.0]]).unwrap();
        assert_eq!(s.stds[0], 1.0);
        for v in [[0.1, 1.0], [0.1, 2.0], [0.1, 4.0]] {
            assert_eq!(s.apply(&v)[0], 0.0);
        }
    }

    #[test]
    fn standardizer_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(Standardizer::fit(&empty), Err(Error::Argument(_))));
        assert!(Standardizer::fit(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn feature_spec_validation() {
        assert!(FeatureSpec::default().validate().is_ok());
        let mut spec = FeatureSpec::numeric(2);
        spec.features[1].name = spec.features[0].name.clone();
        assert!(spec.validate().is_err());
        assert!(FeatureSpec { features: vec![], empty_jaccard: 1.0 }.validate().is_err());
    }
}
