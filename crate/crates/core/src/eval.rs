//! Threshold metrics: confusion counts, precision/recall, test error,
//! PR curves and pointwise confidence bands.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{classify, Label, SourcePair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub score: f64,
    pub y: Label,
    pub pair: SourcePair,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Counts against `classify(score, tau)`.
pub fn confusion(scored: &[ScoredExample], tau: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in scored {
        match (classify(s.score, tau), s.y) {
            (Label::Match, Label::Match) => c.tp += 1,
            (Label::Match, Label::NonMatch) => c.fp += 1,
            (Label::NonMatch, Label::Match) => c.fn_ += 1,
            (Label::NonMatch, Label::NonMatch) => c.tn += 1,
        }
    }
    c
}

/// `(TP / (TP + FP), TP / (TP + FN))`; precision is 1 with no positive
/// predictions and recall is 1 with no positive labels.
pub fn precision_recall(c: &Confusion) -> (f64, f64) {
    let p = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let r = if c.tp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    (p, r)
}

/// Fraction of examples whose thresholded label disagrees with the truth.
pub fn test_error(scored: &[ScoredExample], tau: f64) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::Argument("test error of an empty set".into()));
    }
    let c = confusion(scored, tau);
    Ok((c.fp + c.fn_) as f64 / scored.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Step PR curve, one point per distinct score, in decreasing `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,precision,recall,tp,fp,fn\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{},{},{}", p.tau, p.precision, p.recall, p.tp, p.fp, p.fn_);
        }
        out
    }
}

pub fn pr_curve(scored: &[ScoredExample]) -> Result<PrCurve> {
    if scored.is_empty() {
        return Err(Error::Argument("PR curve of an empty set".into()));
    }
    let positives = scored.iter().filter(|s| s.y.is_match()).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Validation(format!("non-finite score {}", bad.score)));
    }
    let mut order: Vec<&ScoredExample> = scored.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let tau = order[i].score;
        while i < order.len() && order[i].score == tau {
            if order[i].y.is_match() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Confusion {
            tp,
            fp,
            fn_: positives - tp,
            tn: 0,
        };
        let (precision, recall) = precision_recall(&c);
        points.push(PrPoint {
            tau,
            precision,
            recall,
            tp,
            fp,
            fn_: c.fn_,
        });
    }
    Ok(PrCurve { points })
}

/// Best precision among points with recall at least `r0`, or `None`.
pub fn try_precision_at_recall(curve: &PrCurve, r0: f64) -> Option<f64> {
    curve
        .points
        .iter()
        .filter(|p| p.recall >= r0)
        .map(|p| p.precision)
        .fold(None, |best, p| Some(best.map_or(p, |b: f64| b.max(p))))
}

/// As [`try_precision_at_recall`], falling back to 0 with a warning.
pub fn precision_at_recall(curve: &PrCurve, r0: f64) -> f64 {
    try_precision_at_recall(curve, r0).unwrap_or_else(|| {
        log::warn!("no curve point reaches recall {r0}; reporting precision 0");
        0.0
    })
}

/// Mean with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanBand {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanBand {
    /// Uses the population standard deviation: `1.96 * sd / sqrt(n)`.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        // Shifting by the first value keeps constant inputs exact.
        let shift = values[0];
        let offset = values.iter().map(|v| v - shift).sum::<f64>() / n;
        let mean = shift + offset;
        let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / n;
        Some(MeanBand {
            mean,
            half_width: 1.96 * var.sqrt() / n.sqrt(),
            n: values.len(),
        })
    }

    /// Band limits are clipped to `[0, 1]`: every banded quantity here is a
    /// proportion.
    pub fn lower(&self) -> f64 {
        (self.mean - self.half_width).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        (self.mean + self.half_width).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandedCurve {
    pub recall: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BandedCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recall,mean_precision,lo,hi\n");
        for i in 0..self.recall.len() {
            let _ = writeln!(out, "{},{},{},{}", self.recall[i], self.mean[i], self.lower[i], self.upper[i]);
        }
        out
    }
}

/// Evenly spaced recall levels `1/n, 2/n, ..., 1`.
pub fn recall_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

/// Pointwise mean precision and 95% band across trials. Each trial's step
/// curve is evaluated at a grid recall as its best precision at that
/// recall or above.
pub fn band_curves(curves: &[PrCurve], recall_grid: &[f64]) -> Result<BandedCurve> {
    if curves.len() < 2 {
        return Err(Error::Argument(format!(
            "confidence bands need at least 2 trials, got {}",
            curves.len()
        )));
    }
    let mut out = BandedCurve {
        recall: recall_grid.to_vec(),
        mean: Vec::with_capacity(recall_grid.len()),
        lower: Vec::with_capacity(recall_grid.len()),
        upper: Vec::with_capacity(recall_grid.len()),
    };
    for &r in recall_grid {
        let values: Vec<f64> = curves.iter().map(|c| precision_at_recall(c, r)).collect();
        let band = MeanBand::from_values(&values).expect("at least two trials");
        out.mean.push(band.mean);
        out.lower.push(band.lower());
        out.upper.push(band.upper());
    }
    Ok(out)
}

/// Band for a single scored set from bootstrap resamples of its examples.
/// Resamples without any positive label are redrawn.
pub fn bootstrap_band(
    scored: &[ScoredExample],
    recall_grid: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<BandedCurve> {
    if !scored.iter().any(|s| s.y.is_match()) {
        return Err(Error::NoPositives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::with_capacity(resamples);
    let mut sample = Vec::with_capacity(scored.len());
    while curves.len() < resamples {
        sample.clear();
        sample.extend((0..scored.len()).map(|_| scored[rng.random_range(0..scored.len())]));
        match pr_curve(&sample) {
            Ok(c) => curves.push(c),
            Err(Error::NoPositives) => continue,
            Err(e) => return Err(e),
        }
    }
    band_curves(&curves, recall_grid)
}
