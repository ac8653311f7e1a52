#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use er_transfer::{Dataset, Label, LabeledExample, SourcePair, TransferModel};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}

/// Gaussian features with labels from a noisy linear rule, one rule per pair.
pub fn random_dataset(rng: &mut ChaCha8Rng, pairs: &[(SourcePair, usize)], n_sources: usize, d: usize) -> Dataset {
    let mut examples = Vec::new();
    for &(pair, n) in pairs {
        let truth = normal_vec(rng, d);
        for _ in 0..n {
            let x = normal_vec(rng, d);
            let s: f64 = truth.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + 0.5 * normal(rng);
            let y = if s >= 0.0 { Label::Match } else { Label::NonMatch };
            examples.push(LabeledExample { x, pair, y });
        }
    }
    Dataset::new(examples, n_sources, d).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, d: usize, n_sources: usize) -> TransferModel {
    let mut m = TransferModel::zeros(d, n_sources);
    m.w0 = normal_vec(rng, d);
    for w in &mut m.w {
        *w = normal_vec(rng, d);
    }
    m
}

/// Solves `(X^T X) w = X^T y` by LU on the explicitly assembled normal equations.
pub fn normal_equations(examples: &[&LabeledExample]) -> Vec<f64> {
    let d = examples[0].x.len();
    let x = DMatrix::from_fn(examples.len(), d, |r, c| examples[r].x[c]);
    let y = DVector::from_iterator(examples.len(), examples.iter().map(|e| e.y.sign()));
    let xt = x.transpose();
    let w = (&xt * &x).lu().solve(&(&xt * y)).expect("singular design");
    w.iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn pair(a: usize, b: usize) -> SourcePair {
    SourcePair::new(a, b).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
