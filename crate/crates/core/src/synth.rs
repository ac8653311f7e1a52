//! Seeded multi-source benchmark generator.
//!
//! Latent entities have `dim` attributes drawn uniformly from `[0, 1)`.
//! Every source holds one record per entity, made by adding Gaussian noise
//! with a per-source, per-attribute scale. Labeled pairs compare a record
//! from each of two sources; their features are `-|attr_a - attr_b|` per
//! attribute. Noise is applied to records, never to features.
//!
//! Randomness comes from ChaCha8 with one stream per purpose:
//!
//! | stream                    | draws                             |
//! |---------------------------|-----------------------------------|
//! | 1                         | latent attributes                 |
//! | 2                         | per-source noise-scale uniforms   |
//! | `1 << 32 | s`             | noise of source `s`               |
//! | `2 << 32 | a << 16 | b`   | pair sampling for sources `(a, b)`|
//!
//! Streams never depend on the number of sources, so a world with `N`
//! sources contains exactly the first `N` sources of any larger world built
//! from the same seed.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RawRecord;
use crate::io::PairKey;
use crate::model::{Label, LabeledExample, SourcePair};
use crate::solver::Dataset;

const STREAM_ENTITIES: u64 = 1;
const STREAM_SCALES: u64 = 2;
const STREAM_NOISE: u64 = 1 << 32;
const STREAM_PAIRS: u64 = 2 << 32;

/// Deterministic generator for one purpose stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sources: usize,
    pub n_entities: usize,
    pub dim: usize,
    pub noise_min: f64,
    pub noise_max: f64,
    /// Per-source scales are uniform on
    /// `[noise_min, noise_min + heterogeneity * (noise_max - noise_min)]`.
    pub heterogeneity: f64,
    pub pairs_per_source_pair: usize,
    pub match_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sources: 10,
            n_entities: 10_000,
            dim: 5,
            noise_min: 0.01,
            noise_max: 0.15,
            heterogeneity: 2.0,
            pairs_per_source_pair: 100,
            match_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources < 2 {
            return Err(Error::Argument(format!("need at least 2 sources, got {}", self.n_sources)));
        }
        if self.n_sources > 1 << 16 {
            return Err(Error::Argument(format!("too many sources: {}", self.n_sources)));
        }
        if self.n_entities < 2 {
            return Err(Error::Argument(format!("need at least 2 entities, got {}", self.n_entities)));
        }
        if self.dim == 0 {
            return Err(Error::Argument("dim must be positive".into()));
        }
        if !(self.noise_min >= 0.0 && self.noise_min <= self.noise_max && self.noise_max.is_finite()) {
            return Err(Error::Argument(format!(
                "noise range must satisfy 0 <= min <= max, got [{}, {}]",
                self.noise_min, self.noise_max
            )));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return Err(Error::Argument(format!("heterogeneity must be >= 0, got {}", self.heterogeneity)));
        }
        if !(self.match_fraction > 0.0 && self.match_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "match_fraction must lie in (0, 1), got {}",
                self.match_fraction
            )));
        }
        Ok(())
    }

    pub fn source_name(&self, index: usize) -> String {
        let width = (self.n_sources.saturating_sub(1)).to_string().len().max(2);
        format!("s{index:0width$}")
    }

    pub fn source_names(&self) -> Vec<String> {
        (0..self.n_sources).map(|s| self.source_name(s)).collect()
    }
}

pub fn entity_id(entity: usize) -> String {
    format!("e{entity:06}")
}

/// One generated record pair: the record of `entity_a` in `pair.a()` and
/// the record of `entity_b` in `pair.b()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairRef {
    pub pair: SourcePair,
    pub entity_a: usize,
    pub entity_b: usize,
}

impl PairRef {
    pub fn label(&self) -> Label {
        if self.entity_a == self.entity_b {
            Label::Match
        } else {
            Label::NonMatch
        }
    }
}

/// Latent entities, per-source noise scales and the noisy records.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub latent: Vec<Vec<f64>>,
    /// Ground-truth noise scale per source and attribute.
    pub noise_scales: Vec<Vec<f64>>,
    /// `records[s][e]` is source `s`'s view of entity `e`.
    pub records: Vec<Vec<Vec<f64>>>,
}

impl SynthWorld {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m, d) = (cfg.n_sources, cfg.n_entities, cfg.dim);
        let mut rng = stream_rng(cfg.seed, STREAM_ENTITIES);
        let latent: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();

        let spread = cfg.heterogeneity * (cfg.noise_max - cfg.noise_min);
        let mut rng = stream_rng(cfg.seed, STREAM_SCALES);
        let noise_scales: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| cfg.noise_min + rng.random::<f64>() * spread).collect())
            .collect();

        let records = noise_scales
            .iter()
            .enumerate()
            .map(|(s, scales)| {
                let mut rng = stream_rng(cfg.seed, STREAM_NOISE | s as u64);
                latent
                    .iter()
                    .map(|attrs| {
                        attrs
                            .iter()
                            .zip(scales)
                            .map(|(a, sigma)| {
                                let z: f64 = rng.sample(StandardNormal);
                                a + sigma * z
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(SynthWorld {
            config: cfg.clone(),
            latent,
            noise_scales,
            records,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.config.n_sources
    }

    pub fn features(&self, r: &PairRef) -> Vec<f64> {
        let xa = &self.records[r.pair.a()][r.entity_a];
        let xb = &self.records[r.pair.b()][r.entity_b];
        xa.iter().zip(xb).map(|(a, b)| -(a - b).abs() + 0.0).collect()
    }

    pub fn example(&self, r: &PairRef) -> LabeledExample {
        LabeledExample {
            x: self.features(r),
            pair: r.pair,
            y: r.label(),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.config.dim).map(|i| format!("attr{i}_absdiff")).collect()
    }

    pub fn dataset(&self, refs: &[PairRef]) -> Result<Dataset> {
        Dataset::new(refs.iter().map(|r| self.example(r)).collect(), self.n_sources(), self.config.dim)?
            .with_names(self.feature_names(), self.config.source_names())
    }

    pub fn sampler(&self) -> PairSampler<'_> {
        PairSampler {
            world: self,
            rngs: BTreeMap::new(),
            used: BTreeMap::new(),
        }
    }

    /// Records in (source, entity) order, in the ingestion layout.
    pub fn raw_records(&self) -> Vec<RawRecord> {
        let mut out = Vec::with_capacity(self.n_sources() * self.config.n_entities);
        for (s, recs) in self.records.iter().enumerate() {
            let source = self.config.source_name(s);
            for (e, attrs) in recs.iter().enumerate() {
                let id = entity_id(e);
                let mut r = RawRecord::new(source.clone(), id.clone(), id);
                r.attrs = attrs.clone();
                out.push(r);
            }
        }
        out
    }

    pub fn pair_key(&self, r: &PairRef) -> PairKey {
        PairKey {
            source_a: self.config.source_name(r.pair.a()),
            id_a: entity_id(r.entity_a),
            source_b: self.config.source_name(r.pair.b()),
            id_b: entity_id(r.entity_b),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            seed: self.config.seed,
            sources: self.config.source_names(),
            heterogeneity: self.config.heterogeneity,
            noise_scales: self.noise_scales.clone(),
        }
    }
}

/// Diagnostics sidecar for a generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub sources: Vec<String>,
    pub heterogeneity: f64,
    pub noise_scales: Vec<Vec<f64>>,
}

#[derive(Debug, Default)]
struct Used {
    matches: HashSet<usize>,
    non_matches: HashSet<(usize, usize)>,
}

/// Draws labeled pairs without repeats. Successive draws for the same
/// source pair (say, train then test) never overlap.
pub struct PairSampler<'w> {
    world: &'w SynthWorld,
    rngs: BTreeMap<SourcePair, ChaCha8Rng>,
    used: BTreeMap<SourcePair, Used>,
}

impl PairSampler<'_> {
    /// `n` pairs for `pair`, `round(n * match_fraction)` of them matches,
    /// interleaved so any prefix keeps roughly the same match fraction.
    pub fn sample(&mut self, pair: SourcePair, n: usize) -> Result<Vec<PairRef>> {
        pair.check(self.world.n_sources())?;
        let cfg = &self.world.config;
        let m = cfg.n_entities;
        let n_match = (n as f64 * cfg.match_fraction).round() as usize;
        let used = self.used.entry(pair).or_default();
        if n_match + used.matches.len() > m {
            return Err(Error::Argument(format!(
                "{n_match} matches requested for pair {pair} but only {} unused entities remain",
                m - used.matches.len()
            )));
        }
        let rng = self
            .rngs
            .entry(pair)
            .or_insert_with(|| stream_rng(cfg.seed, STREAM_PAIRS | (pair.a() as u64) << 16 | pair.b() as u64));

        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let is_match = interleave(k, n, n_match);
            let (ea, eb) = if is_match {
                loop {
                    let e = rng.random_range(0..m);
                    if used.matches.insert(e) {
                        break (e, e);
                    }
                }
            } else {
                loop {
                    let ea = rng.random_range(0..m);
                    let eb = rng.random_range(0..m - 1);
                    let eb = if eb >= ea { eb + 1 } else { eb };
                    if used.non_matches.insert((ea, eb)) {
                        break (ea, eb);
                    }
                }
            };
            out.push(PairRef {
                pair,
                entity_a: ea,
                entity_b: eb,
            });
        }
        Ok(out)
    }

    /// Samples every pair of an allocation, in pair order.
    pub fn sample_allocation(&mut self, allocation: &BTreeMap<SourcePair, usize>) -> Result<Vec<PairRef>> {
        let mut out = Vec::new();
        for (&pair, &n) in allocation {
            out.extend(self.sample(pair, n)?);
        }
        Ok(out)
    }
}

/// Whether slot `k` of `n` is a match when `n_match` matches are spread
/// evenly.
fn interleave(k: usize, n: usize, n_match: usize) -> bool {
    let before = (k * n_match + n / 2) / n;
    let after = ((k + 1) * n_match + n / 2) / n;
    after > before
}

/// Same count for every source pair.
pub fn uniform_allocation(n_sources: usize, per_pair: usize) -> BTreeMap<SourcePair, usize> {
    SourcePair::all(n_sources).into_iter().map(|p| (p, per_pair)).collect()
}

/// `total` spread as evenly as possible over all pairs (earlier pairs get
/// the remainder).
pub fn even_allocation(n_sources: usize, total: usize) -> BTreeMap<SourcePair, usize> {
    let pairs = SourcePair::all(n_sources);
    let base = total / pairs.len();
    let extra = total % pairs.len();
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, base + usize::from(i < extra)))
        .filter(|&(_, n)| n > 0)
        .collect()
}

/// Linear labeling budget: source `i` brings `per_source` labels on the
/// pair `(i, i + 1 mod N)`. Only `N` of the `N (N - 1) / 2` pairs are
/// labeled, and the total is exactly `N * per_source`.
pub fn ring_allocation(n_sources: usize, per_source: usize) -> BTreeMap<SourcePair, usize> {
    let mut out = BTreeMap::new();
    for i in 0..n_sources {
        let j = (i + 1) % n_sources;
        if let Ok(p) = SourcePair::new(i, j) {
            *out.entry(p).or_insert(0) += per_source;
        }
    }
    out
}

/// A generated dataset with its world and (possibly empty) test split.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub world: SynthWorld,
    pub train: Dataset,
    pub train_refs: Vec<PairRef>,
    pub test: Dataset,
    pub test_refs: Vec<PairRef>,
}

/// `pairs_per_source_pair` labeled pairs for every source pair.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    let world = SynthWorld::new(cfg)?;
    let mut sampler = world.sampler();
    let train_refs = sampler.sample_allocation(&uniform_allocation(cfg.n_sources, cfg.pairs_per_source_pair))?;
    let train = world.dataset(&train_refs)?;
    let test = world.dataset(&[])?;
    Ok(SynthDataset {
        world,
        train,
        train_refs,
        test,
        test_refs: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub labels_per_new_source: usize,
    /// Test pairs per dataset, spread evenly over all source pairs.
    pub test_pairs: usize,
}

/// One dataset per source count, sharing the seed so each is nested in
/// the next. Training labels follow [`ring_allocation`].
pub fn sweep_sources(cfg: &SynthConfig, sweep: &SweepConfig) -> Result<Vec<SynthDataset>> {
    if sweep.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("source counts must be strictly increasing".into()));
    }
    sweep
        .n_list
        .iter()
        .map(|&n| {
            let cfg = SynthConfig {
                n_sources: n,
                ..cfg.clone()
            };
            let world = SynthWorld::new(&cfg)?;
            let mut sampler = world.sampler();
            let train_refs = sampler.sample_allocation(&ring_allocation(n, sweep.labels_per_new_source))?;
            let test_refs = sampler.sample_allocation(&even_allocation(n, sweep.test_pairs))?;
            Ok(SynthDataset {
                train: world.dataset(&train_refs)?,
                test: world.dataset(&test_refs)?,
                world,
                train_refs,
                test_refs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_sources: 4,
            n_entities: 200,
            pairs_per_source_pair: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn interleave_counts_exactly() {
        for n in 1..40 {
            for m in 0..=n {
                assert_eq!((0..n).filter(|&k| interleave(k, n, m)).count(), m, "n={n} m={m}");
            }
        }
    }

    #[test]
    fn allocations() {
        assert_eq!(ring_allocation(2, 100).values().sum::<usize>(), 200);
        assert_eq!(ring_allocation(2, 100).len(), 1);
        assert_eq!(ring_allocation(4, 100).values().sum::<usize>(), 400);
        assert_eq!(ring_allocation(30, 7).len(), 30);
        let even = even_allocation(4, 20);
        assert_eq!(even.values().sum::<usize>(), 20);
        assert!(even.values().all(|&n| n == 3 || n == 4));
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.world, b.world);
    }

    #[test]
    fn labels_follow_entity_identity() {
        let d = generate(&small()).unwrap();
        for (r, ex) in d.train_refs.iter().zip(&d.train.examples) {
            assert_eq!(ex.y.is_match(), r.entity_a == r.entity_b);
            assert!(ex.x.iter().all(|&v| v <= 0.0));
        }
        let matches = d.train.examples.iter().filter(|e| e.y.is_match()).count();
        assert_eq!(matches, 6 * 10);
    }

    #[test]
    fn zero_heterogeneity_shares_scales() {
        let w = SynthWorld::new(&SynthConfig {
            heterogeneity: 0.0,
            ..small()
        })
        .unwrap();
        assert!(w.noise_scales.iter().all(|s| s == &w.noise_scales[0]));
    }

    #[test]
    fn noiseless_matches_have_zero_features() {
        let d = generate(&SynthConfig {
            noise_min: 0.0,
            noise_max: 0.0,
            ..small()
        })
        .unwrap();
        for ex in &d.train.examples {
            if ex.y.is_match() {
                assert!(ex.x.iter().all(|&v| v == 0.0));
            } else {
                assert!(ex.x.iter().sum::<f64>() < 0.0);
            }
        }
    }

    #[test]
    fn too_many_matches_is_an_argument_error() {
        let cfg = SynthConfig {
            n_entities: 10,
            pairs_per_source_pair: 40,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn train_and_test_draws_are_disjoint() {
        let w = SynthWorld::new(&small()).unwrap();
        let mut s = w.sampler();
        let p = SourcePair::new(0, 3).unwrap();
        let a: HashSet<_> = s.sample(p, 100).unwrap().into_iter().collect();
        let b: HashSet<_> = s.sample(p, 100).unwrap().into_iter().collect();
        assert_eq!(a.len(), 100);
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { n_sources: 1, ..small() }.validate().is_err());
        assert!(SynthConfig { match_fraction: 1.0, ..small() }.validate().is_err());
        assert!(SynthConfig { noise_min: 0.2, noise_max: 0.1, ..small() }.validate().is_err());
        assert_eq!(SynthConfig { n_sources: 120, ..small() }.source_name(7), "s007");
    }
}
