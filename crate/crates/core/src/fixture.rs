//! Toy multi-source movie catalog.
//!
//! Stands in for a crawled movie corpus: one list of movies seen through
//! six sources, each with its own coverage and its own way of garbling
//! titles, years, runtimes, cast and directors. A record's id is the id
//! of the movie it describes, so two records match exactly when their ids
//! agree.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocking::{generate_candidates, BlockingConfig, BlockingStats};
use crate::error::Result;
use crate::features::{featurize_pair, normalize_record, FeatureSpec, RawRecord};
use crate::io::{PairKey, SourceRegistry};
use crate::model::{Label, LabeledExample, SourcePair};
use crate::solver::Dataset;
use crate::synth::stream_rng;

pub const SOURCES: [&str; 6] = ["imdb", "amg", "flixster", "msn", "netflix", "itunes"];

/// The pair evaluated in the precision/recall experiments.
pub const EVAL_PAIR: (&str, &str) = ("imdb", "itunes");

const WORDS: &[&str] = &[
    "night", "day", "city", "river", "dark", "light", "love", "war", "king", "queen", "ghost", "dream", "blood",
    "fire", "ice", "storm", "summer", "winter", "road", "house", "garden", "star", "moon", "sun", "shadow",
    "secret", "last", "first", "lost", "wild", "silent", "broken", "golden", "silver", "red", "blue", "black",
    "white", "iron", "glass", "stone", "heart", "eye", "hand", "girl", "boy", "man", "woman", "doctor",
    "soldier", "stranger", "hunter", "thief", "angel", "devil", "island", "ocean", "mountain", "desert",
    "forest", "train", "hotel", "street", "bridge", "tower", "empire", "kingdom", "journey", "return",
    "escape", "promise", "memory", "truth", "game", "dance", "song", "letter", "mirror", "window", "door",
    "paradise", "harbor", "frontier", "midnight", "morning", "evening", "west", "east", "north", "south",
    "american", "french", "paris", "london", "texas", "tokyo", "vegas", "brooklyn", "chicago", "sky",
    "thunder", "rain", "wolf", "tiger", "dragon", "eagle", "horse", "spider", "machine", "planet", "alien",
];

const SYLLABLES: &[&str] = &[
    "an", "ber", "cal", "dor", "el", "fin", "gar", "hal", "is", "jo", "kel", "lan", "mar", "nor", "ol", "per",
    "quin", "ros", "sel", "tor", "ul", "ven", "wil", "yor", "zan", "bri", "cas", "del", "ev", "fal",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub n_movies: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { n_movies: 300, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Movie {
    title: String,
    alt_title: Option<String>,
    year: i32,
    runtime: i32,
    cast: Vec<String>,
    directors: Vec<String>,
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn name_part<R: Rng>(syllables: usize, rng: &mut R) -> String {
    let s: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    capitalize(&s)
}

fn person<R: Rng>(rng: &mut R) -> String {
    let first = name_part(2, rng);
    let n = rng.random_range(2..=3);
    let last = name_part(n, rng);
    format!("{first} {last}")
}

fn movies<R: Rng>(n: usize, rng: &mut R) -> Vec<Movie> {
    let actors: Vec<String> = (0..n / 2 + 1).map(|_| person(rng)).collect();
    let directors: Vec<String> = (0..n / 6 + 1).map(|_| person(rng)).collect();
    let mut out: Vec<Movie> = Vec::with_capacity(n);
    for i in 0..n {
        let reuse = i > 10 && rng.random::<f64>() < 0.35;
        let title = if reuse {
            // Remake or sequel of an earlier movie: same words, new people.
            let base = out[rng.random_range(0..i)].title.clone();
            if rng.random::<bool>() {
                base
            } else {
                format!("{base} {}", rng.random_range(2..=4))
            }
        } else {
            let k = rng.random_range(1..=3);
            let mut words: Vec<String> = WORDS.choose_multiple(rng, k).map(|w| capitalize(w)).collect();
            if rng.random::<f64>() < 0.3 {
                words.insert(0, "The".into());
            }
            words.join(" ")
        };
        let alt_title = (rng.random::<f64>() < 0.15).then(|| {
            let k = rng.random_range(1..=2);
            WORDS.choose_multiple(rng, k).map(|w| capitalize(w)).collect::<Vec<_>>().join(" ")
        });
        let n_cast = rng.random_range(3..=8);
        let n_dir = if rng.random::<f64>() < 0.1 { 2 } else { 1 };
        out.push(Movie {
            title,
            alt_title,
            year: rng.random_range(1990..=2010),
            runtime: rng.random_range(85..=130),
            cast: actors.choose_multiple(rng, n_cast).cloned().collect(),
            directors: directors.choose_multiple(rng, n_dir).cloned().collect(),
        });
    }
    out
}

fn typo<R: Rng>(s: &str, rng: &mut R) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() < 4 {
        return s.to_string();
    }
    let drop = rng.random_range(1..chars.len() - 1);
    chars.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, c)| c).collect()
}

/// How one source presents a movie, or `None` when it does not list it.
fn view<R: Rng>(source: usize, m: &Movie, rng: &mut R) -> Option<(String, Vec<String>, Option<i32>, Option<i32>, Vec<String>, Vec<String>)> {
    let coverage = [0.95, 0.85, 0.8, 0.85, 0.9, 0.85][source];
    if rng.random::<f64>() >= coverage {
        return None;
    }
    let mut title = m.title.clone();
    let mut alt: Vec<String> = m.alt_title.iter().cloned().collect();
    let mut year = Some(m.year);
    let mut runtime = Some(m.runtime);
    let mut cast = m.cast.clone();
    let mut directors = m.directors.clone();
    match SOURCES[source] {
        "imdb" => {}
        "amg" => {
            // Lists the home-video release year.
            year = Some(m.year + rng.random_range(0..=4));
            cast.truncate(4);
        }
        "flixster" => {
            if rng.random::<f64>() < 0.5 {
                runtime = None;
            }
            if rng.random::<f64>() < 0.25 {
                title = format!("{title}: {}", capitalize(WORDS.choose(rng).unwrap()));
            }
            cast.truncate(3);
            alt.clear();
            for d in &mut directors {
                if rng.random::<f64>() < 0.3 {
                    *d = typo(d, rng);
                }
            }
        }
        "msn" => {
            if rng.random::<f64>() < 0.4 {
                directors.clear();
            }
            let words: Vec<&str> = title.split(' ').collect();
            if words.len() > 1 && rng.random::<f64>() < 0.3 {
                let drop = rng.random_range(0..words.len());
                title = words.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, w)| *w).collect::<Vec<_>>().join(" ");
            }
            runtime = Some(m.runtime + rng.random_range(-12..=12));
        }
        "netflix" => {
            if rng.random::<f64>() < 0.2 {
                year = None;
            }
            cast.truncate(5);
            if rng.random::<f64>() < 0.25 {
                cast.clear();
            }
            for c in &mut cast {
                if rng.random::<f64>() < 0.1 {
                    *c = typo(c, rng);
                }
            }
        }
        "itunes" => {
            if let Some(rest) = title.strip_prefix("The ") {
                title = format!("{rest}, The");
            }
            runtime = Some(m.runtime + 8);
            if rng.random::<f64>() < 0.3 {
                year = None;
            }
            directors.truncate(1);
            cast.truncate(1);
            if rng.random::<f64>() < 0.4 {
                title = typo(&title, rng);
            }
        }
        _ => unreachable!(),
    }
    Some((title, alt, year, runtime, cast, directors))
}

/// Raw records, grouped by source in [`SOURCES`] order, ids `m0000`...
pub fn generate_records(cfg: &FixtureConfig) -> Vec<RawRecord> {
    let mut rng = stream_rng(cfg.seed, 1);
    let catalog = movies(cfg.n_movies, &mut rng);
    let mut out = Vec::new();
    for (s, name) in SOURCES.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, 0x100 | s as u64);
        for (i, m) in catalog.iter().enumerate() {
            if let Some((title, alt_titles, year, runtime, cast, directors)) = view(s, m, &mut rng) {
                let mut r = RawRecord::new(*name, format!("m{i:04}"), title);
                r.alt_titles = alt_titles;
                r.year = year;
                r.runtime = runtime;
                r.cast = cast;
                r.directors = directors;
                out.push(r);
            }
        }
    }
    out
}

/// One blocked candidate with its features and true label.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub key: PairKey,
    pub example: LabeledExample,
}

/// Featurized blocking output over a record set whose ids encode identity.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub registry: SourceRegistry,
    pub feature_names: Vec<String>,
    pub by_pair: BTreeMap<SourcePair, Vec<Candidate>>,
    pub stats: BTreeMap<String, f64>,
}

impl CandidatePool {
    pub fn dataset(&self, candidates: &[&Candidate]) -> Result<Dataset> {
        Dataset::new(
            candidates.iter().map(|c| c.example.clone()).collect(),
            self.registry.len(),
            self.feature_names.len(),
        )?
        .with_names(self.feature_names.clone(), self.registry.names().to_vec())
    }

    pub fn eval_pair(&self) -> Result<SourcePair> {
        self.registry.pair(EVAL_PAIR.0, EVAL_PAIR.1)
    }
}

/// Blocks and featurizes `records`; labels come from id equality.
pub fn candidate_pool(records: &[RawRecord], spec: &FeatureSpec, blocking: &BlockingConfig) -> Result<(CandidatePool, BlockingStats)> {
    let registry = SourceRegistry::new(SOURCES.iter().map(|s| s.to_string()).collect())?;
    registry.check_known(records.iter().map(|r| r.source.as_str()))?;
    let mut by_source: Vec<Vec<RawRecord>> = vec![Vec::new(); registry.len()];
    for r in records {
        let s = registry.index(&r.source).expect("checked above");
        by_source[s].push(normalize_record(r)?);
    }
    let lookup: Vec<BTreeMap<&str, &RawRecord>> = by_source
        .iter()
        .map(|rs| rs.iter().map(|r| (r.id.as_str(), r)).collect())
        .collect();
    let (cands, stats) = generate_candidates(&by_source, blocking)?;
    let mut by_pair: BTreeMap<SourcePair, Vec<Candidate>> = BTreeMap::new();
    for c in cands {
        let ra = lookup[c.source_a][c.id_a.as_str()];
        let rb = lookup[c.source_b][c.id_b.as_str()];
        let pair = SourcePair::new(c.source_a, c.source_b)?;
        let y = if c.id_a == c.id_b { Label::Match } else { Label::NonMatch };
        by_pair.entry(pair).or_default().push(Candidate {
            key: PairKey {
                source_a: registry.names()[c.source_a].clone(),
                id_a: c.id_a,
                source_b: registry.names()[c.source_b].clone(),
                id_b: c.id_b,
            },
            example: LabeledExample {
                x: featurize_pair(ra, rb, spec),
                pair,
                y,
            },
        });
    }
    let mut summary = BTreeMap::new();
    summary.insert("candidates".into(), stats.candidates as f64);
    summary.insert("reduction_ratio".into(), stats.reduction_ratio());
    Ok((
        CandidatePool {
            registry,
            feature_names: spec.names(),
            by_pair,
            stats: summary,
        },
        stats,
    ))
}

/// `n` candidates of one pair, half matches where possible, drawn without
/// replacement from `pool` (which is consumed).
pub fn draw_balanced<R: Rng>(pool: &mut Vec<Candidate>, n: usize, rng: &mut R) -> Vec<Candidate> {
    let (mut pos, mut neg): (Vec<Candidate>, Vec<Candidate>) = pool.drain(..).partition(|c| c.example.y.is_match());
    pos.shuffle(rng);
    neg.shuffle(rng);
    let want_pos = (n / 2 + n % 2).min(pos.len());
    let want_neg = (n - want_pos).min(neg.len());
    let want_pos = (n - want_neg).min(pos.len());
    let mut out: Vec<Candidate> = pos.drain(..want_pos).collect();
    out.extend(neg.drain(..want_neg));
    pool.extend(pos);
    pool.extend(neg);
    out
}

/// Removes `n` random candidates from `pool` and returns them.
pub fn split_off_random<R: Rng>(pool: &mut Vec<Candidate>, n: usize, rng: &mut R) -> Vec<Candidate> {
    pool.shuffle(rng);
    let n = n.min(pool.len());
    pool.drain(..n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_covers_all_sources() {
        let a = generate_records(&FixtureConfig::default());
        assert_eq!(a, generate_records(&FixtureConfig::default()));
        for s in SOURCES {
            let n = a.iter().filter(|r| r.source == s).count();
            assert!(n > 200 && n <= 300, "{s}: {n}");
        }
    }

    #[test]
    fn blocking_keeps_matches_sharing_a_token() {
        let records = generate_records(&FixtureConfig { n_movies: 120, seed: 3 });
        let (pool, stats) = candidate_pool(&records, &FeatureSpec::default(), &BlockingConfig::default()).unwrap();
        assert!(stats.reduction_ratio() > 0.5);
        let matches: usize = pool.by_pair.values().flatten().filter(|c| c.example.y.is_match()).count();
        assert!(matches > 0);
        for cands in pool.by_pair.values() {
            for c in cands {
                assert_eq!(c.example.y.is_match(), c.key.id_a == c.key.id_b);
            }
        }
    }

    #[test]
    fn balanced_draw_is_disjoint_from_rest() {
        let records = generate_records(&FixtureConfig { n_movies: 120, seed: 3 });
        let (mut pool, _) = candidate_pool(&records, &FeatureSpec::default(), &BlockingConfig::default()).unwrap();
        let p = pool.eval_pair().unwrap();
        let cands = pool.by_pair.get_mut(&p).unwrap();
        let before = cands.len();
        let mut rng = stream_rng(1, 1);
        let drawn = draw_balanced(cands, 20, &mut rng);
        assert_eq!(drawn.len(), 20);
        assert_eq!(drawn.iter().filter(|c| c.example.y.is_match()).count(), 10);
        assert_eq!(cands.len() + 20, before);
        assert!(drawn.iter().all(|d| !cands.contains(d)));
    }
}
