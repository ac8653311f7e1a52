//! Candidate generation by blocking on non-stop title words.
//!
//! Every record is hashed to the tokens of its title and alternate titles,
//! minus stopwords. Two records from different sources become a candidate
//! pair when they share at least one block.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::features::RawRecord;

/// Minimal English stopword list: articles, conjunctions, prepositions and
/// a few pronouns.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "nor", "so", "yet", "of", "in", "on", "at", "to", "for", "from", "by",
    "with", "about", "as", "into", "onto", "upon", "over", "under", "after", "before", "between", "through",
    "during", "without", "within", "against", "among", "up", "down", "out", "off", "is", "are", "was", "be", "it",
    "its", "this", "that", "these", "those", "i", "you", "he", "she", "we", "they", "my", "his", "her", "our",
    "their",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BlockingConfig {
    pub stopwords: BTreeSet<String>,
    /// Tokens found in more than this fraction of a source's titles are
    /// treated as stopwords.
    pub frequent_fraction: f64,
    /// The frequency rule only applies to tokens seen in more titles than this.
    pub frequent_min_count: usize,
    /// Blocks holding more records than this are skipped.
    pub max_block_size: usize,
}

impl Default for BlockingConfig {
    fn default() -> Self {
        BlockingConfig {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            frequent_fraction: 0.05,
            frequent_min_count: 2,
            max_block_size: 1000,
        }
    }
}

/// Title and alternate-title tokens of a normalized record, minus stopwords.
pub fn block_keys(r: &RawRecord, stopwords: &BTreeSet<String>) -> BTreeSet<String> {
    r.title_tokens()
        .into_iter()
        .filter(|t| !stopwords.contains(*t))
        .map(String::from)
        .collect()
}

/// A cross-source record pair, ordered by source index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidatePair {
    pub source_a: usize,
    pub id_a: String,
    pub source_b: usize,
    pub id_b: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockingStats {
    pub records: usize,
    pub unblockable: usize,
    pub blocks: usize,
    pub skipped_blocks: usize,
    pub candidates: usize,
    pub cross_product: usize,
}

impl BlockingStats {
    /// Fraction of the cross-source pair space pruned away.
    pub fn reduction_ratio(&self) -> f64 {
        if self.cross_product == 0 {
            0.0
        } else {
            1.0 - self.candidates as f64 / self.cross_product as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockIndex {
    pub blocks: BTreeMap<String, Vec<(usize, String)>>,
    pub stopwords: BTreeSet<String>,
}

impl BlockIndex {
    /// `records_by_source[s]` holds the normalized records of source `s`.
    pub fn build(records_by_source: &[Vec<RawRecord>], cfg: &BlockingConfig) -> (Self, usize) {
        let mut stopwords = cfg.stopwords.clone();
        for records in records_by_source {
            let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
            for r in records {
                for t in r.title_tokens() {
                    *freq.entry(t).or_insert(0) += 1;
                }
            }
            let limit = cfg.frequent_fraction * records.len() as f64;
            for (t, c) in freq {
                if c > cfg.frequent_min_count && c as f64 > limit {
                    stopwords.insert(t.to_string());
                }
            }
        }

        let mut blocks: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        let mut unblockable = 0;
        for (s, records) in records_by_source.iter().enumerate() {
            for r in records {
                let keys = block_keys(r, &stopwords);
                if keys.is_empty() {
                    unblockable += 1;
                }
                for k in keys {
                    blocks.entry(k).or_default().push((s, r.id.clone()));
                }
            }
        }
        (BlockIndex { blocks, stopwords }, unblockable)
    }
}

/// Deduplicated, sorted candidate pairs over at least two sources.
pub fn generate_candidates(
    records_by_source: &[Vec<RawRecord>],
    cfg: &BlockingConfig,
) -> Result<(Vec<CandidatePair>, BlockingStats)> {
    if records_by_source.len() < 2 {
        return Err(Error::Argument(format!(
            "blocking needs at least 2 sources, got {}",
            records_by_source.len()
        )));
    }
    let (index, unblockable) = BlockIndex::build(records_by_source, cfg);
    let mut pairs = BTreeSet::new();
    let mut skipped = 0;
    for members in index.blocks.values() {
        if members.len() > cfg.max_block_size {
            skipped += 1;
            continue;
        }
        for (i, (sa, ida)) in members.iter().enumerate() {
            for (sb, idb) in &members[i + 1..] {
                if sa == sb {
                    continue;
                }
                let pair = if sa < sb {
                    CandidatePair {
                        source_a: *sa,
                        id_a: ida.clone(),
                        source_b: *sb,
                        id_b: idb.clone(),
                    }
                } else {
                    CandidatePair {
                        source_a: *sb,
                        id_a: idb.clone(),
                        source_b: *sa,
                        id_b: ida.clone(),
                    }
                };
                pairs.insert(pair);
            }
        }
    }

    let sizes: Vec<usize> = records_by_source.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let same: usize = sizes.iter().map(|n| n * n).sum();
    let stats = BlockingStats {
        records: total,
        unblockable,
        blocks: index.blocks.len() - skipped,
        skipped_blocks: skipped,
        candidates: pairs.len(),
        cross_product: (total * total - same) / 2,
    };
    Ok((pairs.into_iter().collect(), stats))
}
