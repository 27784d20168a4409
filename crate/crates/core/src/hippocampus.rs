//! Global associative memory: hashed bag-of-words vectors and cosine search.

use serde::{Deserialize, Serialize};

use crate::clock::Millis;

pub const DIMENSIONS: usize = 256;
pub const SIMILARITY_FLOOR: f64 = 0.15;
pub const DEFAULT_TOP_K: usize = 3;
const FRAGMENT_CHARS: usize = 400;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased alphanumeric words.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Each word hashes to one of 256 buckets; a bucket holding a word `tf`
/// times gets weight `1 + ln tf`; the vector is then L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut counts = std::collections::BTreeMap::<String, u32>::new();
        for t in tokens(text) {
            *counts.entry(t).or_default() += 1;
        }
        let mut v = vec![0.0; DIMENSIONS];
        for (word, tf) in counts {
            let bucket = (fnv1a(word.as_bytes()) % DIMENSIONS as u64) as usize;
            v[bucket] += 1.0 + f64::from(tf).ln();
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    pub text: String,
    pub embedding: Vec<f64>,
    /// Node id as text, or "user".
    pub source: String,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub similarity: f64,
    pub record: &'a MemoryRecord,
}

pub struct Hippocampus {
    records: Vec<MemoryRecord>,
    embedder: Box<dyn Embedder>,
    pub top_k: usize,
}

impl std::fmt::Debug for Hippocampus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hippocampus")
            .field("records", &self.records.len())
            .finish()
    }
}

impl Default for Hippocampus {
    fn default() -> Self {
        Hippocampus::new(Box::new(HashingEmbedder))
    }
}

impl Hippocampus {
    pub fn new(embedder: Box<dyn Embedder>) -> Self {
        Hippocampus {
            records: Vec::new(),
            embedder,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn with_records(mut self, records: Vec<MemoryRecord>) -> Self {
        self.records = records;
        self
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    /// Stores a record. Identical texts are kept as separate events.
    pub fn ingest(&mut self, text: &str, source: &str, at: Millis) -> &MemoryRecord {
        let id = self.records.last().map_or(0, |r| r.id + 1);
        self.records.push(MemoryRecord {
            id,
            text: text.to_string(),
            embedding: self.embedder.embed(text),
            source: source.to_string(),
            created_at: at,
        });
        self.records.last().expect("just pushed")
    }

    /// Every record at or above the similarity floor, best first; ties go
    /// to the newer record.
    fn ranked(&self, query: &str) -> Vec<Hit<'_>> {
        let q = self.embedder.embed(query);
        let mut hits: Vec<Hit<'_>> = self
            .records
            .iter()
            .map(|r| Hit {
                similarity: cosine(&q, &r.embedding),
                record: r,
            })
            .filter(|h| h.similarity >= SIMILARITY_FLOOR)
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.record.id.cmp(&a.record.id))
        });
        hits
    }

    /// Top `k` records at or above the similarity floor.
    pub fn search(&self, query: &str, k: usize) -> Vec<Hit<'_>> {
        let mut hits = self.ranked(query);
        hits.truncate(k.max(1));
        hits
    }

    /// The MemoryFragment note body for `query`, or `None` when nothing qualifies.
    pub fn fragments(&self, query: &str, now: Millis, exclude: &[&str]) -> Option<String> {
        let hits: Vec<Hit<'_>> = self
            .ranked(query)
            .into_iter()
            .filter(|h| !exclude.contains(&h.record.text.trim()))
            .take(self.top_k)
            .collect();
        if hits.is_empty() {
            return None;
        }
        let lines: Vec<String> = hits
            .iter()
            .map(|h| {
                let age = (now - h.record.created_at).max(0) / 1000;
                let mut text: String = h.record.text.chars().take(FRAGMENT_CHARS).collect();
                if text.len() < h.record.text.len() {
                    text.push_str("...");
                }
                format!(
                    "- ({:.2}, from {}, {age}s ago) {}",
                    h.similarity,
                    h.record.source,
                    text.replace('\n', " ")
                )
            })
            .collect();
        Some(lines.join("\n"))
    }
}
