//! Keyword-overlap tool recommendation.

use std::collections::BTreeSet;

use super::wire::FunctionDoc;

pub const RECOMMEND_THRESHOLD: f64 = 0.08;
pub const RECOMMEND_TOP_K: usize = 5;

/// Function words ignored on both sides of the comparison.
pub const STOPLIST: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "i", "if", "in", "into", "is",
    "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "so", "some", "than", "that", "the", "their",
    "them", "then", "there", "these", "they", "this", "to", "up", "us", "was", "we", "were", "what", "when", "which",
    "while", "who", "will", "with", "would", "you", "your",
];

/// Lowercased alphanumeric words minus the stoplist. Underscores split words,
/// so `SHELL_EXEC` contributes `shell` and `exec`.
pub fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPLIST.contains(&w.as_str()))
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn score(context: &BTreeSet<String>, f: &FunctionDoc) -> f64 {
    jaccard(context, &word_set(&format!("{} {}", f.name, f.documentation)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub module: String,
    pub function: FunctionDoc,
    pub score: f64,
}

/// Ranks `candidates` (module, function) against `context`; stable for equal scores.
pub fn recommend<'a>(
    context: &str,
    candidates: impl IntoIterator<Item = (&'a str, &'a FunctionDoc)>,
) -> Vec<Recommendation> {
    let ctx = word_set(context);
    if ctx.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<Recommendation> = candidates
        .into_iter()
        .map(|(m, f)| Recommendation {
            module: m.to_string(),
            function: f.clone(),
            score: score(&ctx, f),
        })
        .filter(|r| r.score >= RECOMMEND_THRESHOLD)
        .collect();
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    scored.truncate(RECOMMEND_TOP_K);
    scored
}
