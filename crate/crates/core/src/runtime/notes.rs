//! Per-turn dynamic notes appended after all stable context.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoteTag {
    VariableList,
    Clock,
    WorkingDirectory,
    OverflowWarning,
    ToolRecommendation,
    MemoryFragment,
}

impl NoteTag {
    pub fn heading(self) -> &'static str {
        match self {
            NoteTag::VariableList => "Variables",
            NoteTag::Clock => "Clock",
            NoteTag::WorkingDirectory => "Working directory",
            NoteTag::OverflowWarning => "Context overflow warning",
            NoteTag::ToolRecommendation => "Recommended tools",
            NoteTag::MemoryFragment => "Memory fragments",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteBlock {
    pub tag: NoteTag,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DynamicNotes {
    pub blocks: Vec<NoteBlock>,
}

impl DynamicNotes {
    pub fn push(&mut self, tag: NoteTag, body: impl Into<String>) {
        self.blocks.push(NoteBlock { tag, body: body.into() });
    }

    pub fn get(&self, tag: NoteTag) -> Option<&NoteBlock> {
        self.blocks.iter().find(|b| b.tag == tag)
    }

    pub fn has(&self, tag: NoteTag) -> bool {
        self.get(tag).is_some()
    }

    pub fn tags(&self) -> Vec<NoteTag> {
        self.blocks.iter().map(|b| b.tag).collect()
    }

    pub fn render(&self) -> String {
        self.blocks
            .iter()
            .map(|b| format!("## {}\n{}", b.tag.heading(), b.body))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Default token estimator: one token per four characters, rounded up.
pub fn estimate_tokens(chars: usize) -> usize {
    chars.div_ceil(4)
}

/// True when `usage` has reached `threshold` of `budget`.
pub fn over_threshold(usage: usize, budget: usize, threshold: f64) -> bool {
    usage as f64 >= threshold * budget as f64
}

pub fn overflow_text(usage: usize, budget: usize, threshold: f64) -> String {
    format!(
        "Estimated context usage is {usage} of {budget} tokens ({:.0}%), at or above the {:.0}% threshold. \
         Keep what you still need in variables, then issue @COMPRESS with a summary of your progress.",
        100.0 * usage as f64 / budget as f64,
        100.0 * threshold
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_rounds_up() {
        assert_eq!(estimate_tokens(0), 0);
        assert_eq!(estimate_tokens(1), 1);
        assert_eq!(estimate_tokens(4), 1);
        assert_eq!(estimate_tokens(5), 2);
    }

    #[test]
    fn threshold_is_inclusive() {
        // 0.8 * 1000 = 800
        assert!(!over_threshold(799, 1000, 0.8));
        assert!(over_threshold(800, 1000, 0.8));
        assert!(over_threshold(950, 1000, 0.8));
    }

    #[test]
    fn render_layout() {
        let mut n = DynamicNotes::default();
        n.push(NoteTag::VariableList, "a (12 chars), b (4 chars)");
        n.push(NoteTag::Clock, "2024-01-01T00:00:00.000Z");
        assert_eq!(
            n.render(),
            "## Variables\na (12 chars), b (4 chars)\n\n## Clock\n2024-01-01T00:00:00.000Z"
        );
    }
}
