//! Segmentation and faux-conversation transcripts.
//!
//! A document is cut into an even number of token-aligned segments. All but
//! the last become alternating user/assistant turns of a single prompt; the
//! last segment is held out as the reference the model is asked to produce.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Token, TokenizedDocument};

pub const DEFAULT_SYSTEM_PROMPT: &str = "complete the paragraph";
pub const DEFAULT_SHOTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("segment count must be even, got {0}")]
    OddSegmentCount(usize),
    #[error("segment count must be at least 2, got {0}")]
    TooFewSegments(usize),
    #[error("document has {tokens} tokens, fewer than the {segments} segments requested")]
    DocumentTooShort { tokens: usize, segments: usize },
    #[error("segmentation was built for document \"{expected}\" ({expected_len} tokens), not \"{actual}\" ({actual_len} tokens)")]
    Mismatch {
        expected: String,
        expected_len: usize,
        actual: String,
        actual_len: usize,
    },
    #[error("token range {start}..{end} is outside a document of {len} tokens")]
    OutOfBounds { start: usize, end: usize, len: usize },
}

/// Checks that `n` is a legal segment count.
pub fn validate_shots(n: usize) -> Result<(), PromptError> {
    if n < 2 {
        return Err(PromptError::TooFewSegments(n));
    }
    if !n.is_multiple_of(2) {
        return Err(PromptError::OddSegmentCount(n));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    doc_id: String,
    token_count: usize,
    segments: Vec<Range<usize>>,
}

impl Segmentation {
    pub fn n(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|r| r.len()).collect()
    }

    pub fn reference(&self) -> Range<usize> {
        self.segments[self.segments.len() - 1].clone()
    }
}

/// Splits `doc` into `n` contiguous token ranges. The first `m mod n`
/// ranges get one extra token.
pub fn segment(doc: &TokenizedDocument, n: usize) -> Result<Segmentation, PromptError> {
    validate_shots(n)?;
    let m = doc.len();
    if m < n {
        return Err(PromptError::DocumentTooShort { tokens: m, segments: n });
    }
    let base = m / n;
    let extra = m % n;
    let mut segments = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        segments.push(start..start + len);
        start += len;
    }
    debug_assert_eq!(start, m);
    Ok(Segmentation {
        doc_id: doc.id.clone(),
        token_count: m,
        segments,
    })
}

/// Exact source text covered by `range`, internal whitespace included.
pub fn render_segment(doc: &TokenizedDocument, range: Range<usize>) -> Result<String, PromptError> {
    doc.slice(range.clone())
        .map(str::to_string)
        .ok_or(PromptError::OutOfBounds {
            start: range.start,
            end: range.end,
            len: doc.len(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub doc_id: String,
    pub system_prompt: String,
    pub turns: Vec<Turn>,
    pub reference_text: String,
    pub reference_tokens: Vec<String>,
}

impl Transcript {
    /// Segment count the transcript was built from.
    pub fn shots(&self) -> usize {
        self.turns.len() + 1
    }

    /// Human-readable dump used by the `transcript` debug command.
    pub fn render(&self) -> String {
        let mut out = format!("System: {}\n", self.system_prompt);
        for turn in &self.turns {
            let label = match turn.role {
                Role::User => "User",
                Role::Assistant => "LLM",
                Role::System => "System",
            };
            out.push_str(&format!("{label}: {}\n", turn.text));
        }
        out.push_str("LLM: (generates completion)\n");
        out.push_str(&format!("\n[reference, {} tokens]\n{}\n", self.reference_tokens.len(), self.reference_text));
        out
    }
}

/// Builds the single-prompt conversation: segments 1, 3, .., n-1 as user
/// turns, segments 2, 4, .., n-2 as assistant turns, segment n held out.
pub fn build_transcript(
    doc: &TokenizedDocument,
    seg: &Segmentation,
    system_prompt: &str,
) -> Result<Transcript, PromptError> {
    if seg.doc_id != doc.id || seg.token_count != doc.len() {
        return Err(PromptError::Mismatch {
            expected: seg.doc_id.clone(),
            expected_len: seg.token_count,
            actual: doc.id.clone(),
            actual_len: doc.len(),
        });
    }
    let n = seg.n();
    let mut turns = Vec::with_capacity(n - 1);
    for (idx, range) in seg.segments[..n - 1].iter().enumerate() {
        let role = if idx % 2 == 0 { Role::User } else { Role::Assistant };
        turns.push(Turn {
            role,
            text: render_segment(doc, range.clone())?,
        });
    }
    let reference = seg.reference();
    let reference_tokens = doc.tokens()[reference.clone()]
        .iter()
        .map(|t| t.text.clone())
        .collect();
    Ok(Transcript {
        doc_id: doc.id.clone(),
        system_prompt: system_prompt.to_string(),
        turns,
        reference_text: render_segment(doc, reference)?,
        reference_tokens,
    })
}

/// A backend's completion and its word tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedCompletion {
    pub text: String,
    pub tokens: Vec<Token>,
}

impl GeneratedCompletion {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, tokens }
    }

    pub fn token_strings(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}
