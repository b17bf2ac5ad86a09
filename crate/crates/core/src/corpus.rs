//! Cohort-labelled document collections.
//!
//! A corpus file holds one JSON object per line. Each record names a
//! document, the cohort it belongs to (`pre` for text a model was likely
//! trained on, `post` for text published after its cutoff) and the full
//! source text. Documents are tokenized into whitespace-delimited words
//! that keep their character spans, so any run of tokens can be rendered
//! back as the exact original slice.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field \"{field}\"")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: invalid field \"{field}\": {message}")]
    InvalidField {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("duplicate document id \"{0}\"")]
    DuplicateId(String),
    #[error("document \"{0}\" contains no words")]
    EmptyDocument(String),
}

/// Which side of a model's training cutoff a document falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Pre,
    Post,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Pre => "pre",
            Cohort::Post => "post",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre" => Ok(Cohort::Pre),
            "post" => Ok(Cohort::Post),
            other => Err(format!("expected \"pre\" or \"post\", got \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub cohort: Cohort,
    #[serde(default)]
    pub source: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<NaiveDate>,
}

/// A word together with its half-open character span in the source text.
///
/// Spans are byte offsets, so `&text[token.span()]` is always valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn span(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Splits `text` into maximal runs of non-whitespace characters.
///
/// Case and punctuation are kept as-is. Every Unicode whitespace character
/// acts as a separator.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                tokens.push(Token {
                    text: text[s..idx].to_string(),
                    start: s,
                    end: idx,
                });
                start = None;
            }
            (false, None) => start = Some(idx),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: text[s..].to_string(),
            start: s,
            end: text.len(),
        });
    }
    tokens
}

/// Optional token normalization applied before verbatim comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Lowercase,
}

impl Normalization {
    pub fn apply<'a, I>(self, tokens: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        match self {
            Normalization::None => tokens.into_iter().map(str::to_string).collect(),
            Normalization::Lowercase => tokens.into_iter().map(str::to_lowercase).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDocument {
    pub id: String,
    pub cohort: Cohort,
    text: String,
    tokens: Vec<Token>,
}

impl TokenizedDocument {
    pub fn new(doc: &Document) -> Result<Self, CorpusError> {
        Self::from_parts(doc.id.clone(), doc.cohort, doc.text.clone())
    }

    pub fn from_parts(
        id: impl Into<String>,
        cohort: Cohort,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(CorpusError::EmptyDocument(id));
        }
        Ok(Self {
            id,
            cohort,
            text,
            tokens,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_strings(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Exact source slice covering the tokens in `range`, or `None` when the
    /// range is empty or out of bounds.
    pub fn slice(&self, range: Range<usize>) -> Option<&str> {
        if range.start >= range.end || range.end > self.tokens.len() {
            return None;
        }
        let start = self.tokens[range.start].start;
        let end = self.tokens[range.end - 1].end;
        Some(&self.text[start..end])
    }
}

/// Keeps documents with strictly more than `min_words` tokens.
pub fn filter_by_length(docs: Vec<TokenizedDocument>, min_words: usize) -> Vec<TokenizedDocument> {
    docs.into_iter().filter(|d| d.len() > min_words).collect()
}

/// Keeps the first `max_words` tokens. The original text is retained so
/// spans stay valid.
pub fn truncate(doc: &TokenizedDocument, max_words: usize) -> TokenizedDocument {
    assert!(max_words >= 1, "truncation length must be at least 1");
    let mut out = doc.clone();
    out.tokens.truncate(max_words);
    out
}

/// Reads a line-delimited JSON corpus.
///
/// Blank lines are ignored. When `cohort_override` is given it replaces the
/// cohort of every record, and records may omit the `cohort` field.
pub fn load_corpus(
    path: impl AsRef<Path>,
    cohort_override: Option<Cohort>,
) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&raw, cohort_override)
}

pub fn parse_corpus(raw: &str, cohort_override: Option<Cohort>) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(line, idx + 1, cohort_override)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn parse_record(line: &str, line_no: usize, cohort_override: Option<Cohort>) -> Result<Document, CorpusError> {
    let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::Malformed {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;

    let string_field = |field: &'static str| -> Result<Option<&str>, CorpusError> {
        match obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(CorpusError::InvalidField {
                line: line_no,
                field,
                message: "expected a string".into(),
            }),
        }
    };
    let required = |field: &'static str| -> Result<&str, CorpusError> {
        string_field(field)?.ok_or(CorpusError::MissingField { line: line_no, field })
    };

    let id = required("id")?;
    if id.is_empty() {
        return Err(CorpusError::InvalidField {
            line: line_no,
            field: "id",
            message: "must not be empty".into(),
        });
    }
    let text = required("text")?;
    if text.trim().is_empty() {
        return Err(CorpusError::InvalidField {
            line: line_no,
            field: "text",
            message: "must contain at least one word".into(),
        });
    }
    let cohort = match (cohort_override, string_field("cohort")?) {
        (Some(c), _) => c,
        (None, Some(raw)) => raw.parse().map_err(|message| CorpusError::InvalidField {
            line: line_no,
            field: "cohort",
            message,
        })?,
        (None, None) => {
            return Err(CorpusError::MissingField {
                line: line_no,
                field: "cohort",
            })
        }
    };
    let source = string_field("source")?.unwrap_or_default().to_string();
    let published_at = string_field("published_at")?
        .map(|raw| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| CorpusError::InvalidField {
                line: line_no,
                field: "published_at",
                message: e.to_string(),
            })
        })
        .transpose()?;

    Ok(Document {
        id: id.to_string(),
        cohort,
        source,
        text: text.to_string(),
        published_at,
    })
}
