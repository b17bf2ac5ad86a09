//! Deterministic offline backends.
//!
//! Each mock derives its randomness from the configured seed and the
//! transcript content only, so a given (transcript, seed) pair always yields
//! the same completion regardless of model name or temperature.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, GatewayError};
use crate::prompt::Transcript;

pub const DEFAULT_PARTIAL_CHUNKS: usize = 2;

fn transcript_rng(transcript: &Transcript, seed: u64, salt: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(salt.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(transcript.system_prompt.as_bytes());
    for turn in &transcript.turns {
        hasher.update([0u8]);
        hasher.update(turn.role.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(turn.text.as_bytes());
    }
    hasher.update([1u8]);
    hasher.update(transcript.reference_text.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Draws words from a synthetic vocabulary, skipping anything present in
/// `avoid`.
fn fresh_words(rng: &mut ChaCha8Rng, count: usize, avoid: &HashSet<&str>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let word = format!("zq{:06}", rng.gen_range(0..1_000_000u32));
        if !avoid.contains(word.as_str()) {
            out.push(word);
        }
    }
    out
}

/// Echoes the held-out reference exactly.
#[derive(Debug, Clone, Default)]
pub struct VerbatimBackend;

impl Backend for VerbatimBackend {
    fn name(&self) -> String {
        "verbatim".into()
    }

    fn uses_seed(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        Ok(request.transcript.reference_text.clone())
    }
}

/// Emits as many synthetic words as the reference holds, none of which
/// occur in the reference.
#[derive(Debug, Clone, Default)]
pub struct ObliviousBackend;

impl Backend for ObliviousBackend {
    fn name(&self) -> String {
        "oblivious".into()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let tr = request.transcript;
        let mut rng = transcript_rng(tr, request.seed, "oblivious");
        let avoid: HashSet<&str> = tr.reference_tokens.iter().map(String::as_str).collect();
        Ok(fresh_words(&mut rng, tr.reference_tokens.len().max(1), &avoid).join(" "))
    }
}

/// Splits the reference into `chunks` contiguous pieces (longer pieces
/// first) and copies each with probability `p`, replacing it with the same
/// number of synthetic words otherwise.
#[derive(Debug, Clone)]
pub struct PartialCopyBackend {
    p: f64,
    chunks: usize,
}

impl PartialCopyBackend {
    pub fn new(p: f64) -> Result<Self, GatewayError> {
        Self::with_chunks(p, DEFAULT_PARTIAL_CHUNKS)
    }

    pub fn with_chunks(p: f64, chunks: usize) -> Result<Self, GatewayError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(GatewayError::InvalidParams(format!("copy probability {p} outside [0, 1]")));
        }
        if chunks == 0 {
            return Err(GatewayError::InvalidParams("chunk count must be at least 1".into()));
        }
        Ok(Self { p, chunks })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    /// Copy decision per chunk, plus the generated words.
    pub fn sample(&self, transcript: &Transcript, seed: u64) -> (Vec<bool>, Vec<String>) {
        let mut rng = transcript_rng(transcript, seed, "partial");
        let reference = &transcript.reference_tokens;
        let avoid: HashSet<&str> = reference.iter().map(String::as_str).collect();
        let pieces = self.chunks.min(reference.len()).max(1);
        let base = reference.len() / pieces;
        let extra = reference.len() % pieces;
        let mut decisions = Vec::with_capacity(pieces);
        let mut words = Vec::with_capacity(reference.len());
        let mut start = 0;
        for i in 0..pieces {
            let len = base + usize::from(i < extra);
            let copy = rng.gen::<f64>() < self.p;
            decisions.push(copy);
            if copy {
                words.extend_from_slice(&reference[start..start + len]);
            } else {
                words.extend(fresh_words(&mut rng, len, &avoid));
            }
            start += len;
        }
        (decisions, words)
    }
}

impl Backend for PartialCopyBackend {
    fn name(&self) -> String {
        if self.chunks == DEFAULT_PARTIAL_CHUNKS {
            format!("partial:{}", self.p)
        } else {
            format!("partial:{}:{}", self.p, self.chunks)
        }
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let (_, words) = self.sample(request.transcript, request.seed);
        Ok(words.join(" "))
    }
}
