//! Word-level verbatim match counting.
//!
//! Every maximal common run between the reference segment and a completion
//! is enumerated by scanning each diagonal of the (reference x completion)
//! comparison grid once. A run that cannot be extended on either side at its
//! occurrence pair is one match. Frequency arrays count those matches per
//! length threshold.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("invalid thresholds: l_min={l_min}, l_max={l_max} (need 1 <= l_min <= l_max)")]
    InvalidThresholds { l_min: usize, l_max: usize },
    #[error("cannot combine frequency arrays over different ranges: {0} vs {1}")]
    ThresholdMismatch(String, String),
    #[error("no frequency arrays to combine")]
    NoArrays,
}

/// A common run of `length` words starting at `pos_ref` in the reference and
/// `pos_gen` in the completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaximalMatch {
    pub pos_ref: usize,
    pub pos_gen: usize,
    pub length: usize,
}

fn intern<'a, A, B>(reference: &'a [A], generated: &'a [B]) -> (Vec<u32>, Vec<u32>)
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut id_of = |s: &'a str| {
        let next = ids.len() as u32;
        *ids.entry(s).or_insert(next)
    };
    let r = reference.iter().map(|t| id_of(t.as_ref())).collect();
    let g = generated.iter().map(|t| id_of(t.as_ref())).collect();
    (r, g)
}

/// All maximal common runs, ordered by `(pos_ref, pos_gen)`.
pub fn maximal_common_substrings<A, B>(reference: &[A], generated: &[B]) -> Vec<MaximalMatch>
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    let (r, g) = intern(reference, generated);
    let (n, m) = (r.len(), g.len());
    let mut out = Vec::new();
    if n == 0 || m == 0 {
        return out;
    }
    // Diagonal d pairs r[i] with g[i + d - (n - 1)].
    for d in 0..n + m - 1 {
        let (mut i, mut j) = if d < n { (n - 1 - d, 0) } else { (0, d - (n - 1)) };
        let mut run_start: Option<(usize, usize)> = None;
        while i < n && j < m {
            if r[i] == g[j] {
                if run_start.is_none() {
                    run_start = Some((i, j));
                }
            } else if let Some((si, sj)) = run_start.take() {
                out.push(MaximalMatch { pos_ref: si, pos_gen: sj, length: i - si });
            }
            i += 1;
            j += 1;
        }
        if let Some((si, sj)) = run_start {
            out.push(MaximalMatch { pos_ref: si, pos_gen: sj, length: i - si });
        }
    }
    out.sort_unstable();
    out
}

/// Length of the longest common contiguous word run, `0` when there is none.
pub fn longest_common_substring_len<A, B>(reference: &[A], generated: &[B]) -> usize
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    maximal_common_substrings(reference, generated)
        .iter()
        .map(|m| m.length)
        .max()
        .unwrap_or(0)
}

/// How matches are tallied against each length `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// `f_k` counts matches of length at least `k`.
    #[default]
    Threshold,
    /// `f_k` counts matches of length exactly `k`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyArray {
    pub l_min: usize,
    pub l_max: usize,
    #[serde(default)]
    pub mode: CountMode,
    pub counts: Vec<u64>,
}

fn check_thresholds(l_min: usize, l_max: usize) -> Result<(), MatchError> {
    if l_min < 1 || l_min > l_max {
        return Err(MatchError::InvalidThresholds { l_min, l_max });
    }
    Ok(())
}

impl FrequencyArray {
    pub fn zeros(l_min: usize, l_max: usize, mode: CountMode) -> Result<Self, MatchError> {
        check_thresholds(l_min, l_max)?;
        Ok(Self {
            l_min,
            l_max,
            mode,
            counts: vec![0; l_max - l_min + 1],
        })
    }

    /// `f_k`, or `None` outside `[l_min, l_max]`.
    pub fn get(&self, k: usize) -> Option<u64> {
        k.checked_sub(self.l_min).and_then(|i| self.counts.get(i)).copied()
    }

    pub fn lengths(&self) -> std::ops::RangeInclusive<usize> {
        self.l_min..=self.l_max
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.lengths().zip(self.counts.iter().copied())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    fn range_label(&self) -> String {
        format!("[{}, {}] {:?}", self.l_min, self.l_max, self.mode)
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), MatchError> {
        if self.l_min != other.l_min || self.l_max != other.l_max || self.mode != other.mode {
            return Err(MatchError::ThresholdMismatch(self.range_label(), other.range_label()));
        }
        Ok(())
    }
}

/// Threshold-counted frequency array over `[l_min, l_max]`.
pub fn frequency_array(matches: &[MaximalMatch], l_min: usize, l_max: usize) -> Result<FrequencyArray, MatchError> {
    frequency_array_with_mode(matches, l_min, l_max, CountMode::Threshold)
}

pub fn frequency_array_with_mode(
    matches: &[MaximalMatch],
    l_min: usize,
    l_max: usize,
    mode: CountMode,
) -> Result<FrequencyArray, MatchError> {
    let mut out = FrequencyArray::zeros(l_min, l_max, mode)?;
    for m in matches {
        match mode {
            CountMode::Threshold => {
                let top = m.length.min(l_max);
                if top >= l_min {
                    for c in &mut out.counts[..=top - l_min] {
                        *c += 1;
                    }
                }
            }
            CountMode::Exact => {
                if (l_min..=l_max).contains(&m.length) {
                    out.counts[m.length - l_min] += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Element-wise sum of arrays sharing one range and mode.
pub fn sum_arrays<'a, I>(arrays: I) -> Result<FrequencyArray, MatchError>
where
    I: IntoIterator<Item = &'a FrequencyArray>,
{
    let mut iter = arrays.into_iter();
    let mut total = iter.next().ok_or(MatchError::NoArrays)?.clone();
    for a in iter {
        total.same_shape(a)?;
        for (t, c) in total.counts.iter_mut().zip(&a.counts) {
            *t += c;
        }
    }
    Ok(total)
}
