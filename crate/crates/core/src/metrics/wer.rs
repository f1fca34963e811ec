use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit counts against a reference. Sums of results are corpus-level:
/// total errors over total reference words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_ref_words: usize,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `100 * (S + D + I) / N`; may exceed 100.
    pub fn wer_percent(&self) -> f64 {
        if self.n_ref_words == 0 {
            return 0.0;
        }
        100.0 * self.errors() as f64 / self.n_ref_words as f64
    }
}

impl Add for WerResult {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            substitutions: self.substitutions + rhs.substitutions,
            deletions: self.deletions + rhs.deletions,
            insertions: self.insertions + rhs.insertions,
            n_ref_words: self.n_ref_words + rhs.n_ref_words,
        }
    }
}

impl AddAssign for WerResult {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for WerResult {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Lowercases, turns every character that is neither alphanumeric nor an
/// apostrophe into a space, and splits on whitespace.
pub fn normalize_text(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Minimum-edit alignment of token sequences with unit costs.
///
/// The backtrace prefers a diagonal move (match or substitution), then a
/// deletion, then an insertion, so counts are deterministic when several
/// alignments share the minimum cost.
pub fn align_tokens<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerResult {
    let (n, m) = (reference.len(), hypothesis.len());
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        cost[i * width] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[(i - 1) * width + j] + 1;
            let ins = cost[i * width + j - 1] + 1;
            cost[i * width + j] = sub.min(del).min(ins);
        }
    }

    let mut out = WerResult {
        n_ref_words: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if here == cost[(i - 1) * width + j - 1] + usize::from(mismatch) {
                out.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * width + j] + 1 {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    out
}

/// WER of one utterance after text normalization.
pub fn compute_wer(reference: &str, hypothesis: &str) -> Result<WerResult> {
    let r = normalize_text(reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(align_tokens(&r, &normalize_text(hypothesis)))
}

/// Reads a headered `utterance_id,text` CSV.
pub fn read_transcripts(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let (Some(id), Some(text)) = (row.get(0), row.get(1)) else {
            return Err(Error::parse(path, i + 2, "expected `utterance_id,text`"));
        };
        if out.insert(id.to_string(), text.to_string()).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

/// Corpus WER over every reference id; a missing hypothesis counts as empty.
pub fn corpus_wer(
    references: &BTreeMap<String, String>,
    hypotheses: &BTreeMap<String, String>,
) -> Result<WerResult> {
    references
        .iter()
        .map(|(id, r)| {
            let h = hypotheses.get(id).map(String::as_str).unwrap_or("");
            compute_wer(r, h).map_err(|e| match e {
                Error::EmptyReference => Error::Config(format!("empty reference for `{id}`")),
                other => other,
            })
        })
        .sum()
}
