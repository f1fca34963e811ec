use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, mean_embedding, EmbeddingVector};
use crate::error::{Error, Result};
use crate::protocol::{TrialLabel, TrialProtocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub model_id: String,
    pub test_utterance_id: String,
    pub score: f64,
    pub label: TrialLabel,
}

/// Labelled trial scores, in protocol order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn from_labelled(targets: &[f64], nontargets: &[f64]) -> Self {
        let entry = |i: usize, s: f64, label| ScoreEntry {
            model_id: "m".into(),
            test_utterance_id: format!("t{i}"),
            score: s,
            label,
        };
        let mut entries: Vec<ScoreEntry> = targets
            .iter()
            .enumerate()
            .map(|(i, &s)| entry(i, s, TrialLabel::Target))
            .collect();
        entries.extend(
            nontargets
                .iter()
                .enumerate()
                .map(|(i, &s)| entry(targets.len() + i, s, TrialLabel::Nontarget)),
        );
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self, label: TrialLabel) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.score)
            .collect()
    }

    /// Keeps only trials whose model is in `models`.
    pub fn filter_models(&self, models: &[&str]) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| models.contains(&e.model_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// `model_id test_utterance_id score label` per line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for e in &self.entries {
            writeln!(
                f,
                "{} {} {:?} {}",
                e.model_id,
                e.test_utterance_id,
                e.score,
                e.label.as_str()
            )
            .map_err(|err| Error::io(path, err))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [model, test, score, label] = fields[..] else {
                return Err(Error::parse(path, i + 1, "expected `model_id test_utterance_id score label`"));
            };
            let score: f64 = score
                .parse()
                .map_err(|e| Error::parse(path, i + 1, format!("bad score: {e}")))?;
            if !score.is_finite() {
                return Err(Error::parse(path, i + 1, "score must be finite"));
            }
            let label = TrialLabel::parse(label)
                .ok_or_else(|| Error::parse(path, i + 1, format!("bad label `{label}`")))?;
            entries.push(ScoreEntry {
                model_id: model.to_string(),
                test_utterance_id: test.to_string(),
                score,
                label,
            });
        }
        Ok(Self { entries })
    }
}

/// Scores every trial as the cosine between the model's mean enrollment
/// embedding and the test embedding.
///
/// For the lazy-informed attacker, `embeddings` must come from the
/// anonymized audio of both enrollment and test utterances.
pub fn score_trials(
    protocol: &TrialProtocol,
    embeddings: &BTreeMap<String, EmbeddingVector>,
) -> Result<ScoreSet> {
    let lookup = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    };
    let mut model_means: HashMap<&str, EmbeddingVector> = HashMap::new();
    for m in &protocol.models {
        let vectors = m
            .enrollment
            .iter()
            .map(|u| lookup(u))
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_embedding(&m.model_id, &vectors)?;
        if mean.norm() == 0.0 {
            return Err(Error::ZeroMeanEmbedding(m.model_id.clone()));
        }
        model_means.insert(m.model_id.as_str(), mean);
    }

    let entries = protocol
        .trials
        .iter()
        .map(|t| {
            let model = model_means.get(t.model_id.as_str()).ok_or_else(|| {
                Error::Config(format!("trial references unknown model {}", t.model_id))
            })?;
            let test = lookup(&t.test_utterance_id)?;
            Ok(ScoreEntry {
                model_id: t.model_id.clone(),
                test_utterance_id: t.test_utterance_id.clone(),
                score: cosine(model, test)?,
                label: t.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet { entries })
}
