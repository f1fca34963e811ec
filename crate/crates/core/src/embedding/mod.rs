//! Speaker embeddings for the verification attacker.
//!
//! The built-in embedder summarizes an utterance by the per-coefficient mean
//! and standard deviation of its MFCCs. Embeddings from any external
//! extractor can be loaded from the tab-separated exchange format instead.

mod mfcc;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mfcc::{mfcc, MfccConfig, LOG_FLOOR};

use crate::audio::{AudioBuffer, CORPUS_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Shortest utterance accepted by [`builtin_embed`], in seconds.
pub const MIN_EMBED_SECS: f64 = 0.5;

/// Identifies the built-in embedder in run digests.
pub const BUILTIN_EMBEDDER_ID: &str = "builtin-mfcc-meanstd-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub utterance_id: String,
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingVector {
    pub fn new(utterance_id: impl Into<String>, values: Vec<f64>, source: EmbeddingSource) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            values,
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rejects non-finite values and zero vectors.
    pub fn check(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidEmbedding {
            id: self.utterance_id.clone(),
            reason: reason.to_string(),
        };
        if self.values.is_empty() {
            return Err(invalid("empty vector"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite value"));
        }
        if self.norm() == 0.0 {
            return Err(invalid("zero vector"));
        }
        Ok(())
    }
}

/// MFCC mean and standard deviation per coefficient, scaled to unit norm.
pub fn builtin_embed(utterance_id: &str, buffer: &AudioBuffer) -> Result<EmbeddingVector> {
    buffer.require_rate(CORPUS_SAMPLE_RATE)?;
    let need = (MIN_EMBED_SECS * buffer.sample_rate() as f64).ceil() as usize;
    if buffer.len() < need {
        return Err(Error::TooShort {
            got: buffer.len(),
            need,
        });
    }
    let feats = mfcc(buffer, &MfccConfig::default())?;
    let n = feats.len() as f64;
    let dim = feats[0].len();
    let mut mean = vec![0.0; dim];
    for row in &feats {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for row in &feats {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    std.iter_mut().for_each(|s| *s = s.sqrt());

    let mut values = mean;
    values.extend(std);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(EmbeddingVector::new(utterance_id, values, EmbeddingSource::Builtin))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            id: b.utterance_id.clone(),
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    for (v, n) in [(a, na), (b, nb)] {
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidEmbedding {
                id: v.utterance_id.clone(),
                reason: "zero or non-finite norm".into(),
            });
        }
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Coordinate-wise mean. Not renormalized; [`cosine`] normalizes anyway.
pub fn mean_embedding(id: &str, vectors: &[&EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Config(format!("cannot average an empty set for `{id}`")))?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimMismatch {
                id: v.utterance_id.clone(),
                expected: dim,
                found: v.dim(),
            });
        }
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(EmbeddingVector::new(id, mean, first.source))
}

/// Reads `utterance_id<TAB>v1,v2,...` lines; `#` lines and blank lines are skipped.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, EmbeddingVector>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, EmbeddingVector> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line_no, "expected `id<TAB>values`"))?;
        let values = rest
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("bad value for `{id}`: {e}")))?;
        let vector = EmbeddingVector::new(id, values, EmbeddingSource::External);
        vector.check()?;
        match dim {
            None => dim = Some(vector.dim()),
            Some(d) if d != vector.dim() => {
                return Err(Error::DimMismatch {
                    id: id.to_string(),
                    expected: d,
                    found: vector.dim(),
                })
            }
            _ => {}
        }
        if out.insert(id.to_string(), vector).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

/// Writes vectors in the exchange format, ordered as given.
pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    vectors: impl IntoIterator<Item = &'a EmbeddingVector>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for v in vectors {
        let values: Vec<String> = v.values.iter().map(|x| format!("{x:?}")).collect();
        writeln!(f, "{}\t{}", v.utterance_id, values.join(",")).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(id, v.to_vec(), EmbeddingSource::External)
    }

    #[test]
    fn cosine_basics() {
        let v = ev("v", &[0.3, -1.2, 2.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&ev("x", &[1.0, 0.0]), &ev("y", &[0.0, 1.0])).unwrap(), 0.0);
        let a = ev("a", &[0.1, 0.7, -0.2]);
        let b3 = ev("b", &[-0.9, 1.5, 1.2]);
        let b = ev("b", &[-0.3, 0.5, 0.4]);
        assert!((cosine(&a, &b3).unwrap() - cosine(&a, &b).unwrap()).abs() < 1e-12);
        assert!(matches!(
            cosine(&a, &ev("c", &[1.0])),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn means() {
        let v = ev("v", &[1.0, 2.0]);
        assert_eq!(mean_embedding("m", &[&v]).unwrap().values, v.values);
        let neg = ev("n", &[-1.0, -2.0]);
        let zero = mean_embedding("m", &[&v, &neg]).unwrap();
        assert!(cosine(&zero, &v).is_err());
        let m = mean_embedding("m", &[&ev("a", &[1.0, 0.0]), &ev("b", &[0.0, 1.0])]).unwrap();
        assert_eq!(m.values, vec![0.5, 0.5]);
        assert!(mean_embedding("m", &[]).is_err());
    }

    #[test]
    fn load_and_reject() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        let row = |id: &str, d: usize| {
            let vals: Vec<String> = (0..d).map(|i| format!("{}", 0.01 * (i + 1) as f64)).collect();
            format!("{id}\t{}\n", vals.join(","))
        };
        std::fs::write(&p, format!("# x-vectors\n{}{}", row("u1", 192), row("u2", 192))).unwrap();
        let m = load_embeddings(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["u1"].dim(), 192);

        std::fs::write(&p, format!("{}{}", row("u1", 192), row("u2", 40))).unwrap();
        match load_embeddings(&p) {
            Err(Error::DimMismatch { id, .. }) => assert_eq!(id, "u2"),
            other => panic!("{other:?}"),
        }

        std::fs::write(&p, "u1\t0,0,0\n").unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::InvalidEmbedding { .. })));
        std::fs::write(&p, "u1\t1,NaN\n").unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::InvalidEmbedding { .. })));
        std::fs::write(&p, format!("{}{}", row("u1", 3), row("u1", 3))).unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::DuplicateId(_))));
        std::fs::write(&p, "u1 1,2\n").unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn write_then_load_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.tsv");
        let vs = vec![ev("a", &[0.1, 1.0 / 3.0]), ev("b", &[-2.5, 1e-17])];
        write_embeddings(&p, &vs).unwrap();
        let back = load_embeddings(&p).unwrap();
        assert_eq!(back["a"].values, vs[0].values);
        assert_eq!(back["b"].values, vs[1].values);
    }

    #[test]
    fn builtin_is_unit_norm_and_deterministic() {
        let b = AudioBuffer::new(
            (0..12000).map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.1 * (i as f64 * 0.31).cos()).collect(),
            16000,
        )
        .unwrap();
        let e = builtin_embed("u", &b).unwrap();
        assert_eq!(e.dim(), 40);
        assert!((e.norm() - 1.0).abs() < 1e-9);
        assert_eq!(e, builtin_embed("u", &b).unwrap());
    }

    #[test]
    fn builtin_rejects_short_or_wrong_rate() {
        let short = AudioBuffer::new(vec![0.1; 7999], 16000).unwrap();
        assert!(matches!(builtin_embed("s", &short), Err(Error::TooShort { .. })));
        let eight = AudioBuffer::new(vec![0.1; 8000], 8000).unwrap();
        assert!(builtin_embed("e", &eight).is_err());
    }
}
