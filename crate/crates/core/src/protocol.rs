//! Dataset manifests and verification trial protocols.
//!
//! [`build_protocol`] turns a manifest into speaker models (enrollment sets)
//! and a full cross product of test utterances against models. Utterance
//! selection is ordered by a seeded hash of the utterance id, so the result
//! does not depend on the row order of the manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Enroll,
    Test,
    Impostor,
    #[default]
    Unassigned,
}

impl Split {
    fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "enroll" => Split::Enroll,
            "test" => Split::Test,
            "impostor" => Split::Impostor,
            "" | "unassigned" => Split::Unassigned,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Split::Enroll => "enroll",
            Split::Test => "test",
            Split::Impostor => "impostor",
            Split::Unassigned => "unassigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub age: Option<f64>,
    pub transcript: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Relative record paths are resolved against this directory.
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    utterance_id: String,
    speaker_id: String,
    path: String,
    age: String,
    transcript: String,
    split: String,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self {
            records,
            base_dir: None,
        }
    }

    /// Reads the `utterance_id,speaker_id,path,age,transcript,split` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected = ["utterance_id", "speaker_id", "path", "age", "transcript", "split"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::parse(
                path,
                1,
                format!("header must be `{}`", expected.join(",")),
            ));
        }
        let mut records = Vec::new();
        for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
            let line = i + 2;
            let row = row?;
            let age = match row.age.trim() {
                "" => None,
                a => Some(
                    a.parse::<f64>()
                        .map_err(|e| Error::parse(path, line, format!("bad age `{a}`: {e}")))?,
                ),
            };
            let split = Split::parse(&row.split)
                .ok_or_else(|| Error::parse(path, line, format!("bad split `{}`", row.split)))?;
            records.push(ManifestRecord {
                utterance_id: row.utterance_id,
                speaker_id: row.speaker_id,
                path: PathBuf::from(row.path),
                age,
                transcript: (!row.transcript.is_empty()).then_some(row.transcript),
                split,
            });
        }
        let manifest = Manifest {
            records,
            base_dir: path.parent().map(Path::to_path_buf),
        };
        manifest.validate(false)?;
        Ok(manifest)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for r in &self.records {
            w.serialize(CsvRow {
                utterance_id: r.utterance_id.clone(),
                speaker_id: r.speaker_id.clone(),
                path: r.path.to_string_lossy().into_owned(),
                age: r.age.map(|a| a.to_string()).unwrap_or_default(),
                transcript: r.transcript.clone().unwrap_or_default(),
                split: r.split.as_str().to_string(),
            })?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }

    /// Checks id uniqueness, ages, whitespace-free ids and (optionally) that
    /// every audio path exists.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.utterance_id.as_str()) {
                return Err(Error::DuplicateId(r.utterance_id.clone()));
            }
            for id in [&r.utterance_id, &r.speaker_id] {
                if id.is_empty() || id.chars().any(char::is_whitespace) {
                    return Err(Error::Config(format!(
                        "ids must be non-empty and whitespace-free: `{id}`"
                    )));
                }
            }
            if let Some(age) = r.age {
                if !(age.is_finite() && age >= 0.0) {
                    return Err(Error::Config(format!(
                        "negative or invalid age for `{}`",
                        r.utterance_id
                    )));
                }
            }
            if check_paths {
                let p = self.audio_path(r);
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "audio for `{}` not found at {}",
                        r.utterance_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn audio_path(&self, record: &ManifestRecord) -> PathBuf {
        match &self.base_dir {
            Some(base) if record.path.is_relative() => base.join(&record.path),
            _ => record.path.clone(),
        }
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    pub fn index(&self) -> HashMap<&str, &ManifestRecord> {
        self.records
            .iter()
            .map(|r| (r.utterance_id.as_str(), r))
            .collect()
    }
}

/// Inclusive age range in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGroup(pub [f64; 2]);

impl AgeGroup {
    pub fn contains(&self, age: f64) -> bool {
        age >= self.0[0] && age <= self.0[1]
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.0[0], self.0[1])
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub n_enroll_per_speaker: usize,
    pub n_test_per_speaker: usize,
    pub min_impostor_utts: usize,
    #[serde(default)]
    pub age_groups: Vec<AgeGroup>,
    #[serde(default)]
    pub seed: u64,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_enroll_per_speaker == 0 || self.n_test_per_speaker == 0 || self.min_impostor_utts == 0 {
            return Err(Error::Config("protocol counts must all be >= 1".into()));
        }
        let mut groups = self.age_groups.clone();
        groups.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
        for g in &groups {
            if !(g.0[0] <= g.0[1]) {
                return Err(Error::Config(format!("empty age range {g}")));
            }
        }
        for w in groups.windows(2) {
            if w[1].0[0] <= w[0].0[1] {
                return Err(Error::Config(format!("age groups {} and {} overlap", w[0], w[1])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" => Some(TrialLabel::Target),
            "nontarget" => Some(TrialLabel::Nontarget),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerModel {
    pub model_id: String,
    pub speaker_id: String,
    pub enrollment: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub model_id: String,
    pub test_utterance_id: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialProtocol {
    pub models: Vec<SpeakerModel>,
    pub trials: Vec<Trial>,
    /// Age groups the protocol was stratified by (empty when not stratified).
    pub age_groups: Vec<AgeGroup>,
}

fn hash_key(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Speaker age: the smallest age recorded on any of its utterances.
fn speaker_ages(manifest: &Manifest) -> BTreeMap<&str, f64> {
    let mut ages: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &manifest.records {
        if let Some(a) = r.age {
            ages.entry(r.speaker_id.as_str())
                .and_modify(|cur| *cur = cur.min(a))
                .or_insert(a);
        }
    }
    ages
}

fn group_of(groups: &[AgeGroup], age: Option<f64>) -> Option<usize> {
    age.and_then(|a| groups.iter().position(|g| g.contains(a)))
}

/// Builds speaker models and the cross-product trial list.
///
/// A speaker with any `impostor` utterance contributes only an enrollment
/// model; every other speaker contributes a model and test utterances.
/// Explicit `enroll`/`test` splits are honoured first, then `unassigned`
/// utterances fill the remaining slots in seeded-hash order.
pub fn build_protocol(manifest: &Manifest, spec: &ProtocolSpec) -> Result<TrialProtocol> {
    spec.validate()?;
    manifest.validate(false)?;

    let mut by_speaker: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    let ages = speaker_ages(manifest);
    let stratified = !spec.age_groups.is_empty();

    struct Selected<'a> {
        model: SpeakerModel,
        tests: Vec<&'a str>,
        group: Option<usize>,
    }

    let mut selected = Vec::new();
    for (speaker, mut utts) in by_speaker {
        let group = group_of(&spec.age_groups, ages.get(speaker).copied());
        if stratified && group.is_none() {
            log::debug!("speaker {speaker} is outside every age group; skipped");
            continue;
        }
        utts.sort_by_key(|r| (hash_key(spec.seed, &r.utterance_id), r.utterance_id.as_str()));
        let of = |split: Split| utts.iter().filter(move |r| r.split == split).map(|r| r.utterance_id.as_str());
        let is_impostor = utts.iter().any(|r| r.split == Split::Impostor);

        if is_impostor {
            let pool: Vec<&str> = of(Split::Impostor)
                .chain(of(Split::Enroll))
                .chain(of(Split::Unassigned))
                .collect();
            if pool.len() < spec.min_impostor_utts {
                return Err(Error::InsufficientUtterances {
                    speaker: speaker.to_string(),
                    have: pool.len(),
                    need: spec.min_impostor_utts,
                });
            }
            let enrollment = pool.iter().take(spec.n_enroll_per_speaker).map(|s| s.to_string()).collect();
            selected.push(Selected {
                model: SpeakerModel {
                    model_id: speaker.to_string(),
                    speaker_id: speaker.to_string(),
                    enrollment,
                },
                tests: Vec::new(),
                group,
            });
            continue;
        }

        let enroll: Vec<&str> = of(Split::Enroll)
            .chain(of(Split::Unassigned))
            .take(spec.n_enroll_per_speaker)
            .collect();
        let tests: Vec<&str> = of(Split::Test)
            .chain(of(Split::Unassigned).filter(|u| !enroll.contains(u)))
            .take(spec.n_test_per_speaker)
            .collect();
        if enroll.len() < spec.n_enroll_per_speaker || tests.len() < spec.n_test_per_speaker {
            return Err(Error::InsufficientUtterances {
                speaker: speaker.to_string(),
                have: enroll.len() + tests.len(),
                need: spec.n_enroll_per_speaker + spec.n_test_per_speaker,
            });
        }
        selected.push(Selected {
            model: SpeakerModel {
                model_id: speaker.to_string(),
                speaker_id: speaker.to_string(),
                enrollment: enroll.iter().map(|s| s.to_string()).collect(),
            },
            tests,
            group,
        });
    }

    if stratified {
        for (gi, g) in spec.age_groups.iter().enumerate() {
            if !selected.iter().any(|s| s.group == Some(gi) && !s.tests.is_empty()) {
                return Err(Error::EmptyAgeGroup(g.label()));
            }
        }
    } else if !selected.iter().any(|s| !s.tests.is_empty()) {
        return Err(Error::Config("manifest yields no test utterances".into()));
    }

    let mut trials = Vec::new();
    for model in &selected {
        for candidate in selected.iter().filter(|s| s.group == model.group) {
            let label = if candidate.model.speaker_id == model.model.speaker_id {
                TrialLabel::Target
            } else {
                TrialLabel::Nontarget
            };
            for test in &candidate.tests {
                trials.push(Trial {
                    model_id: model.model.model_id.clone(),
                    test_utterance_id: test.to_string(),
                    label,
                });
            }
        }
    }

    Ok(TrialProtocol {
        models: selected.into_iter().map(|s| s.model).collect(),
        trials,
        age_groups: spec.age_groups.clone(),
    })
}

impl TrialProtocol {
    /// Age-group label of each model's speaker; empty when unstratified.
    pub fn model_groups(&self, manifest: &Manifest) -> BTreeMap<String, String> {
        let ages = speaker_ages(manifest);
        self.models
            .iter()
            .filter_map(|m| {
                group_of(&self.age_groups, ages.get(m.speaker_id.as_str()).copied())
                    .map(|g| (m.model_id.clone(), self.age_groups[g].label()))
            })
            .collect()
    }

    pub fn model(&self, model_id: &str) -> Option<&SpeakerModel> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    /// Distinct test utterances in first-appearance order.
    pub fn test_utterances(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.trials
            .iter()
            .map(|t| t.test_utterance_id.as_str())
            .filter(|u| seen.insert(*u))
            .collect()
    }

    /// Every utterance the protocol needs an embedding for.
    pub fn utterances(&self) -> BTreeSet<&str> {
        self.models
            .iter()
            .flat_map(|m| m.enrollment.iter().map(String::as_str))
            .chain(self.trials.iter().map(|t| t.test_utterance_id.as_str()))
            .collect()
    }

    pub fn count(&self, label: TrialLabel) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }

    /// `model_id test_utterance_id target|nontarget`, one trial per line.
    pub fn write_trials(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for t in &self.trials {
            writeln!(f, "{} {} {}", t.model_id, t.test_utterance_id, t.label.as_str())
                .map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// `model_id speaker_id utt1,utt2,...`, one model per line.
    pub fn write_models(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for m in &self.models {
            writeln!(f, "{} {} {}", m.model_id, m.speaker_id, m.enrollment.join(","))
                .map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(models_path: impl AsRef<Path>, trials_path: impl AsRef<Path>) -> Result<Self> {
        let models_path = models_path.as_ref();
        let trials_path = trials_path.as_ref();
        let text = std::fs::read_to_string(models_path).map_err(|e| Error::io(models_path, e))?;
        let mut models = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [model_id, speaker_id, utts] = fields[..] else {
                return Err(Error::parse(models_path, i + 1, "expected `model_id speaker_id utt1,utt2,...`"));
            };
            models.push(SpeakerModel {
                model_id: model_id.to_string(),
                speaker_id: speaker_id.to_string(),
                enrollment: utts.split(',').filter(|u| !u.is_empty()).map(str::to_string).collect(),
            });
        }
        let text = std::fs::read_to_string(trials_path).map_err(|e| Error::io(trials_path, e))?;
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [model_id, test, label] = fields[..] else {
                return Err(Error::parse(trials_path, i + 1, "expected `model_id test_utterance_id label`"));
            };
            let label = TrialLabel::parse(label)
                .ok_or_else(|| Error::parse(trials_path, i + 1, format!("bad label `{label}`")))?;
            trials.push(Trial {
                model_id: model_id.to_string(),
                test_utterance_id: test.to_string(),
                label,
            });
        }
        Ok(Self {
            models,
            trials,
            age_groups: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EnrollTestOverlap,
    DanglingReference,
    LabelMismatch,
    CrossGroupTrial,
    DuplicateTrial,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::EnrollTestOverlap => "enroll/test overlap",
            ViolationKind::DanglingReference => "dangling reference",
            ViolationKind::LabelMismatch => "label mismatch",
            ViolationKind::CrossGroupTrial => "cross-group trial",
            ViolationKind::DuplicateTrial => "duplicate trial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_models: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Trials per age group (keyed by the model speaker's group), then label.
    pub per_group: BTreeMap<String, BTreeMap<TrialLabel, usize>>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks structural invariants and referential integrity. Never fails;
/// every problem is reported as a [`Violation`].
pub fn validate_protocol(protocol: &TrialProtocol, manifest: &Manifest) -> ValidationReport {
    let index = manifest.index();
    let ages = speaker_ages(manifest);
    let mut report = ValidationReport {
        n_models: protocol.models.len(),
        ..Default::default()
    };
    let mut violations = Vec::new();
    let models: HashMap<&str, &SpeakerModel> =
        protocol.models.iter().map(|m| (m.model_id.as_str(), m)).collect();

    // enrollment utterances of each speaker's models
    let mut enrolled_by_speaker: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for m in &protocol.models {
        for u in &m.enrollment {
            match index.get(u.as_str()) {
                None => violations.push(Violation {
                    kind: ViolationKind::DanglingReference,
                    detail: format!("model {} enrolls unknown utterance {u}", m.model_id),
                }),
                Some(r) if r.speaker_id != m.speaker_id => violations.push(Violation {
                    kind: ViolationKind::LabelMismatch,
                    detail: format!("model {} enrolls {u} from speaker {}", m.model_id, r.speaker_id),
                }),
                Some(_) => {}
            }
            enrolled_by_speaker
                .entry(m.speaker_id.as_str())
                .or_default()
                .insert(u.as_str());
        }
    }

    let group_label = |speaker: &str| -> Option<String> {
        group_of(&protocol.age_groups, ages.get(speaker).copied()).map(|g| protocol.age_groups[g].label())
    };

    let mut seen = BTreeSet::new();
    for t in &protocol.trials {
        match t.label {
            TrialLabel::Target => report.n_target += 1,
            TrialLabel::Nontarget => report.n_nontarget += 1,
        }
        if !seen.insert((t.model_id.as_str(), t.test_utterance_id.as_str())) {
            violations.push(Violation {
                kind: ViolationKind::DuplicateTrial,
                detail: format!("{} {}", t.model_id, t.test_utterance_id),
            });
        }
        let Some(model) = models.get(t.model_id.as_str()) else {
            violations.push(Violation {
                kind: ViolationKind::DanglingReference,
                detail: format!("trial references unknown model {}", t.model_id),
            });
            continue;
        };
        let Some(rec) = index.get(t.test_utterance_id.as_str()) else {
            violations.push(Violation {
                kind: ViolationKind::DanglingReference,
                detail: format!("trial references unknown utterance {}", t.test_utterance_id),
            });
            continue;
        };

        let group_key = if protocol.age_groups.is_empty() {
            "all".to_string()
        } else {
            group_label(&model.speaker_id).unwrap_or_else(|| "none".to_string())
        };
        *report
            .per_group
            .entry(group_key)
            .or_default()
            .entry(t.label)
            .or_default() += 1;

        let same = rec.speaker_id == model.speaker_id;
        if same != (t.label == TrialLabel::Target) {
            violations.push(Violation {
                kind: ViolationKind::LabelMismatch,
                detail: format!("{} {} labelled {}", t.model_id, t.test_utterance_id, t.label.as_str()),
            });
        }
        if enrolled_by_speaker
            .get(model.speaker_id.as_str())
            .is_some_and(|e| e.contains(t.test_utterance_id.as_str()))
        {
            violations.push(Violation {
                kind: ViolationKind::EnrollTestOverlap,
                detail: format!("{} is enrolled for speaker {} and tested against {}", t.test_utterance_id, model.speaker_id, t.model_id),
            });
        }
        if !protocol.age_groups.is_empty() && group_label(&model.speaker_id) != group_label(&rec.speaker_id) {
            violations.push(Violation {
                kind: ViolationKind::CrossGroupTrial,
                detail: format!("{} {}", t.model_id, t.test_utterance_id),
            });
        }
    }
    report.violations = violations;
    report
}
