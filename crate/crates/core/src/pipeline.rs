//! End-to-end evaluation runs driven by a TOML [`RunConfig`]:
//! anonymize, embed, score, EER, plus WER / WV-MOS / ND-MOS from ingested
//! files, with every artifact under `runs/<digest>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{ingest_quality_scores, run_external, ExternalSystemSpec};
use crate::audio::{read_wav_at, write_wav, CORPUS_SAMPLE_RATE};
use crate::embedding::{builtin_embed, load_embeddings, write_embeddings, EmbeddingVector, BUILTIN_EMBEDDER_ID};
use crate::error::{Error, Result};
use crate::mcadams::{anonymize_utterance, AnonymizeStats, McAdamsConfig};
use crate::metrics::{aggregate_mos, compute_eer, corpus_wer, read_ratings, read_transcripts, score_trials, GroupBy, ScoreSet};
use crate::protocol::{build_protocol, AgeGroup, Manifest, ManifestRecord, ProtocolSpec, TrialProtocol};
use crate::report::{Metric, RunRecord};

/// Name of the unanonymized system in configs and reports.
pub const ORIGINAL: &str = "original";
pub const SEED_ENV: &str = "VOXVEIL_SEED";
const DIGEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default = "yes")]
    pub include_original: bool,
    #[serde(default)]
    pub systems: BTreeMap<String, SystemConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub manifest: PathBuf,
    /// ASR hypotheses per system, CSV `utterance_id,text`.
    #[serde(default)]
    pub hypotheses: BTreeMap<String, PathBuf>,
    /// Predicted quality per system, CSV `utterance_id,score`.
    #[serde(default)]
    pub quality_scores: BTreeMap<String, PathBuf>,
    /// Listening-test ratings export.
    #[serde(default)]
    pub ratings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub n_enroll_per_speaker: usize,
    pub n_test_per_speaker: usize,
    #[serde(default)]
    pub min_impostor_utts: Option<usize>,
    #[serde(default)]
    pub age_groups: Vec<AgeGroup>,
}

impl ProtocolSection {
    pub fn to_spec(&self, seed: u64) -> ProtocolSpec {
        ProtocolSpec {
            n_enroll_per_speaker: self.n_enroll_per_speaker,
            n_test_per_speaker: self.n_test_per_speaker,
            min_impostor_utts: self.min_impostor_utts.unwrap_or(self.n_enroll_per_speaker),
            age_groups: self.age_groups.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderConfig {
    #[default]
    Builtin,
    /// Precomputed embedding files per system.
    External { embeddings: BTreeMap<String, PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SystemConfig {
    Mcadams(McAdamsConfig),
    External(ExternalSystemSpec),
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        for (name, sys) in cfg.systems.iter_mut() {
            if let SystemConfig::External(spec) = sys {
                spec.name = name.clone();
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    /// Applies `VOXVEIL_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
            log::info!("{SEED_ENV}={seed} overrides config seed {}", self.seed);
            self.seed = seed;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// System names in evaluation order: the original first if included.
    pub fn system_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.include_original {
            names.push(ORIGINAL.to_string());
        }
        names.extend(self.systems.keys().cloned());
        names
    }

    /// Checks everything that can be checked without processing audio.
    pub fn validate(&self) -> Result<()> {
        let exists = |what: &str, p: &Path| -> Result<()> {
            let r = self.resolve(p);
            if r.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", r.display())))
            }
        };
        exists("manifest", &self.dataset.manifest)?;
        let manifest = Manifest::read_csv(self.resolve(&self.dataset.manifest))?;
        manifest.validate(true)?;
        self.protocol.to_spec(self.seed).validate()?;
        if self.systems.contains_key(ORIGINAL) {
            return Err(Error::Config(format!("`{ORIGINAL}` is reserved for the unanonymized speech")));
        }
        if self.system_names().is_empty() {
            return Err(Error::Config("no systems to evaluate".into()));
        }
        for sys in self.systems.values() {
            match sys {
                SystemConfig::Mcadams(c) => c.validate(CORPUS_SAMPLE_RATE)?,
                SystemConfig::External(s) => s.validate()?,
            }
        }
        let known: BTreeSet<String> = self.system_names().into_iter().collect();
        let mut per_system: Vec<(&str, &BTreeMap<String, PathBuf>)> = vec![
            ("hypotheses", &self.dataset.hypotheses),
            ("quality_scores", &self.dataset.quality_scores),
        ];
        if let EmbedderConfig::External { embeddings } = &self.embedder {
            for name in &known {
                if !embeddings.contains_key(name) {
                    return Err(Error::Config(format!("external embedder has no embeddings for `{name}`")));
                }
            }
            per_system.push(("embeddings", embeddings));
        }
        for (what, map) in per_system {
            for (name, p) in map {
                if !known.contains(name) {
                    return Err(Error::Config(format!("{what} given for unknown system `{name}`")));
                }
                exists(what, p)?;
            }
        }
        if let Some(p) = &self.dataset.ratings {
            exists("ratings", p)?;
        }
        Ok(())
    }

    /// Hex SHA-256 over the configuration, the manifest bytes and the
    /// embedder identity.
    pub fn digest(&self) -> Result<String> {
        let manifest_path = self.resolve(&self.dataset.manifest);
        let manifest_bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let embedder = match &self.embedder {
            EmbedderConfig::Builtin => BUILTIN_EMBEDDER_ID.to_string(),
            EmbedderConfig::External { .. } => "external".to_string(),
        };
        let doc = serde_json::json!({
            "version": DIGEST_VERSION,
            "config": self,
            "embedder": embedder,
            "manifest_sha256": hex::encode(Sha256::digest(&manifest_bytes)),
        });
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&doc)?)))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub run_dir: PathBuf,
    pub digest: String,
    pub records: Vec<RunRecord>,
}

struct EventLog {
    file: std::fs::File,
    path: PathBuf,
}

impl EventLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    fn event(&mut self, stage: &str, system: &str, detail: serde_json::Value) -> Result<()> {
        let line = serde_json::json!({ "stage": stage, "system": system, "detail": detail });
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Anonymizes every record of `manifest` into `out_dir/<utterance_id>.wav`
/// and writes `out_dir/manifest.csv`. Returns the new manifest and per
/// utterance statistics in manifest order.
pub fn anonymize_manifest(
    manifest: &Manifest,
    cfg: &McAdamsConfig,
    out_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<(Manifest, Vec<(String, AnonymizeStats)>)> {
    cfg.validate(CORPUS_SAMPLE_RATE)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let work = |r: &ManifestRecord| -> Result<(ManifestRecord, AnonymizeStats)> {
        let audio = read_wav_at(manifest.audio_path(r), CORPUS_SAMPLE_RATE)?;
        let (out, stats) = anonymize_utterance(&audio, cfg, &r.utterance_id)?;
        let rel = PathBuf::from(format!("{}.wav", r.utterance_id));
        let written = write_wav(&out, out_dir.join(&rel))?;
        if written.clipped > 0 {
            log::warn!("{}: {} samples clipped", r.utterance_id, written.clipped);
        }
        Ok((ManifestRecord { path: rel, ..r.clone() }, stats))
    };
    let results: Vec<(ManifestRecord, AnonymizeStats)> = pool(jobs)?.install(|| {
        manifest.records.par_iter().map(work).collect::<Result<Vec<_>>>()
    })?;
    let mut stats = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for (r, s) in results {
        stats.push((r.utterance_id.clone(), s));
        records.push(r);
    }
    let mut out = Manifest::new(records);
    out.write_csv(out_dir.join(crate::adapters::MANIFEST_FILE))?;
    out.base_dir = Some(out_dir.to_path_buf());
    Ok((out, stats))
}

/// Built-in embeddings for the selected utterances (all when `ids` is `None`).
pub fn embed_manifest(
    manifest: &Manifest,
    ids: Option<&BTreeSet<&str>>,
    jobs: usize,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let records: Vec<&ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| ids.is_none_or(|s| s.contains(r.utterance_id.as_str())))
        .collect();
    let vectors = pool(jobs)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                let audio = read_wav_at(manifest.audio_path(r), CORPUS_SAMPLE_RATE)?;
                builtin_embed(&r.utterance_id, &audio)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(vectors.into_iter().map(|v| (v.utterance_id.clone(), v)).collect())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    let n = if jobs == 0 { rayon::current_num_threads() } else { jobs };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Drops enrollment and test utterances that have no embedding, and models
/// left without enrollment. Returns the restricted protocol and the number of
/// trials removed.
fn restrict(protocol: &TrialProtocol, available: &BTreeMap<String, EmbeddingVector>) -> (TrialProtocol, usize) {
    let models: Vec<_> = protocol
        .models
        .iter()
        .filter_map(|m| {
            let enrollment: Vec<String> = m.enrollment.iter().filter(|u| available.contains_key(*u)).cloned().collect();
            (!enrollment.is_empty()).then(|| crate::protocol::SpeakerModel {
                enrollment,
                ..m.clone()
            })
        })
        .collect();
    let kept: BTreeSet<&str> = models.iter().map(|m| m.model_id.as_str()).collect();
    let trials: Vec<_> = protocol
        .trials
        .iter()
        .filter(|t| kept.contains(t.model_id.as_str()) && available.contains_key(&t.test_utterance_id))
        .cloned()
        .collect();
    let dropped = protocol.trials.len() - trials.len();
    (
        TrialProtocol {
            models,
            trials,
            age_groups: protocol.age_groups.clone(),
        },
        dropped,
    )
}

/// Runs the configured evaluation, writing artifacts under
/// `<runs_dir>/<digest prefix>/`. Any stage error aborts the run with the
/// stage name; files written so far are kept.
pub fn run_pipeline(cfg: &RunConfig, jobs: usize) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| e.in_stage("validate"))?;
    let digest = cfg.digest()?;
    let run_dir = cfg.resolve(&cfg.runs_dir).join(&digest[..16]);
    for sub in ["anonymized", "embeddings", "scores", "protocol"] {
        let d = run_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut log = EventLog::create(run_dir.join("log.jsonl"))?;
    log.event("start", "", serde_json::json!({ "digest": digest, "seed": cfg.seed }))?;

    let manifest = Manifest::read_csv(cfg.resolve(&cfg.dataset.manifest))?;
    let protocol = build_protocol(&manifest, &cfg.protocol.to_spec(cfg.seed)).map_err(|e| e.in_stage("protocol"))?;
    protocol.write_models(run_dir.join("protocol/models.txt"))?;
    protocol.write_trials(run_dir.join("protocol/trials.txt"))?;
    let groups = protocol.model_groups(&manifest);
    let group_labels: Vec<String> = protocol.age_groups.iter().map(AgeGroup::label).collect();
    let needed: BTreeSet<&str> = protocol.utterances();
    log.event(
        "protocol",
        "",
        serde_json::json!({ "models": protocol.models.len(), "trials": protocol.trials.len() }),
    )?;

    let mut records = Vec::new();
    let mut push = |system: &str, group: Option<&str>, metric: Metric, value: f64, counts: BTreeMap<String, usize>| {
        records.push(RunRecord {
            dataset: cfg.dataset.name.clone(),
            system: system.to_string(),
            age_group: group.map(str::to_string),
            metric,
            value,
            counts,
            config_digest: digest.clone(),
        });
    };
    let utt_group = |r: &ManifestRecord| -> Option<String> {
        r.age.and_then(|a| protocol.age_groups.iter().find(|g| g.contains(a)).map(AgeGroup::label))
    };

    for system in cfg.system_names() {
        let started = Instant::now();
        // anonymize
        let sys_manifest = match cfg.systems.get(&system) {
            None => manifest.clone(),
            Some(SystemConfig::Mcadams(mc)) => {
                let mc = McAdamsConfig { seed: cfg.seed, ..mc.clone() };
                let (m, stats) = anonymize_manifest(&manifest, &mc, run_dir.join("anonymized").join(&system), jobs)
                    .map_err(|e| e.in_stage(&format!("anonymize:{system}")))?;
                let failed: usize = stats.iter().map(|(_, s)| s.failed_frames).sum();
                let frames: usize = stats.iter().map(|(_, s)| s.frames).sum();
                log.event("anonymize", &system, serde_json::json!({ "utterances": m.records.len(), "frames": frames, "failed_frames": failed }))?;
                m
            }
            Some(SystemConfig::External(spec)) => {
                let run = run_external(&manifest, spec, run_dir.join("anonymized").join(&system), jobs)
                    .map_err(|e| e.in_stage(&format!("anonymize:{system}")))?;
                log.event(
                    "anonymize",
                    &system,
                    serde_json::json!({ "utterances": run.manifest.records.len(), "failures": run.failures().count() }),
                )?;
                run.manifest
            }
        };

        // embed: lazy-informed attacker, enrollment and test both processed
        let embeddings = match &cfg.embedder {
            EmbedderConfig::Builtin => embed_manifest(&sys_manifest, Some(&needed), jobs),
            EmbedderConfig::External { embeddings } => load_embeddings(cfg.resolve(&embeddings[&system])),
        }
        .map_err(|e| e.in_stage(&format!("embed:{system}")))?;
        write_embeddings(run_dir.join("embeddings").join(format!("{system}.tsv")), embeddings.values())?;
        log.event("embed", &system, serde_json::json!({ "embeddings": embeddings.len() }))?;

        // score
        let (sys_protocol, dropped) = restrict(&protocol, &embeddings);
        if dropped > 0 {
            log::warn!("{system}: {dropped} trials dropped for missing embeddings");
        }
        let scores = score_trials(&sys_protocol, &embeddings).map_err(|e| e.in_stage(&format!("score:{system}")))?;
        scores.write(run_dir.join("scores").join(format!("{system}.txt")))?;
        log.event("score", &system, serde_json::json!({ "trials": scores.len(), "dropped": dropped }))?;

        // eer
        let mut eer_sets: Vec<(Option<&str>, ScoreSet)> = vec![(None, scores.clone())];
        for label in &group_labels {
            let models: Vec<&str> = groups.iter().filter(|(_, g)| *g == label).map(|(m, _)| m.as_str()).collect();
            eer_sets.push((Some(label.as_str()), scores.filter_models(&models)));
        }
        for (group, set) in eer_sets {
            let eer = compute_eer(&set).map_err(|e| e.in_stage(&format!("eer:{system}")))?;
            let counts = BTreeMap::from([("target".to_string(), eer.n_target), ("nontarget".to_string(), eer.n_nontarget)]);
            push(&system, group, Metric::Eer, eer.eer_percent, counts);
        }

        // wer
        if let Some(path) = cfg.dataset.hypotheses.get(&system) {
            let hyps = read_transcripts(cfg.resolve(path)).map_err(|e| e.in_stage(&format!("wer:{system}")))?;
            let mut buckets: Vec<(Option<String>, BTreeMap<String, String>)> = vec![(None, BTreeMap::new())];
            buckets.extend(group_labels.iter().map(|g| (Some(g.clone()), BTreeMap::new())));
            for r in &sys_manifest.records {
                let Some(text) = &r.transcript else { continue };
                buckets[0].1.insert(r.utterance_id.clone(), text.clone());
                if let Some(g) = utt_group(r) {
                    if let Some(b) = buckets.iter_mut().find(|(l, _)| l.as_deref() == Some(g.as_str())) {
                        b.1.insert(r.utterance_id.clone(), text.clone());
                    }
                }
            }
            for (group, refs) in buckets.iter().filter(|(_, refs)| !refs.is_empty()) {
                let w = corpus_wer(refs, &hyps).map_err(|e| e.in_stage(&format!("wer:{system}")))?;
                let counts = BTreeMap::from([
                    ("utterances".to_string(), refs.len()),
                    ("ref_words".to_string(), w.n_ref_words),
                    ("substitutions".to_string(), w.substitutions),
                    ("deletions".to_string(), w.deletions),
                    ("insertions".to_string(), w.insertions),
                ]);
                push(&system, group.as_deref(), Metric::Wer, w.wer_percent(), counts);
            }
        }

        // predicted quality
        if let Some(path) = cfg.dataset.quality_scores.get(&system) {
            let q = ingest_quality_scores(cfg.resolve(path)).map_err(|e| e.in_stage(&format!("wvmos:{system}")))?;
            let ids = |group: Option<&str>| -> Vec<&str> {
                sys_manifest
                    .records
                    .iter()
                    .filter(|r| group.is_none() || utt_group(r).as_deref() == group)
                    .map(|r| r.utterance_id.as_str())
                    .collect()
            };
            let mut groups_to_report: Vec<Option<&str>> = vec![None];
            groups_to_report.extend(group_labels.iter().map(|g| Some(g.as_str())));
            for group in groups_to_report {
                if let Some((mean, n)) = q.mean_over(ids(group)) {
                    push(&system, group, Metric::WvMos, mean, BTreeMap::from([("utterances".to_string(), n)]));
                } else if group.is_none() {
                    return Err(Error::Config(format!("no quality scores match `{system}` utterances")).in_stage(&format!("wvmos:{system}")));
                }
            }
        }
        log.event("done", &system, serde_json::json!({ "elapsed_ms": started.elapsed().as_millis() as u64 }))?;
    }

    // listening-test ratings
    if let Some(path) = &cfg.dataset.ratings {
        let ratings = read_ratings(cfg.resolve(path)).map_err(|e| e.in_stage("ndmos"))?;
        let table = aggregate_mos(&ratings, GroupBy::System);
        for row in &table.rows {
            let counts = BTreeMap::from([("ratings".to_string(), row.count)]);
            push(&row.group, None, Metric::NdMos, row.mean, counts.clone());
            push(&row.group, None, Metric::AdultFraction, 100.0 * row.adult_fraction(), counts);
        }
        log.event("ndmos", "", serde_json::json!({ "rows": table.rows.len(), "rejected": table.rejected, "pooling": table.pooling }))?;
    }

    let metrics_path = run_dir.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&records)? + "\n").map_err(|e| Error::io(&metrics_path, e))?;
    log.event("finish", "", serde_json::json!({ "records": records.len() }))?;
    Ok(PipelineOutput { run_dir, digest, records })
}
