//! Plugging in external anonymization systems and ingesting per-utterance
//! quality scores produced by external predictors.
//!
//! An external system is any command line that reads one WAV and writes
//! another. Its template names the two files with `{in}` and `{out}`:
//!
//! ```toml
//! [systems.copy]
//! command = "cp {in} {out}"
//! timeout_s = 30
//! expected_sample_rate = 16000
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::protocol::{Manifest, ManifestRecord};

const STDERR_EXCERPT_CHARS: usize = 400;
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSystemSpec {
    #[serde(default)]
    pub name: String,
    /// Per-utterance command with `{in}` and `{out}` placeholders.
    #[serde(rename = "command")]
    pub command_template: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_rate")]
    pub expected_sample_rate: u32,
    /// Optional single-invocation command with `{in_list}`: a file of
    /// `input<TAB>output` lines.
    #[serde(default, rename = "batch_command")]
    pub batch_template: Option<String>,
}

fn default_timeout() -> f64 {
    600.0
}

fn default_rate() -> u32 {
    crate::audio::CORPUS_SAMPLE_RATE
}

fn count(template: &str, placeholder: &str) -> usize {
    template.matches(placeholder).count()
}

impl ExternalSystemSpec {
    pub fn new(name: impl Into<String>, command_template: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            command_template: command_template.into(),
            timeout_s: default_timeout(),
            expected_sample_rate: default_rate(),
            batch_template: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in ["{in}", "{out}"] {
            let n = count(&self.command_template, p);
            if n != 1 {
                return Err(Error::Config(format!(
                    "system `{}`: command must contain {p} exactly once (found {n})",
                    self.name
                )));
            }
        }
        if let Some(batch) = &self.batch_template {
            if count(batch, "{in_list}") != 1 {
                return Err(Error::Config(format!(
                    "system `{}`: batch_command must contain {{in_list}} exactly once",
                    self.name
                )));
            }
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(Error::Config(format!("system `{}`: timeout_s must be positive", self.name)));
        }
        if self.expected_sample_rate == 0 {
            return Err(Error::Config(format!("system `{}`: sample rate must be positive", self.name)));
        }
        shlex::split(&self.command_template)
            .filter(|argv| !argv.is_empty())
            .ok_or_else(|| Error::Config(format!("system `{}`: command does not parse", self.name)))?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemsFile {
    systems: BTreeMap<String, ExternalSystemSpec>,
}

/// Parses `[systems.<name>]` tables from TOML text.
pub fn parse_systems(text: &str) -> Result<BTreeMap<String, ExternalSystemSpec>> {
    let file: SystemsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (name, mut spec) in file.systems {
        spec.name = name.clone();
        spec.validate()?;
        out.insert(name, spec);
    }
    Ok(out)
}

pub fn load_systems(path: impl AsRef<Path>) -> Result<BTreeMap<String, ExternalSystemSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_systems(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub utterance_id: String,
    pub status: RunStatus,
    pub duration_ms: u64,
    /// Failure reason, or the tail of the command's stderr.
    pub stderr: String,
}

#[derive(Debug, Clone)]
pub struct ExternalRun {
    /// Successful outputs only, paths relative to the output directory.
    pub manifest: Manifest,
    /// One entry per input utterance, sorted by utterance id.
    pub log: Vec<RunLogEntry>,
}

impl ExternalRun {
    pub fn failures(&self) -> impl Iterator<Item = &RunLogEntry> {
        self.log.iter().filter(|e| e.status == RunStatus::Failed)
    }
}

fn excerpt(bytes: &[u8]) -> String {
    let s = String::from_utf8_lossy(bytes);
    let s = s.trim();
    let skip = s.chars().count().saturating_sub(STDERR_EXCERPT_CHARS);
    s.chars().skip(skip).collect()
}

fn substitute(template: &str, vars: &[(&str, &Path)]) -> Result<Vec<String>> {
    let argv = shlex::split(template).ok_or_else(|| Error::Config(format!("command does not parse: {template}")))?;
    Ok(argv
        .into_iter()
        .map(|mut arg| {
            for (k, v) in vars {
                arg = arg.replace(k, &v.to_string_lossy());
            }
            arg
        })
        .collect())
}

/// Runs `argv` with a timeout, returning the stderr excerpt or a failure
/// message.
fn run_command(argv: &[String], timeout: Duration) -> std::result::Result<String, String> {
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start `{}`: {e}", argv[0]))?;
    let mut pipe = child.stderr.take().expect("stderr is piped");
    let reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        buf
    });
    let status = match child.wait_timeout(timeout).map_err(|e| e.to_string())? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(format!("timed out after {:.1} s", timeout.as_secs_f64()));
        }
    };
    let stderr = excerpt(&reader.join().unwrap_or_default());
    if status.success() {
        Ok(stderr)
    } else {
        Err(format!("exit status {status}: {stderr}"))
    }
}

fn check_output(path: &Path, expected_rate: u32) -> std::result::Result<(), String> {
    if !path.exists() {
        return Err("output file missing".into());
    }
    let audio = read_wav(path).map_err(|e| format!("output not decodable: {e}"))?;
    if audio.sample_rate() != expected_rate {
        return Err(format!(
            "sample rate mismatch: expected {expected_rate}, found {}",
            audio.sample_rate()
        ));
    }
    Ok(())
}

/// Runs an external system over every manifest record, writing
/// `<out_dir>/<utterance_id>.wav`, the output manifest and the run log.
///
/// Failures are logged per utterance and the run continues; it is an error
/// only if nothing succeeds. `jobs` bounds concurrent invocations.
pub fn run_external(
    manifest: &Manifest,
    spec: &ExternalSystemSpec,
    out_dir: impl AsRef<Path>,
    jobs: usize,
) -> Result<ExternalRun> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out_dir = out_dir.canonicalize().map_err(|e| Error::io(out_dir, e))?;
    let timeout = Duration::from_secs_f64(spec.timeout_s);

    let jobs_io: Vec<(&ManifestRecord, PathBuf, PathBuf)> = manifest
        .records
        .iter()
        .map(|r| {
            let input = manifest.audio_path(r);
            let input = input.canonicalize().unwrap_or(input);
            (r, input, out_dir.join(format!("{}.wav", r.utterance_id)))
        })
        .collect();

    let mut log: Vec<RunLogEntry> = if let Some(batch) = &spec.batch_template {
        let list = out_dir.join("in_list.tsv");
        let mut f = std::fs::File::create(&list).map_err(|e| Error::io(&list, e))?;
        for (_, input, output) in &jobs_io {
            writeln!(f, "{}\t{}", input.display(), output.display()).map_err(|e| Error::io(&list, e))?;
        }
        drop(f);
        let start = Instant::now();
        let argv = substitute(batch, &[("{in_list}", &list)])?;
        let batch_timeout = timeout * jobs_io.len().max(1) as u32;
        let outcome = run_command(&argv, batch_timeout);
        let ms = start.elapsed().as_millis() as u64;
        jobs_io
            .iter()
            .map(|(r, _, output)| {
                let result = outcome.clone().and_then(|stderr| check_output(output, spec.expected_sample_rate).map(|_| stderr));
                entry(&r.utterance_id, result, ms)
            })
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            jobs_io
                .par_iter()
                .map(|(r, input, output)| {
                    let start = Instant::now();
                    let result = substitute(&spec.command_template, &[("{in}", input), ("{out}", output)])
                        .map_err(|e| e.to_string())
                        .and_then(|argv| run_command(&argv, timeout))
                        .and_then(|stderr| check_output(output, spec.expected_sample_rate).map(|_| stderr));
                    entry(&r.utterance_id, result, start.elapsed().as_millis() as u64)
                })
                .collect()
        })
    };
    log.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));

    let ok: std::collections::HashSet<&str> = log
        .iter()
        .filter(|e| e.status == RunStatus::Ok)
        .map(|e| e.utterance_id.as_str())
        .collect();
    let records: Vec<ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| ok.contains(r.utterance_id.as_str()))
        .map(|r| ManifestRecord {
            path: PathBuf::from(format!("{}.wav", r.utterance_id)),
            ..r.clone()
        })
        .collect();

    write_run_log(out_dir.join(RUN_LOG_FILE), &log)?;
    for e in log.iter().filter(|e| e.status == RunStatus::Failed) {
        log::warn!("{}: {} failed: {}", spec.name, e.utterance_id, e.stderr);
    }
    if records.is_empty() {
        return Err(Error::NoExternalOutputs {
            system: spec.name.clone(),
        });
    }
    let mut out = Manifest::new(records);
    out.write_csv(out_dir.join(MANIFEST_FILE))?;
    out.base_dir = Some(out_dir);
    Ok(ExternalRun { manifest: out, log })
}

fn entry(id: &str, result: std::result::Result<String, String>, duration_ms: u64) -> RunLogEntry {
    let (status, stderr) = match result {
        Ok(s) => (RunStatus::Ok, s),
        Err(s) => (RunStatus::Failed, s),
    };
    RunLogEntry {
        utterance_id: id.to_string(),
        status,
        duration_ms,
        stderr,
    }
}

pub fn write_run_log(path: impl AsRef<Path>, log: &[RunLogEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for e in log {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Externally predicted per-utterance quality (for example WV-MOS).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub scores: BTreeMap<String, f64>,
}

impl QualityScores {
    /// Mean over the given ids; ids without a score are skipped. `None` if
    /// nothing matched.
    pub fn mean_over<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Option<(f64, usize)> {
        let vals: Vec<f64> = ids.into_iter().filter_map(|id| self.scores.get(id).copied()).collect();
        (!vals.is_empty()).then(|| (vals.iter().sum::<f64>() / vals.len() as f64, vals.len()))
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean_over(self.scores.keys().map(String::as_str)).map(|(m, _)| m)
    }
}

/// Reads a headered `utterance_id,score` CSV.
pub fn ingest_quality_scores(path: impl AsRef<Path>) -> Result<QualityScores> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut scores = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let (Some(id), Some(raw)) = (row.get(0), row.get(1)) else {
            return Err(Error::parse(path, line, "expected `utterance_id,score`"));
        };
        let score: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("non-numeric score `{raw}`")))?;
        if !score.is_finite() {
            return Err(Error::parse(path, line, format!("non-finite score `{raw}`")));
        }
        if scores.insert(id.to_string(), score).is_some() {
            return Err(Error::parse(path, line, format!("duplicate utterance id `{id}`")));
        }
    }
    Ok(QualityScores { scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, AudioBuffer};
    use crate::protocol::Split;

    fn fixture(dir: &Path, n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| {
                let id = format!("u{i}");
                let samples = (0..1600).map(|k| ((k + i) as f64 * 0.01).sin() * 0.3).collect();
                write_wav(&AudioBuffer::new(samples, 16000).unwrap(), dir.join(format!("{id}.wav"))).unwrap();
                ManifestRecord {
                    utterance_id: id.clone(),
                    speaker_id: "s".into(),
                    path: PathBuf::from(format!("{id}.wav")),
                    age: None,
                    transcript: None,
                    split: Split::Unassigned,
                }
            })
            .collect();
        let mut m = Manifest::new(records);
        m.base_dir = Some(dir.to_path_buf());
        m
    }

    #[test]
    fn placeholders_checked() {
        assert!(ExternalSystemSpec::new("x", "cp {in} {out}").validate().is_ok());
        assert!(ExternalSystemSpec::new("x", "cp {in}").validate().is_err());
        assert!(ExternalSystemSpec::new("x", "cp {in} {in} {out}").validate().is_err());
    }

    #[test]
    fn systems_from_toml() {
        let systems = parse_systems(
            "[systems.copy]\ncommand = \"cp {in} {out}\"\ntimeout_s = 5\n\n[systems.other]\ncommand = \"x {in} -o {out}\"\n",
        )
        .unwrap();
        assert_eq!(systems["copy"].name, "copy");
        assert_eq!(systems["copy"].timeout_s, 5.0);
        assert_eq!(systems["other"].expected_sample_rate, 16000);
        assert!(parse_systems("[systems.bad]\ncommand = \"cp {in} {out}\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn copy_system_is_identity() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = fixture(src.path(), 3);
        let run = run_external(&m, &ExternalSystemSpec::new("copy", "cp {in} {out}"), out.path(), 2).unwrap();
        assert_eq!(run.manifest.records.len(), 3);
        assert_eq!(run.failures().count(), 0);
        for r in &m.records {
            let a = std::fs::read(m.audio_path(r)).unwrap();
            let b = std::fs::read(out.path().join(format!("{}.wav", r.utterance_id))).unwrap();
            assert_eq!(a, b);
        }
        let reread = Manifest::read_csv(out.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(reread.records, run.manifest.records);
        let log = std::fs::read_to_string(out.path().join(RUN_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3);
    }

    #[test]
    fn one_failure_is_logged_and_skipped() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = fixture(src.path(), 3);
        let spec = ExternalSystemSpec::new(
            "flaky",
            "sh -c 'case \"$0\" in *u1.wav) echo broken >&2; exit 3;; *) cp \"$0\" \"$1\";; esac' {in} {out}",
        );
        let run = run_external(&m, &spec, out.path(), 3).unwrap();
        assert_eq!(run.manifest.records.len(), 2);
        let failed: Vec<_> = run.failures().collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].utterance_id, "u1");
        assert!(failed[0].stderr.contains("broken"));
        let ids: Vec<_> = run.log.iter().map(|e| e.utterance_id.as_str()).collect();
        assert_eq!(ids, ["u0", "u1", "u2"]);
    }

    #[test]
    fn wrong_rate_and_total_failure() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = fixture(src.path(), 2);
        let mut spec = ExternalSystemSpec::new("copy", "cp {in} {out}");
        spec.expected_sample_rate = 8000;
        match run_external(&m, &spec, out.path(), 1) {
            Err(Error::NoExternalOutputs { system }) => assert_eq!(system, "copy"),
            other => panic!("{other:?}"),
        }
        let log = std::fs::read_to_string(out.path().join(RUN_LOG_FILE)).unwrap();
        assert!(log.contains("sample rate mismatch"));
    }

    #[test]
    fn timeout_is_a_failure() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = fixture(src.path(), 1);
        let mut spec = ExternalSystemSpec::new("slow", "sh -c 'sleep 5; cp \"$0\" \"$1\"' {in} {out}");
        spec.timeout_s = 0.2;
        assert!(run_external(&m, &spec, out.path(), 1).is_err());
        let log = std::fs::read_to_string(out.path().join(RUN_LOG_FILE)).unwrap();
        assert!(log.contains("timed out"));
    }

    #[test]
    fn batch_mode() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = fixture(src.path(), 3);
        let mut spec = ExternalSystemSpec::new("copy", "cp {in} {out}");
        spec.batch_template =
            Some("sh -c 'while IFS=\"$(printf \"\\t\")\" read -r i o; do cp \"$i\" \"$o\"; done < \"$0\"' {in_list}".into());
        let run = run_external(&m, &spec, out.path(), 1).unwrap();
        assert_eq!(run.manifest.records.len(), 3);
    }

    #[test]
    fn quality_scores() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        std::fs::write(&p, "utterance_id,score\nu1,3.0\nu2,4.0\n").unwrap();
        let q = ingest_quality_scores(&p).unwrap();
        assert_eq!(q.mean(), Some(3.5));
        assert_eq!(q.mean_over(["u2", "zz"]), Some((4.0, 1)));

        std::fs::write(&p, "utterance_id,score\nu1,3.0\nu1,4.0\n").unwrap();
        assert!(ingest_quality_scores(&p).is_err());
        std::fs::write(&p, "utterance_id,score\nu1,3.0\nu2,NaN\n").unwrap();
        match ingest_quality_scores(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
