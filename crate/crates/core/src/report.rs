//! Result tables: systems as columns, dataset (and age group) as rows, one
//! table per metric, best cell per row marked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "EER")]
    Eer,
    #[serde(rename = "WER")]
    Wer,
    #[serde(rename = "WVMOS")]
    WvMos,
    #[serde(rename = "NDMOS")]
    NdMos,
    #[serde(rename = "adult_fraction")]
    AdultFraction,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Eer, Metric::Wer, Metric::WvMos, Metric::NdMos, Metric::AdultFraction];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Eer => "EER",
            Metric::Wer => "WER",
            Metric::WvMos => "WVMOS",
            Metric::NdMos => "NDMOS",
            Metric::AdultFraction => "adult_fraction",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Eer => "EER (%)",
            Metric::Wer => "WER (%)",
            Metric::WvMos => "WV-MOS",
            Metric::NdMos => "ND-MOS",
            Metric::AdultFraction => "Judged adult (%)",
        }
    }

    /// `Some(true)` when higher is better, `None` when no cell is "best".
    pub fn higher_is_better(self) -> Option<bool> {
        match self {
            Metric::Eer | Metric::WvMos | Metric::NdMos => Some(true),
            Metric::Wer => Some(false),
            Metric::AdultFraction => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One metric value for one (dataset, system, age group). EER, WER and the
/// adult fraction are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub system: String,
    #[serde(default)]
    pub age_group: Option<String>,
    pub metric: Metric,
    pub value: f64,
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    pub config_digest: String,
}

impl RunRecord {
    pub fn key(&self) -> (String, Option<String>, String, Metric) {
        (self.dataset.clone(), self.age_group.clone(), self.system.clone(), self.metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportOptions {
    /// Systems shown first and never marked best (the unanonymized speech).
    pub reference_systems: Vec<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            reference_systems: vec!["original".into()],
        }
    }
}

#[derive(Debug, Serialize)]
struct Cell<'a> {
    #[serde(flatten)]
    record: &'a RunRecord,
    best: bool,
}

type RowKey = (String, Option<String>);

struct Grid<'a> {
    systems: Vec<String>,
    /// metric -> row -> system -> record
    cells: BTreeMap<Metric, BTreeMap<RowKey, BTreeMap<&'a str, &'a RunRecord>>>,
    best: BTreeSet<(String, Option<String>, String, Metric)>,
}

fn grid<'a>(records: &'a [RunRecord], opts: &ReportOptions) -> Result<Grid<'a>> {
    let mut seen = BTreeSet::new();
    let mut cells: BTreeMap<Metric, BTreeMap<RowKey, BTreeMap<&str, &RunRecord>>> = BTreeMap::new();
    for r in records {
        let key = r.key();
        if !seen.insert(key.clone()) {
            let group = r.age_group.as_deref().map(|g| format!("/{g}")).unwrap_or_default();
            return Err(Error::DuplicateRecord(format!(
                "{}{group} {} {}",
                r.dataset, r.system, r.metric
            )));
        }
        cells
            .entry(r.metric)
            .or_default()
            .entry((r.dataset.clone(), r.age_group.clone()))
            .or_default()
            .insert(r.system.as_str(), r);
    }

    let all: BTreeSet<&str> = records.iter().map(|r| r.system.as_str()).collect();
    let mut systems: Vec<String> = opts
        .reference_systems
        .iter()
        .filter(|s| all.contains(s.as_str()))
        .cloned()
        .collect();
    systems.extend(
        all.iter()
            .filter(|s| !opts.reference_systems.iter().any(|r| r == *s))
            .map(|s| s.to_string()),
    );

    let mut best = BTreeSet::new();
    for (metric, rows) in &cells {
        let Some(higher) = metric.higher_is_better() else {
            continue;
        };
        for ((dataset, group), row) in rows {
            let candidates: Vec<&&RunRecord> = row
                .values()
                .filter(|r| !opts.reference_systems.contains(&r.system))
                .collect();
            let pick = |a: f64, b: f64| if higher { a.max(b) } else { a.min(b) };
            let Some(target) = candidates.iter().map(|r| r.value).reduce(pick) else {
                continue;
            };
            // ties compare at display precision
            let shown = |v: f64| format!("{v:.2}");
            for r in candidates.iter().filter(|r| shown(r.value) == shown(target)) {
                best.insert((dataset.clone(), group.clone(), r.system.clone(), *metric));
            }
        }
    }
    Ok(Grid { systems, cells, best })
}

/// Renders records as markdown tables, long-form CSV, or JSON.
pub fn build_report(records: &[RunRecord], format: ReportFormat, opts: &ReportOptions) -> Result<String> {
    let g = grid(records, opts)?;
    match format {
        ReportFormat::Markdown => Ok(markdown(&g)),
        ReportFormat::Csv => long_form_csv(records, &g),
        ReportFormat::Json => {
            let cells: Vec<Cell> = sorted(records)
                .into_iter()
                .map(|r| Cell {
                    record: r,
                    best: g.best.contains(&r.key()),
                })
                .collect();
            Ok(serde_json::to_string_pretty(&cells)? + "\n")
        }
    }
}

fn sorted(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().collect();
    v.sort_by(|a, b| (a.metric, &a.dataset, &a.age_group, &a.system).cmp(&(b.metric, &b.dataset, &b.age_group, &b.system)));
    v
}

fn markdown(g: &Grid) -> String {
    let mut out = String::new();
    for (metric, rows) in &g.cells {
        let _ = writeln!(out, "### {}\n", metric.title());
        let _ = writeln!(out, "| Dataset | {} |", g.systems.join(" | "));
        let _ = writeln!(out, "|---|{}", "---:|".repeat(g.systems.len()));
        for ((dataset, group), row) in rows {
            let label = match group {
                Some(gr) => format!("{dataset} / {gr}"),
                None => dataset.clone(),
            };
            let cells: Vec<String> = g
                .systems
                .iter()
                .map(|s| match row.get(s.as_str()) {
                    None => "--".to_string(),
                    Some(r) if g.best.contains(&r.key()) => format!("**{:.2}**", r.value),
                    Some(r) => format!("{:.2}", r.value),
                })
                .collect();
            let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
        }
        out.push('\n');
    }
    out
}

fn long_form_csv(records: &[RunRecord], g: &Grid) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "age_group", "system", "metric", "value", "best", "config_digest"])?;
    for r in sorted(records) {
        w.write_record([
            r.dataset.as_str(),
            r.age_group.as_deref().unwrap_or(""),
            r.system.as_str(),
            r.metric.as_str(),
            &format!("{:?}", r.value),
            if g.best.contains(&r.key()) { "true" } else { "false" },
            r.config_digest.as_str(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Collects the records of every `metrics.json` below `dir`.
pub fn load_run_records(dir: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let mut files = Vec::new();
    collect_metrics_files(dir.as_ref(), &mut files)?;
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let records: Vec<RunRecord> = serde_json::from_str(&text)?;
        out.extend(records);
    }
    Ok(out)
}

fn collect_metrics_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_metrics_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.json") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(dataset: &str, group: Option<&str>, system: &str, metric: Metric, value: f64) -> RunRecord {
        RunRecord {
            dataset: dataset.into(),
            system: system.into(),
            age_group: group.map(str::to_string),
            metric,
            value,
            counts: BTreeMap::new(),
            config_digest: "d".into(),
        }
    }

    fn md(records: &[RunRecord]) -> String {
        build_report(records, ReportFormat::Markdown, &ReportOptions::default()).unwrap()
    }

    #[test]
    fn wer_min_is_best() {
        let out = md(&[rec("d", None, "a", Metric::Wer, 10.0), rec("d", None, "b", Metric::Wer, 20.0)]);
        assert!(out.contains("**10.00**"));
        assert!(!out.contains("**20.00**"));
    }

    #[test]
    fn eer_max_is_best_and_reference_excluded() {
        let out = md(&[
            rec("LibriSpeech", None, "original", Metric::Eer, 60.0),
            rec("LibriSpeech", None, "McAdams", Metric::Eer, 25.24),
            rec("LibriSpeech", None, "ASR-BN", Metric::Eer, 49.49),
        ]);
        assert!(out.contains("**49.49**"));
        assert!(!out.contains("**60.00**"));
        assert!(out.contains("| Dataset | original | ASR-BN | McAdams |"));
    }

    #[test]
    fn ties_all_marked() {
        let out = md(&[
            rec("SpeechOcean", Some("11-15"), "NAC", Metric::Eer, 50.37),
            rec("SpeechOcean", Some("11-15"), "STTTS", Metric::Eer, 50.37),
            rec("SpeechOcean", Some("11-15"), "McAdams", Metric::Eer, 30.0),
        ]);
        assert_eq!(out.matches("**50.37**").count(), 2);
        assert!(out.contains("SpeechOcean / 11-15"));
    }

    #[test]
    fn missing_cell_is_dashes() {
        let out = md(&[
            rec("LibriSpeech", None, "McAdams", Metric::Eer, 25.0),
            rec("MyST", None, "McAdams", Metric::Eer, 30.0),
            rec("MyST", None, "KNN-VC", Metric::Eer, 40.0),
        ]);
        let libri = out.lines().find(|l| l.starts_with("| LibriSpeech")).unwrap();
        assert!(libri.contains("--"), "{libri}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let r = rec("d", None, "a", Metric::Wer, 1.0);
        let err = build_report(&[r.clone(), r], ReportFormat::Csv, &ReportOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateRecord(_)));
    }

    #[test]
    fn csv_and_json_carry_identical_values() {
        let records = vec![
            rec("d", None, "a", Metric::Wer, 1.0 / 3.0),
            rec("d", None, "b", Metric::NdMos, 3.25),
            rec("d", Some("6-10"), "a", Metric::AdultFraction, 12.0),
        ];
        let opts = ReportOptions::default();
        let csv_text = build_report(&records, ReportFormat::Csv, &opts).unwrap();
        let json_text = build_report(&records, ReportFormat::Json, &opts).unwrap();
        let json: Vec<serde_json::Value> = serde_json::from_str(&json_text).unwrap();
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), json.len());
        for (row, j) in rows.iter().zip(&json) {
            assert_eq!(row[4].parse::<f64>().unwrap(), j["value"].as_f64().unwrap());
            assert_eq!(&row[2], j["system"].as_str().unwrap());
            assert_eq!(&row[5] == "true", j["best"].as_bool().unwrap());
        }
    }

    #[test]
    fn load_from_run_dirs() {
        let dir = tempfile::tempdir().unwrap();
        for (i, sys) in ["a", "b"].iter().enumerate() {
            let d = dir.path().join(format!("run{i}"));
            std::fs::create_dir_all(&d).unwrap();
            let recs = vec![rec("d", None, sys, Metric::Eer, i as f64)];
            std::fs::write(d.join("metrics.json"), serde_json::to_string(&recs).unwrap()).unwrap();
        }
        assert_eq!(load_run_records(dir.path()).unwrap().len(), 2);
    }
}
