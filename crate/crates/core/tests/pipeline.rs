use std::path::Path;

use voxveil::metrics::{write_ratings, AgeEstimate, RatingRecord};
use voxveil::pipeline::{run_pipeline, RunConfig};
use voxveil::report::{build_report, load_run_records, Metric, ReportFormat, ReportOptions};
use voxveil::synth::{random_speakers, write_corpus};
use voxveil::Error;

fn corpus(dir: &Path, speakers: usize, utts: usize) {
    let m = write_corpus(dir.join("corpus"), &random_speakers(speakers, 5), utts, 5).unwrap();
    m.write_csv(dir.join("corpus/manifest.csv")).unwrap();
}

const BASE: &str = r#"
seed = 11
[dataset]
name = "synthetic"
manifest = "corpus/manifest.csv"
[protocol]
n_enroll_per_speaker = 2
n_test_per_speaker = 3
[systems.McAdams]
type = "mcadams"
alpha = 0.8
"#;

#[test]
fn rerun_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 4, 5);
    let cfg = RunConfig::from_toml_str(BASE, dir.path()).unwrap();
    let a = run_pipeline(&cfg, 2).unwrap();
    let scores_a = std::fs::read(a.run_dir.join("scores/McAdams.txt")).unwrap();
    let b = run_pipeline(&cfg, 1).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.run_dir, b.run_dir);
    assert_eq!(scores_a, std::fs::read(b.run_dir.join("scores/McAdams.txt")).unwrap());
    for sub in ["anonymized/McAdams", "embeddings", "scores", "metrics.json", "log.jsonl"] {
        assert!(a.run_dir.join(sub).exists(), "{sub}");
    }
    assert!(a.records.iter().all(|r| r.config_digest == a.digest));

    let reseeded = RunConfig { seed: 12, ..cfg };
    assert_ne!(run_pipeline(&reseeded, 2).unwrap().digest, a.digest);
}

#[test]
fn age_groups_ratings_and_report() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 8, 5);
    let ratings: Vec<RatingRecord> = ["original", "McAdams"]
        .iter()
        .flat_map(|sys| {
            (0..4).map(move |i| RatingRecord {
                listener_id: format!("l{i}"),
                sample_id: format!("{sys}-{i}"),
                system: sys.to_string(),
                naturalness: if *sys == "original" { 5 } else { 1 + i },
                age_estimate: if i == 0 { AgeEstimate::Adult } else { AgeEstimate::Child },
                timestamp: "t".into(),
            })
        })
        .collect();
    write_ratings(dir.path().join("ratings.csv"), &ratings).unwrap();
    let text = BASE
        .replace("manifest = \"corpus/manifest.csv\"", "manifest = \"corpus/manifest.csv\"\nratings = \"ratings.csv\"")
        .replace("n_test_per_speaker = 3", "n_test_per_speaker = 3\nage_groups = [[0, 10], [11, 18]]");
    let cfg = RunConfig::from_toml_str(&text, dir.path()).unwrap();
    let out = run_pipeline(&cfg, 0).unwrap();

    let groups: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.metric == Metric::Eer && r.system == "original")
        .map(|r| r.age_group.clone())
        .collect();
    assert_eq!(groups, [None, Some("0-10".into()), Some("11-18".into())]);
    let nd = out.records.iter().find(|r| r.metric == Metric::NdMos && r.system == "McAdams").unwrap();
    assert_eq!(nd.value, 2.5);
    let adult = out.records.iter().find(|r| r.metric == Metric::AdultFraction && r.system == "original").unwrap();
    assert_eq!(adult.value, 25.0);

    let records = load_run_records(dir.path().join("runs")).unwrap();
    let md = build_report(&records, ReportFormat::Markdown, &ReportOptions::default()).unwrap();
    assert!(md.contains("### EER (%)"));
    assert!(md.contains("synthetic / 0-10"));
    assert!(md.contains("### ND-MOS"));
}

#[test]
fn failing_stage_is_named_and_artifacts_kept() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 3, 5);
    let text = format!("{BASE}\n[systems.zbroken]\ntype = \"external\"\ncommand = \"false {{in}} {{out}}\"\n");
    let cfg = RunConfig::from_toml_str(&text, dir.path()).unwrap();
    let err = run_pipeline(&cfg, 1).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "anonymize:zbroken"),
        other => panic!("{other:?}"),
    }
    let run_dir = dir.path().join("runs").join(&cfg.digest().unwrap()[..16]);
    assert!(run_dir.join("scores/McAdams.txt").exists());
    assert!(run_dir.join("anonymized/zbroken/run_log.jsonl").exists());
}

#[test]
fn validation_happens_before_work() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 3, 5);
    let text = BASE.replace(
        "manifest = \"corpus/manifest.csv\"",
        "manifest = \"corpus/manifest.csv\"\nhypotheses = { McAdams = \"missing.csv\" }",
    );
    let cfg = RunConfig::from_toml_str(&text, dir.path()).unwrap();
    let err = run_pipeline(&cfg, 1).unwrap_err();
    assert!(err.to_string().contains("missing.csv"), "{err}");
    assert!(!dir.path().join("runs").exists());
}
