use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use voxveil::adapters::{ingest_quality_scores, load_systems, run_external};
use voxveil::audio::{FrameConfig, Window};
use voxveil::embedding::write_embeddings;
use voxveil::mcadams::McAdamsConfig;
use voxveil::metrics::{aggregate_mos, compute_eer, corpus_wer, read_ratings, read_transcripts, roc_points, score_trials, GroupBy, ScoreSet};
use voxveil::pipeline::{anonymize_manifest, embed_manifest, run_pipeline, RunConfig};
use voxveil::protocol::{build_protocol, validate_protocol, AgeGroup, Manifest, ProtocolSpec, TrialLabel, TrialProtocol};
use voxveil::report::{build_report, load_run_records, ReportFormat, ReportOptions};
use voxveil::{Error, Result};

#[derive(Parser)]
#[command(name = "voxveil", version, about = "McAdams voice anonymization and privacy/utility evaluation")]
struct Cli {
    /// Worker threads for per-utterance stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anonymize every utterance of a manifest with the McAdams coefficient.
    Anonymize(AnonymizeArgs),
    /// Build or validate a trial protocol.
    #[command(subcommand)]
    Protocol(ProtocolCommand),
    /// Compute built-in embeddings for a manifest.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trials by cosine against mean enrollment embeddings.
    Score {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equal error rate of a score file.
    Eer {
        #[arg(long)]
        scores: PathBuf,
        /// Also write the ROC points as CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Corpus word error rate of hypotheses against references.
    Wer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Mean opinion scores from listening-test ratings or predicted quality.
    Mos {
        #[arg(long, required_unless_present = "quality")]
        ratings: Option<PathBuf>,
        #[arg(long, value_parser = parse_group_by, default_value = "system")]
        group_by: GroupBy,
        /// CSV `utterance_id,score` of predicted quality instead of ratings.
        #[arg(long, conflicts_with = "ratings")]
        quality: Option<PathBuf>,
    },
    /// Run an external anonymization system over a manifest.
    RunExternal {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML file with `[systems.<name>]` tables.
        #[arg(long)]
        systems: PathBuf,
        #[arg(long)]
        system: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render result tables from run directories.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Systems never marked best.
        #[arg(long, value_delimiter = ',', default_value = "original")]
        reference: Vec<String>,
    },
    /// Start the listening-test server (a separate program).
    ServeListeningTest {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Server command; defaults to $VOXVEIL_LISTENING_SERVER.
        #[arg(long)]
        server: Option<String>,
    },
    /// Run a full evaluation from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct AnonymizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    /// Draw alpha per utterance from `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    alpha_range: Option<[f64; 2]>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    order: usize,
    #[arg(long, default_value_t = 20.0)]
    frame_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    hop_ms: f64,
}

#[derive(Subcommand)]
enum ProtocolCommand {
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        n_enroll: usize,
        #[arg(long)]
        n_test: usize,
        /// Defaults to `--n-enroll`.
        #[arg(long)]
        min_impostor: Option<usize>,
        /// Comma-separated year ranges such as `6-10,11-15`.
        #[arg(long, value_delimiter = ',', value_parser = parse_age_group)]
        age_groups: Vec<AgeGroup>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receives `models.txt` and `trials.txt`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
}

fn parse_range(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok([p(lo)?, p(hi)?])
}

fn parse_age_group(s: &str) -> std::result::Result<AgeGroup, String> {
    let (lo, hi) = s.split_once('-').ok_or("expected lo-hi")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok(AgeGroup([p(lo)?, p(hi)?]))
}

fn parse_group_by(s: &str) -> std::result::Result<GroupBy, String> {
    match s {
        "system" => Ok(GroupBy::System),
        "sample" => Ok(GroupBy::Sample),
        "listener" => Ok(GroupBy::Listener),
        other => Err(format!("unknown grouping `{other}`")),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn run(cli: Cli) -> Result<bool> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Anonymize(a) => {
            let manifest = Manifest::read_csv(&a.input)?;
            let cfg = McAdamsConfig {
                alpha: a.alpha,
                lpc_order: a.order,
                frame: FrameConfig::new(a.frame_ms, a.hop_ms, Window::Hann),
                seed: a.seed,
                alpha_range: a.alpha_range,
            };
            let (out, stats) = anonymize_manifest(&manifest, &cfg, &a.out_dir, jobs)?;
            let sum = |f: fn(&voxveil::mcadams::AnonymizeStats) -> usize| stats.iter().map(|(_, s)| f(s)).sum::<usize>();
            print_json(&json!({
                "utterances": out.records.len(),
                "frames": sum(|s| s.frames),
                "silent_frames": sum(|s| s.silent_frames),
                "failed_frames": sum(|s| s.failed_frames),
                "repaired_poles": sum(|s| s.repaired_poles),
            }));
        }
        Command::Protocol(ProtocolCommand::Build { manifest, n_enroll, n_test, min_impostor, age_groups, seed, out_dir }) => {
            let manifest = Manifest::read_csv(&manifest)?;
            let spec = ProtocolSpec {
                n_enroll_per_speaker: n_enroll,
                n_test_per_speaker: n_test,
                min_impostor_utts: min_impostor.unwrap_or(n_enroll),
                age_groups,
                seed,
            };
            let protocol = build_protocol(&manifest, &spec)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Config(format!("{}: {e}", out_dir.display())))?;
            protocol.write_models(out_dir.join("models.txt"))?;
            protocol.write_trials(out_dir.join("trials.txt"))?;
            let report = validate_protocol(&protocol, &manifest);
            print_json(&json!({
                "models": report.n_models,
                "target": report.n_target,
                "nontarget": report.n_nontarget,
                "per_group": report.per_group,
            }));
        }
        Command::Protocol(ProtocolCommand::Validate { manifest, models, trials }) => {
            let manifest = Manifest::read_csv(&manifest)?;
            let protocol = TrialProtocol::read(&models, &trials)?;
            let report = validate_protocol(&protocol, &manifest);
            for v in &report.violations {
                eprintln!("{}: {}", v.kind, v.detail);
            }
            print_json(&json!({
                "models": report.n_models,
                "target": report.n_target,
                "nontarget": report.n_nontarget,
                "per_group": report.per_group,
                "violations": report.violations.len(),
            }));
            return Ok(report.is_valid());
        }
        Command::Embed { manifest, out } => {
            let manifest = Manifest::read_csv(&manifest)?;
            let embeddings = embed_manifest(&manifest, None, jobs)?;
            write_embeddings(&out, embeddings.values())?;
            print_json(&json!({ "embeddings": embeddings.len() }));
        }
        Command::Score { models, trials, embeddings, out } => {
            let protocol = TrialProtocol::read(&models, &trials)?;
            let embeddings = voxveil::embedding::load_embeddings(&embeddings)?;
            let scores = score_trials(&protocol, &embeddings)?;
            scores.write(&out)?;
            print_json(&json!({ "trials": scores.len() }));
        }
        Command::Eer { scores, roc } => {
            let set = ScoreSet::read(&scores)?;
            let eer = compute_eer(&set)?;
            if let Some(path) = roc {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["threshold", "far", "frr"])?;
                for p in roc_points(&set.scores(TrialLabel::Target), &set.scores(TrialLabel::Nontarget)) {
                    w.write_record([p.threshold.to_string(), p.far.to_string(), p.frr.to_string()])?;
                }
                w.flush().map_err(|e| Error::Config(e.to_string()))?;
            }
            print_json(&json!({
                "metric": "EER",
                "value": eer.eer_percent,
                "threshold": eer.threshold,
                "counts": { "target": eer.n_target, "nontarget": eer.n_nontarget },
            }));
        }
        Command::Wer { reference, hyp } => {
            let w = corpus_wer(&read_transcripts(&reference)?, &read_transcripts(&hyp)?)?;
            print_json(&json!({
                "metric": "WER",
                "value": w.wer_percent(),
                "counts": {
                    "ref_words": w.n_ref_words,
                    "substitutions": w.substitutions,
                    "deletions": w.deletions,
                    "insertions": w.insertions,
                },
            }));
        }
        Command::Mos { ratings, group_by, quality } => {
            if let Some(path) = quality {
                let q = ingest_quality_scores(&path)?;
                print_json(&json!({ "metric": "WVMOS", "value": q.mean(), "counts": { "utterances": q.scores.len() } }));
            } else if let Some(path) = ratings {
                let table = aggregate_mos(&read_ratings(&path)?, group_by);
                print_json(&serde_json::to_value(&table)?);
            }
        }
        Command::RunExternal { manifest, systems, system, out_dir } => {
            let manifest = Manifest::read_csv(&manifest)?;
            let systems = load_systems(&systems)?;
            let spec = systems
                .get(&system)
                .ok_or_else(|| Error::Config(format!("no system `{system}` in config")))?;
            let run = run_external(&manifest, spec, &out_dir, jobs)?;
            let failures: Vec<_> = run.failures().map(|e| json!({ "utterance_id": e.utterance_id, "reason": e.stderr })).collect();
            print_json(&json!({ "succeeded": run.manifest.records.len(), "failed": failures }));
        }
        Command::Report { runs, format, out, reference } => {
            let records = load_run_records(&runs)?;
            let doc = build_report(&records, format, &ReportOptions { reference_systems: reference })?;
            match out {
                Some(path) => std::fs::write(&path, doc).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                None => print!("{doc}"),
            }
        }
        Command::ServeListeningTest { study, port, journal, server } => {
            let server = server
                .or_else(|| std::env::var("VOXVEIL_LISTENING_SERVER").ok())
                .ok_or_else(|| {
                    Error::Config("no listening-test server configured; pass --server or set VOXVEIL_LISTENING_SERVER".into())
                })?;
            let mut argv = shlex::split(&server).filter(|a| !a.is_empty()).ok_or_else(|| Error::Config(format!("cannot parse `{server}`")))?;
            argv.extend(["--study".into(), study.display().to_string(), "--port".into(), port.to_string()]);
            if let Some(j) = journal {
                argv.extend(["--journal".into(), j.display().to_string()]);
            }
            let status = std::process::Command::new(&argv[0])
                .args(&argv[1..])
                .status()
                .map_err(|e| Error::Config(format!("cannot start `{}`: {e}", argv[0])))?;
            return Ok(status.success());
        }
        Command::Run { config } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_env()?;
            let out = run_pipeline(&cfg, jobs)?;
            let mut summary: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
            for r in &out.records {
                let key = match &r.age_group {
                    Some(g) => format!("{} {}", r.metric, g),
                    None => r.metric.to_string(),
                };
                summary.entry(r.system.clone()).or_default().insert(key, r.value);
            }
            print_json(&json!({ "run_dir": out.run_dir, "digest": out.digest, "results": summary }));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
