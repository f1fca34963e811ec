//! End-to-end evaluation from a TOML config: synthetic corpus, McAdams
//! anonymization at two alphas, privacy and utility metrics, report table.
//!
//! cargo run --release --example pipeline -- [run.toml]

use voxveil::pipeline::{run_pipeline, RunConfig};
use voxveil::report::{build_report, ReportFormat, ReportOptions};
use voxveil::synth::{random_speakers, write_corpus};

const CONFIG: &str = r#"
seed = 7

[dataset]
name = "synthetic"
manifest = "corpus/manifest.csv"

[protocol]
n_enroll_per_speaker = 5
n_test_per_speaker = 15

[systems.McAdams]
type = "mcadams"
alpha = 0.8

[systems."McAdams-0.9"]
type = "mcadams"
alpha = 0.9
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path)?,
        None => {
            let dir = tempfile::tempdir()?.keep();
            let manifest = write_corpus(dir.join("corpus"), &random_speakers(10, 7), 20, 7)?;
            manifest.write_csv(dir.join("corpus/manifest.csv"))?;
            RunConfig::from_toml_str(CONFIG, &dir)?
        }
    };
    let out = run_pipeline(&cfg, 0)?;
    println!("run directory {}", out.run_dir.display());
    print!("{}", build_report(&out.records, ReportFormat::Markdown, &ReportOptions::default())?);
    Ok(())
}
