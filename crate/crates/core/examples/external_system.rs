//! Run a command-line anonymizer over a manifest. The default system copies
//! its input, so the output equals the original corpus.
//!
//! cargo run --example external_system -- ['my-anon --in {in} --out {out}']

use voxveil::adapters::{run_external, ExternalSystemSpec, RunStatus};
use voxveil::synth::{random_speakers, write_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let command = std::env::args().nth(1).unwrap_or_else(|| "cp {in} {out}".into());
    let dir = tempfile::tempdir()?;
    let manifest = write_corpus(dir.path().join("corpus"), &random_speakers(2, 6), 3, 6)?;

    let spec = ExternalSystemSpec::new("demo", command);
    let run = run_external(&manifest, &spec, dir.path().join("out"), 2)?;
    for entry in &run.log {
        match entry.status {
            RunStatus::Ok => println!("{} ok in {} ms", entry.utterance_id, entry.duration_ms),
            RunStatus::Failed => println!("{} failed: {}", entry.utterance_id, entry.stderr),
        }
    }
    println!("{} outputs, {} failures", run.manifest.records.len(), run.failures().count());
    Ok(())
}
