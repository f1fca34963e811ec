//! Build a verification protocol over a synthetic corpus and check it.

use voxveil::protocol::{build_protocol, validate_protocol, AgeGroup, ProtocolSpec, TrialLabel};
use voxveil::synth::{random_speakers, write_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = write_corpus(dir.path(), &random_speakers(12, 1), 8, 1)?;
    let spec = ProtocolSpec {
        n_enroll_per_speaker: 3,
        n_test_per_speaker: 5,
        min_impostor_utts: 3,
        age_groups: vec![AgeGroup([6.0, 10.0]), AgeGroup([11.0, 16.0])],
        seed: 1,
    };
    let protocol = build_protocol(&manifest, &spec)?;
    println!(
        "{} models, {} target and {} nontarget trials",
        protocol.models.len(),
        protocol.count(TrialLabel::Target),
        protocol.count(TrialLabel::Nontarget)
    );
    for (model, group) in protocol.model_groups(&manifest) {
        println!("  {model}: {group}");
    }
    let report = validate_protocol(&protocol, &manifest);
    println!("valid: {}", report.is_valid());
    Ok(())
}
