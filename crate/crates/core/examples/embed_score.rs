//! Embed original and anonymized utterances and score a protocol against both.

use voxveil::mcadams::McAdamsConfig;
use voxveil::metrics::{compute_eer, score_trials};
use voxveil::pipeline::{anonymize_manifest, embed_manifest};
use voxveil::protocol::{build_protocol, ProtocolSpec};
use voxveil::synth::{random_speakers, write_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let original = write_corpus(dir.path().join("orig"), &random_speakers(8, 4), 12, 4)?;
    let spec = ProtocolSpec {
        n_enroll_per_speaker: 4,
        n_test_per_speaker: 8,
        min_impostor_utts: 4,
        age_groups: Vec::new(),
        seed: 4,
    };
    let protocol = build_protocol(&original, &spec)?;
    let (anonymized, _) = anonymize_manifest(&original, &McAdamsConfig::default(), dir.path().join("anon"), 0)?;

    for (name, manifest) in [("original", &original), ("McAdams", &anonymized)] {
        let embeddings = embed_manifest(manifest, None, 0)?;
        let scores = score_trials(&protocol, &embeddings)?;
        println!("{name}: EER {:.2}% over {} trials", compute_eer(&scores)?.eer_percent, scores.len());
    }
    Ok(())
}
