//! Anonymize one WAV file, or a synthetic utterance when no path is given.
//!
//! cargo run --example anonymize -- [in.wav] [out.wav] [alpha]

use voxveil::audio::{read_wav, write_wav};
use voxveil::mcadams::{anonymize, McAdamsConfig};
use voxveil::synth::{random_speakers, utterance};

fn main() -> voxveil::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let input = match args.first() {
        Some(path) => read_wav(path)?,
        None => utterance(&random_speakers(1, 3)[0], 3).0,
    };
    let out = args.get(1).map(String::as_str).unwrap_or("anonymized.wav");
    let alpha = args.get(2).map(|a| a.parse().expect("alpha")).unwrap_or(0.8);

    let (anon, stats) = anonymize(&input, &McAdamsConfig::with_alpha(alpha))?;
    write_wav(&anon, out)?;
    println!(
        "{out}: {:.2} s, alpha {}, {} frames ({} silent, {} failed), {} poles repaired",
        anon.duration_secs(),
        stats.alpha,
        stats.frames,
        stats.silent_frames,
        stats.failed_frames,
        stats.repaired_poles
    );
    Ok(())
}
