//! Synthetic speech-like fixtures: source-filter "speakers" with their own
//! vocal-tract scaling, formant offsets and pitch, plus a single-resonance
//! test signal. Used by tests, examples and desk-scale pipeline runs.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{write_wav, AudioBuffer, CORPUS_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mcadams::{poles_to_coeffs, synthesize_frame};
use crate::protocol::{Manifest, ManifestRecord, Split};
use num_complex::Complex64;

/// First two formants (Hz) of five vowels for a neutral tract.
const VOWELS: [(&str, [f64; 2]); 5] = [
    ("a", [730.0, 1090.0]),
    ("i", [270.0, 2290.0]),
    ("u", [300.0, 870.0]),
    ("e", [530.0, 1840.0]),
    ("o", [570.0, 840.0]),
];
const BANDWIDTHS: [f64; 5] = [80.0, 100.0, 120.0, 150.0, 200.0];

/// A source-filter speaker. Vowel identity lives in the first two formants;
/// the upper three are fixed per speaker and carry most of the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub id: String,
    /// Mean fundamental frequency in Hz.
    pub f0: f64,
    /// Scale on the vowel formants, >1 for a shorter vocal tract.
    pub tract_scale: f64,
    /// Third to fifth formant in Hz.
    pub upper_formants: [f64; 3],
    pub age: f64,
}

impl SyntheticSpeaker {
    /// Draws a child-like speaker: high pitch, short tract.
    pub fn random<R: Rng>(id: impl Into<String>, rng: &mut R) -> Self {
        Self {
            id: id.into(),
            f0: rng.gen_range(200.0..300.0),
            tract_scale: rng.gen_range(1.0..1.2),
            upper_formants: [
                rng.gen_range(2600.0..3400.0),
                rng.gen_range(3800.0..4800.0),
                rng.gen_range(5200.0..6400.0),
            ],
            age: rng.gen_range(6..16) as f64,
        }
    }

    pub fn formants(&self, vowel: usize) -> [f64; 5] {
        let [f1, f2] = VOWELS[vowel % VOWELS.len()].1;
        let [f3, f4, f5] = self.upper_formants;
        [f1 * self.tract_scale, (f2 * self.tract_scale).min(f3 - 200.0), f3, f4, f5]
    }
}

/// Draws `n` speakers with ids `spk000`, `spk001`, ...
pub fn random_speakers(n: usize, seed: u64) -> Vec<SyntheticSpeaker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| SyntheticSpeaker::random(format!("spk{i:03}"), &mut rng))
        .collect()
}

fn resonator_coeffs(freqs: &[f64], bandwidths: &[f64], rate: f64) -> Vec<f64> {
    let poles: Vec<Complex64> = freqs
        .iter()
        .zip(bandwidths)
        .flat_map(|(&f, &b)| {
            let p = Complex64::from_polar((-PI * b / rate).exp(), 2.0 * PI * f / rate);
            [p, p.conj()]
        })
        .collect();
    poles_to_coeffs(&poles).expect("poles are built in conjugate pairs")
}

/// One utterance: a sequence of vowel segments from a glottal pulse train
/// with jitter, breath noise, and the speaker's formant filter.
/// Returns the audio and the vowel-sequence transcript.
pub fn utterance(speaker: &SyntheticSpeaker, seed: u64) -> (AudioBuffer, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = CORPUS_SAMPLE_RATE as f64;
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let n_segments = rng.gen_range(12..16);
    let mut samples = Vec::new();
    let mut words = Vec::new();
    let mut phase = 0.0;
    for _ in 0..n_segments {
        let vowel = rng.gen_range(0..VOWELS.len());
        words.push(VOWELS[vowel].0);
        let len = (rng.gen_range(0.1..0.16) * rate) as usize;
        let f0 = speaker.f0 * rng.gen_range(0.96..1.04);
        let mut excitation = vec![0.0; len];
        for (n, e) in excitation.iter_mut().enumerate() {
            let jitter = 1.0 + 0.01 * noise.sample(&mut rng);
            phase += f0 * jitter / rate;
            if phase >= 1.0 {
                phase -= 1.0;
                *e += 1.0;
            }
            *e += 0.02 * noise.sample(&mut rng);
            // slow amplitude ramp in and out of the segment
            let t = n as f64 / len as f64;
            *e *= (PI * t).sin().powf(0.5);
        }
        let coeffs = resonator_coeffs(&speaker.formants(vowel), &BANDWIDTHS, rate);
        samples.extend(synthesize_frame(&excitation, &coeffs));
        samples.extend(std::iter::repeat_n(0.0, (0.03 * rate) as usize));
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s *= 0.5 / peak);
    }
    let buffer = AudioBuffer::new(samples, CORPUS_SAMPLE_RATE).expect("finite samples");
    (buffer, words.join(" "))
}

/// White noise through one resonant pole pair at `freq_hz` with radius `r`.
pub fn resonance_signal(freq_hz: f64, r: f64, secs: f64, sample_rate: u32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let n = (secs * sample_rate as f64) as usize;
    let e: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    let theta = 2.0 * PI * freq_hz / sample_rate as f64;
    let mut y = synthesize_frame(&e, &[1.0, -2.0 * r * theta.cos(), r * r]);
    let peak = y.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    y.iter_mut().for_each(|s| *s *= 0.5 / peak);
    AudioBuffer::new(y, sample_rate).expect("finite samples")
}

/// Writes `utts_per_speaker` WAVs per speaker under `dir` and returns the
/// manifest, with paths relative to `dir`. All splits are `unassigned`.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    speakers: &[SyntheticSpeaker],
    utts_per_speaker: usize,
    seed: u64,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("wav")).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for (si, spk) in speakers.iter().enumerate() {
        for u in 0..utts_per_speaker {
            let utt_seed = seed ^ ((si as u64) << 32 | u as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let (buf, text) = utterance(spk, utt_seed);
            let id = format!("{}_u{u:03}", spk.id);
            let rel = Path::new("wav").join(format!("{id}.wav"));
            write_wav(&buf, dir.join(&rel))?;
            records.push(ManifestRecord {
                utterance_id: id,
                speaker_id: spk.id.clone(),
                path: rel,
                age: Some(spk.age),
                transcript: Some(text),
                split: Split::Unassigned,
            });
        }
    }
    let mut manifest = Manifest::new(records);
    manifest.base_dir = Some(dir.to_path_buf());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{builtin_embed, cosine};

    #[test]
    fn utterances_are_deterministic_and_bounded() {
        let spk = &random_speakers(1, 3)[0];
        let (a, ta) = utterance(spk, 9);
        let (b, tb) = utterance(spk, 9);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.duration_secs() > 0.7);
        assert!((a.peak() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn within_speaker_cosine_exceeds_cross_speaker() {
        let speakers = random_speakers(2, 11);
        let embs: Vec<Vec<_>> = speakers
            .iter()
            .enumerate()
            .map(|(s, spk)| {
                (0..20)
                    .map(|u| builtin_embed("x", &utterance(spk, (s * 100 + u) as u64).0).unwrap())
                    .collect()
            })
            .collect();
        let mean_cos = |a: &[_], b: &[_], same: bool| {
            let mut total = 0.0;
            let mut n = 0.0;
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    if same && i >= j {
                        continue;
                    }
                    total += cosine(x, y).unwrap();
                    n += 1.0;
                }
            }
            total / n
        };
        let within = (mean_cos(&embs[0], &embs[0], true) + mean_cos(&embs[1], &embs[1], true)) / 2.0;
        let cross = mean_cos(&embs[0], &embs[1], false);
        assert!(within > cross, "within {within} cross {cross}");
    }

    #[test]
    fn resonance_peak_at_requested_frequency() {
        let b = resonance_signal(1000.0, 0.97, 1.0, 16000, 1);
        assert_eq!(b.len(), 16000);
        let peak = crate::audio::spectral_peak_hz(b.samples(), 16000);
        assert!((peak - 1000.0).abs() < 30.0, "{peak}");
    }

    #[test]
    fn corpus_manifest_matches_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_corpus(dir.path(), &random_speakers(2, 1), 3, 5).unwrap();
        assert_eq!(m.records.len(), 6);
        m.validate(true).unwrap();
    }
}
