//! Audio buffers, WAV I/O, framing and overlap-add reconstruction.
//!
//! Everything downstream (the anonymizer, MFCC extraction) works on
//! [`AudioBuffer`]s holding mono `f64` samples nominally in `[-1, 1]`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every corpus-level operation is locked to.
pub const CORPUS_SAMPLE_RATE: u32 = 16_000;

const ENVELOPE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Config(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Fails with [`Error::SampleRateMismatch`] unless the buffer is at `rate`.
    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRateMismatch {
                expected: rate,
                found: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Tapering function applied to each analysis frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Raised cosine sampled at half-sample offsets. Sums to exactly one at
    /// 50% overlap and has no zero-valued taps.
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let x = (i as f64 + 0.5) / n;
                match self {
                    Window::Hann => 0.5 - 0.5 * (2.0 * PI * x).cos(),
                    Window::Hamming => 0.54 - 0.46 * (2.0 * PI * x).cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    #[serde(default)]
    pub window: Window,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 20.0,
            hop_ms: 10.0,
            window: Window::Hann,
        }
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32, what: &str) -> Result<usize> {
    let exact = ms * sample_rate as f64 / 1000.0;
    let rounded = exact.round();
    if !exact.is_finite() || (exact - rounded).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{what} of {ms} ms is not a whole number of samples at {sample_rate} Hz"
        )));
    }
    Ok(rounded as usize)
}

impl FrameConfig {
    pub fn new(frame_len_ms: f64, hop_ms: f64, window: Window) -> Self {
        Self {
            frame_len_ms,
            hop_ms,
            window,
        }
    }

    /// Frame and hop lengths in samples, validating the config against `sample_rate`.
    pub fn lengths(&self, sample_rate: u32) -> Result<(usize, usize)> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.frame_len_ms) {
            return Err(Error::Config(format!(
                "need 0 < hop ({} ms) <= frame length ({} ms)",
                self.hop_ms, self.frame_len_ms
            )));
        }
        let frame = ms_to_samples(self.frame_len_ms, sample_rate, "frame length")?;
        let hop = ms_to_samples(self.hop_ms, sample_rate, "hop")?;
        if frame < 2 || hop == 0 {
            return Err(Error::Config(format!(
                "frame length must be at least 2 samples, got {frame}"
            )));
        }
        Ok((frame, hop))
    }
}

/// Number of frames for a signal of `len` samples: one frame starts at every
/// hop offset below `len`, and there is always at least one frame.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop).max(1)
}

/// Splits `buffer` into windowed frames. Frame `i` covers samples
/// `[i*hop, i*hop + frame_len)`; samples past the end are zero.
pub fn frame_signal(buffer: &AudioBuffer, cfg: &FrameConfig) -> Result<Vec<Vec<f64>>> {
    let (frame_len, hop) = cfg.lengths(buffer.sample_rate())?;
    let window = cfg.window.coefficients(frame_len);
    let samples = buffer.samples();
    let n = frame_count(samples.len(), hop);
    Ok((0..n)
        .map(|i| {
            let start = i * hop;
            window
                .iter()
                .enumerate()
                .map(|(k, w)| samples.get(start + k).copied().unwrap_or(0.0) * w)
                .collect()
        })
        .collect())
}

/// How overlap-added frames are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Plain sum of frames.
    Disabled,
    /// Divide by the summed analysis window.
    AnalysisWindow,
    /// Multiply each frame by the window once more before summing, then
    /// divide by the summed squared window.
    SynthesisWindow,
}

/// Overlap-adds frames and divides by the summed analysis-window envelope.
pub fn overlap_add(
    frames: &[Vec<f64>],
    cfg: &FrameConfig,
    sample_rate: u32,
    target_len: usize,
) -> Result<AudioBuffer> {
    overlap_add_with(
        frames,
        cfg,
        sample_rate,
        target_len,
        Normalization::AnalysisWindow,
    )
}

pub fn overlap_add_with(
    frames: &[Vec<f64>],
    cfg: &FrameConfig,
    sample_rate: u32,
    target_len: usize,
    norm: Normalization,
) -> Result<AudioBuffer> {
    let (frame_len, hop) = cfg.lengths(sample_rate)?;
    let window = cfg.window.coefficients(frame_len);
    let full = frames.len().saturating_sub(1) * hop + frame_len;
    let mut acc = vec![0.0; full.max(target_len)];
    let mut envelope = vec![0.0; acc.len()];

    for (i, frame) in frames.iter().enumerate() {
        if frame.len() != frame_len {
            return Err(Error::Config(format!(
                "frame {i} has {} samples, expected {frame_len}",
                frame.len()
            )));
        }
        let start = i * hop;
        for (k, (&x, &w)) in frame.iter().zip(&window).enumerate() {
            match norm {
                Normalization::SynthesisWindow => {
                    acc[start + k] += x * w;
                    envelope[start + k] += w * w;
                }
                _ => {
                    acc[start + k] += x;
                    envelope[start + k] += w;
                }
            }
        }
    }

    acc.truncate(target_len);
    if norm != Normalization::Disabled {
        for (a, e) in acc.iter_mut().zip(&envelope) {
            *a /= e.max(ENVELOPE_FLOOR);
        }
    }
    AudioBuffer::new(acc, sample_rate)
}

/// Reads a linear-PCM WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, bits @ 8..=32) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        (format, bits) => {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                message: format!("unsupported encoding {format:?} with {bits} bits"),
            })
        }
    };

    if interleaved.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Reads a WAV file and requires it to be at `expected_rate`.
pub fn read_wav_at(path: impl AsRef<Path>, expected_rate: u32) -> Result<AudioBuffer> {
    let buffer = read_wav(path)?;
    buffer.require_rate(expected_rate)?;
    Ok(buffer)
}

/// Outcome of [`write_wav`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteStats {
    /// Samples whose magnitude exceeded full scale and were clipped.
    pub clipped: usize,
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<WriteStats> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    let mut stats = WriteStats::default();
    for &s in buffer.samples() {
        if s.abs() > 1.0 {
            stats.clipped += 1;
        }
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)?;
    if stats.clipped > 0 {
        log::warn!("{}: clipped {} samples", path.display(), stats.clipped);
    }
    Ok(stats)
}

/// Welch power spectrum: Hann-windowed segments of `n_fft` samples at 50%
/// overlap, averaged. Returns `n_fft / 2 + 1` bins.
pub fn power_spectrum(samples: &[f64], n_fft: usize) -> Vec<f64> {
    let fft = rustfft::FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let window = Window::Hann.coefficients(n_fft);
    let mut acc = vec![0.0; n_fft / 2 + 1];
    let hop = (n_fft / 2).max(1);
    let mut start = 0;
    let mut segments = 0usize;
    loop {
        let mut buf: Vec<rustfft::num_complex::Complex64> = (0..n_fft)
            .map(|i| {
                let x = samples.get(start + i).copied().unwrap_or(0.0);
                rustfft::num_complex::Complex64::new(x * window[i], 0.0)
            })
            .collect();
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += hop;
        if start + n_fft > samples.len() {
            break;
        }
    }
    acc.iter_mut().for_each(|a| *a /= segments as f64);
    acc
}

/// Frequency of the strongest bin of a 4096-point Welch spectrum, refined by
/// parabolic interpolation on the log magnitude.
pub fn spectral_peak_hz(samples: &[f64], sample_rate: u32) -> f64 {
    const N: usize = 4096;
    let p = power_spectrum(samples, N);
    let k = (1..p.len() - 1)
        .max_by(|&a, &b| p[a].total_cmp(&p[b]))
        .unwrap_or(0);
    let offset = if k == 0 {
        0.0
    } else {
        let (l, c, r) = (p[k - 1].max(1e-300).ln(), p[k].max(1e-300).ln(), p[k + 1].max(1e-300).ln());
        let denom = l - 2.0 * c + r;
        if denom == 0.0 { 0.0 } else { 0.5 * (l - r) / denom }
    };
    (k as f64 + offset) * sample_rate as f64 / N as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn reads_16_bit_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16000, &[0, 16384, -32768]);
        let b = read_wav(&p).unwrap();
        assert_eq!(b.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(b.sample_rate(), 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(1.0f32).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.5]);
    }

    #[test]
    fn corpus_mode_rejects_8k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("8k.wav");
        write_raw(&p, 1, 8000, &[1, 2, 3]);
        let err = read_wav_at(&p, CORPUS_SAMPLE_RATE).unwrap_err();
        assert!(err.to_string().contains("sample rate mismatch"), "{err}");
    }

    #[test]
    fn empty_and_missing_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.wav");
        write_raw(&p, 1, 16000, &[]);
        assert!(matches!(read_wav(&p), Err(Error::EmptyAudio)));
        assert!(read_wav(dir.path().join("nope.wav")).is_err());
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&junk), Err(Error::Wav { .. })));
    }

    #[test]
    fn write_clips_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let b = AudioBuffer::new(vec![1.5, 0.0, -0.25], 16000).unwrap();
        let stats = write_wav(&b, &p).unwrap();
        assert_eq!(stats.clipped, 1);
        let back = read_wav(&p).unwrap();
        assert!((back.samples()[0] - 1.0).abs() <= 1.0 / 32768.0);
        assert_eq!(back.samples()[2], -0.25);
    }

    #[test]
    fn write_rejects_empty_and_bad_path() {
        let b = AudioBuffer::new(vec![], 16000).unwrap();
        assert!(matches!(
            write_wav(&b, "/tmp/x.wav"),
            Err(Error::EmptyAudio)
        ));
        let b = AudioBuffer::new(vec![0.1], 16000).unwrap();
        assert!(write_wav(&b, "/nonexistent-dir/x.wav").is_err());
    }

    #[test]
    fn frame_counts_and_padding() {
        let cfg = FrameConfig::new(20.0, 10.0, Window::Rectangular);
        let ramp: Vec<f64> = (0..480).map(|i| i as f64 / 480.0).collect();
        let b = AudioBuffer::new(ramp.clone(), 16000).unwrap();
        let frames = frame_signal(&b, &cfg).unwrap();
        assert_eq!(frames.len(), 3);
        // rectangular window: raw samples
        assert_eq!(&frames[1][..], &ramp[160..480]);
        assert!(frames[2][160..].iter().all(|&x| x == 0.0));

        let short = AudioBuffer::new(vec![0.5; 100], 16000).unwrap();
        let frames = frame_signal(&short, &cfg).unwrap();
        assert_eq!(frames.len(), 1);
        assert!(frames[0][100..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_frame_configs() {
        let bad_hop = FrameConfig::new(20.0, 30.0, Window::Hann);
        assert!(bad_hop.lengths(16000).is_err());
        let fractional = FrameConfig::new(20.01, 10.0, Window::Hann);
        assert!(fractional.lengths(16000).is_err());
        let tiny = FrameConfig::new(0.0625, 0.0625, Window::Hann);
        assert!(tiny.lengths(16000).is_err());
    }

    #[test]
    fn hann_is_cola_at_half_overlap() {
        let w = Window::Hann.coefficients(320);
        for k in 0..160 {
            assert!((w[k] + w[k + 160] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ola_of_zero_frame_is_zero() {
        let cfg = FrameConfig::default();
        let out = overlap_add(&[vec![0.0; 320]], &cfg, 16000, 320).unwrap();
        assert!(out.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn envelope_normalization_restores_constant() {
        let cfg = FrameConfig::default();
        let b = AudioBuffer::new(vec![0.5; 1600], 16000).unwrap();
        let frames = frame_signal(&b, &cfg).unwrap();
        let on = overlap_add(&frames, &cfg, 16000, 1600).unwrap();
        assert!(on.samples().iter().all(|&x| (x - 0.5).abs() < 1e-12));
        // without normalization the first hop only sees the rising half window
        let off =
            overlap_add_with(&frames, &cfg, 16000, 1600, Normalization::Disabled).unwrap();
        assert!((off.samples()[0] - 0.5).abs() > 0.4);
        assert!((off.samples()[800] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cola_reconstruction_snr() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b = AudioBuffer::new(x.clone(), 16000).unwrap();
        let cfg = FrameConfig::default();
        for norm in [Normalization::AnalysisWindow, Normalization::SynthesisWindow] {
            let frames = frame_signal(&b, &cfg).unwrap();
            let y = overlap_add_with(&frames, &cfg, 16000, x.len(), norm).unwrap();
            let (sig, err) = x[320..15680]
                .iter()
                .zip(&y.samples()[320..15680])
                .fold((0.0, 0.0), |(s, e), (a, b)| (s + a * a, e + (a - b).powi(2)));
            let snr = 10.0 * (sig / err.max(1e-300)).log10();
            assert!(snr >= 60.0, "{norm:?}: snr {snr}");
        }
    }

    proptest! {
        #[test]
        fn frame_count_closed_form(len in 0usize..5000, hop in 1usize..400) {
            let n = frame_count(len, hop);
            let expected = if len == 0 { 1 } else { (len + hop - 1) / hop };
            prop_assert_eq!(n, expected);
            // the last frame starts inside the signal (or at 0)
            prop_assert!((n - 1) * hop < len.max(1));
        }

        #[test]
        fn analysis_synthesis_identity(
            xs in proptest::collection::vec(-1.0f64..1.0, 400..3000),
            hop_ms in prop_oneof![Just(5.0), Just(10.0), Just(20.0)],
        ) {
            let cfg = FrameConfig::new(20.0, hop_ms, Window::Hann);
            let b = AudioBuffer::new(xs.clone(), 16000).unwrap();
            let frames = frame_signal(&b, &cfg).unwrap();
            let y = overlap_add(&frames, &cfg, 16000, xs.len()).unwrap();
            prop_assert_eq!(y.len(), xs.len());
            let lo = 320.min(xs.len() / 4);
            let hi = xs.len() - lo;
            let num: f64 = xs[lo..hi].iter().zip(&y.samples()[lo..hi]).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = xs[lo..hi].iter().map(|a| a * a).sum();
            prop_assert!((num / den.max(1e-300)).sqrt() <= 1e-3);
        }

        #[test]
        fn wav_round_trip_within_one_step(xs in proptest::collection::vec(-1.0f64..=1.0, 1..500)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.wav");
            let b = AudioBuffer::new(xs.clone(), 16000).unwrap();
            write_wav(&b, &p).unwrap();
            let back = read_wav(&p).unwrap();
            prop_assert_eq!(back.len(), xs.len());
            for (a, b) in xs.iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
