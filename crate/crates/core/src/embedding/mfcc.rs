use std::f64::consts::PI;

use rustfft::FftPlanner;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{frame_signal, AudioBuffer, FrameConfig, Window, CORPUS_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfccConfig {
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub frame: FrameConfig,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            n_coeffs: 20,
            frame: FrameConfig::new(25.0, 10.0, Window::Hamming),
            fmin: 20.0,
            fmax: 8000.0,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return Err(Error::Config(format!(
                "need 1 <= n_coeffs ({}) <= n_mels ({})",
                self.n_coeffs, self.n_mels
            )));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {} Hz, got [{}, {}]",
                sample_rate / 2,
                self.fmin,
                self.fmax
            )));
        }
        self.frame.lengths(sample_rate).map(|_| ())
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the `n_fft / 2 + 1` power-spectrum bins.
fn mel_filterbank(cfg: &MfccConfig, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal type-II DCT of `x`, first `n_out` coefficients.
fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(m, v)| v * (PI * k as f64 * (m as f64 + 0.5) / n).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Mel-frequency cepstral coefficients, one row per frame, coefficient 0 kept.
pub fn mfcc(buffer: &AudioBuffer, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    buffer.require_rate(CORPUS_SAMPLE_RATE)?;
    cfg.validate(buffer.sample_rate())?;
    if buffer.is_empty() {
        return Err(Error::TooShort { got: 0, need: 1 });
    }
    let frames = frame_signal(buffer, &cfg.frame)?;
    let n_fft = frames[0].len().next_power_of_two();
    let filters = mel_filterbank(cfg, n_fft, buffer.sample_rate());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut spectrum = vec![Complex64::new(0.0, 0.0); n_fft];
    Ok(frames
        .iter()
        .map(|frame| {
            spectrum.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (c, &x) in spectrum.iter_mut().zip(frame) {
                c.re = x;
            }
            fft.process(&mut spectrum);
            let power: Vec<f64> = spectrum[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
            let log_mel: Vec<f64> = filters
                .iter()
                .map(|f| {
                    let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect();
            dct2(&log_mel, cfg.n_coeffs)
        })
        .collect())
}
