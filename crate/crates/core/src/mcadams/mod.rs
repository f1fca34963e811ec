//! McAdams-coefficient anonymization.
//!
//! Each frame is modelled with LPC, the non-real poles have their phase
//! raised to the power `alpha` (moving the formants), and the frame is
//! resynthesized from its own residual. Pole magnitudes are never touched
//! by the warp, so a stable analysis filter stays stable.

mod lpc;
mod poly;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use lpc::{
    autocorrelation, inverse_filter, levinson_durbin, lpc_analyze, synthesize_frame, LpcFrameModel,
    LpcStatus,
};
pub use poly::{eval_with_derivative, poles_to_coeffs, poly_roots, REAL_TOLERANCE};

use crate::audio::{
    frame_signal, overlap_add_with, AudioBuffer, FrameConfig, Normalization, CORPUS_SAMPLE_RATE,
};
use crate::error::{Error, Result};

/// Warped phases are kept this far (radians) from 0 and pi.
pub const PHASE_MARGIN: f64 = 1e-3;

/// Output peak relative to input peak.
pub const OUTPUT_PEAK_RATIO: f64 = 0.99;

const REPAIR_RADIUS: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McAdamsConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_order")]
    pub lpc_order: usize,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub seed: u64,
    /// When set, alpha is drawn per utterance uniformly from `[low, high]`.
    #[serde(default)]
    pub alpha_range: Option<[f64; 2]>,
}

fn default_alpha() -> f64 {
    0.8
}

fn default_order() -> usize {
    (CORPUS_SAMPLE_RATE / 1000 + 4) as usize
}

impl Default for McAdamsConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            lpc_order: default_order(),
            frame: FrameConfig::default(),
            seed: 0,
            alpha_range: None,
        }
    }
}

impl McAdamsConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if let Some([lo, hi]) = self.alpha_range {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("invalid alpha range [{lo}, {hi}]")));
            }
        }
        if self.lpc_order < 2 {
            return Err(Error::Config("LPC order must be at least 2".into()));
        }
        let (frame_len, _) = self.frame.lengths(sample_rate)?;
        if self.lpc_order >= frame_len {
            return Err(Error::Config(format!(
                "LPC order {} must be below the frame length of {frame_len} samples",
                self.lpc_order
            )));
        }
        Ok(())
    }

    /// The coefficient used for `utterance_id`: the fixed `alpha`, or a draw
    /// from `alpha_range` keyed on `(seed, utterance_id)`.
    pub fn alpha_for(&self, utterance_id: &str) -> f64 {
        match self.alpha_range {
            None => self.alpha,
            Some([lo, hi]) if lo == hi => lo,
            Some([lo, hi]) => {
                let mut hasher = Sha256::new();
                hasher.update(self.seed.to_le_bytes());
                hasher.update(utterance_id.as_bytes());
                let digest: [u8; 32] = hasher.finalize().into();
                let mut rng = rand_chacha::ChaCha8Rng::from_seed(digest);
                rng.gen_range(lo..=hi)
            }
        }
    }
}

/// Raises the phase of every non-real pole to the power `alpha`.
///
/// Magnitudes are preserved. Real poles (`|Im| <= 1e-10`) pass through, and
/// a pole whose warped phase equals its original phase is returned as-is.
pub fn mcadams_shift(poles: &[Complex64], alpha: f64) -> Vec<Complex64> {
    poles
        .iter()
        .map(|&p| {
            if p.im.abs() <= REAL_TOLERANCE {
                return p;
            }
            let (r, phase) = p.to_polar();
            let phi = phase.abs();
            let warped = phi.powf(alpha);
            if warped == phi {
                return p;
            }
            let warped = warped.clamp(PHASE_MARGIN, PI - PHASE_MARGIN);
            Complex64::from_polar(r, warped.copysign(phase))
        })
        .collect()
}

/// Moves poles on or outside the unit circle back inside it. Returns the
/// number of poles changed.
pub fn repair_stability(poles: &mut [Complex64]) -> usize {
    let mut changed = 0;
    for p in poles.iter_mut() {
        let r = p.norm();
        if r >= 1.0 {
            *p = Complex64::from_polar(REPAIR_RADIUS / r, p.arg());
            changed += 1;
        }
    }
    changed
}

/// Per-utterance counters from [`anonymize`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnonymizeStats {
    pub alpha: f64,
    pub frames: usize,
    pub silent_frames: usize,
    /// Frames whose analysis failed and were passed through unmodified.
    pub failed_frames: usize,
    pub repaired_poles: usize,
}

/// Anonymizes a 16 kHz buffer with the fixed `cfg.alpha`.
pub fn anonymize(buffer: &AudioBuffer, cfg: &McAdamsConfig) -> Result<(AudioBuffer, AnonymizeStats)> {
    anonymize_with_alpha(buffer, cfg, cfg.alpha)
}

/// Anonymizes one utterance, drawing alpha per utterance when `cfg.alpha_range` is set.
pub fn anonymize_utterance(
    buffer: &AudioBuffer,
    cfg: &McAdamsConfig,
    utterance_id: &str,
) -> Result<(AudioBuffer, AnonymizeStats)> {
    anonymize_with_alpha(buffer, cfg, cfg.alpha_for(utterance_id))
}

fn anonymize_with_alpha(
    buffer: &AudioBuffer,
    cfg: &McAdamsConfig,
    alpha: f64,
) -> Result<(AudioBuffer, AnonymizeStats)> {
    buffer.require_rate(CORPUS_SAMPLE_RATE)?;
    McAdamsConfig { alpha, ..cfg.clone() }.validate(buffer.sample_rate())?;
    if buffer.is_empty() {
        return Err(Error::EmptyAudio);
    }

    let frames = frame_signal(buffer, &cfg.frame)?;
    let mut stats = AnonymizeStats {
        alpha,
        frames: frames.len(),
        ..Default::default()
    };

    let mut out_frames = Vec::with_capacity(frames.len());
    for frame in frames {
        let model = lpc_analyze(&frame, cfg.lpc_order)?;
        match model.status {
            LpcStatus::Silent => {
                stats.silent_frames += 1;
                out_frames.push(frame);
                continue;
            }
            LpcStatus::Singular => {
                stats.failed_frames += 1;
                out_frames.push(frame);
                continue;
            }
            LpcStatus::Ok => {}
        }
        let mut poles = model.poles;
        stats.repaired_poles += repair_stability(&mut poles);
        let shifted = mcadams_shift(&poles, alpha);
        match poles_to_coeffs(&shifted) {
            Ok(coeffs) => out_frames.push(synthesize_frame(&model.residual, &coeffs)),
            Err(_) => {
                stats.failed_frames += 1;
                out_frames.push(frame);
            }
        }
    }

    let out = overlap_add_with(
        &out_frames,
        &cfg.frame,
        buffer.sample_rate(),
        buffer.len(),
        Normalization::SynthesisWindow,
    )?;

    let in_peak = buffer.peak();
    let out_peak = out.peak();
    let mut samples = out.into_samples();
    if out_peak > 0.0 {
        let gain = OUTPUT_PEAK_RATIO * in_peak / out_peak;
        samples.iter_mut().for_each(|s| *s *= gain);
    }
    Ok((AudioBuffer::new(samples, buffer.sample_rate())?, stats))
}
