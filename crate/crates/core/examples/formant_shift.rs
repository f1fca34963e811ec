//! Pass a single resonance through the anonymizer and compare the measured
//! spectral peak with the warped pole angle.

use std::f64::consts::PI;

use voxveil::audio::spectral_peak_hz;
use voxveil::mcadams::{anonymize, McAdamsConfig};
use voxveil::synth::resonance_signal;

fn main() -> voxveil::Result<()> {
    let rate = 16_000;
    let input = resonance_signal(1000.0, 0.97, 2.0, rate, 1);
    let before = spectral_peak_hz(input.samples(), rate);
    println!("input peak {before:.1} Hz");
    for alpha in [0.7, 0.8, 0.9, 1.0, 1.1] {
        let (out, _) = anonymize(&input, &McAdamsConfig::with_alpha(alpha))?;
        let phi = 2.0 * PI * 1000.0 / rate as f64;
        let predicted = phi.powf(alpha) * rate as f64 / (2.0 * PI);
        let measured = spectral_peak_hz(out.samples(), rate);
        println!("alpha {alpha:.1}: predicted {predicted:7.1} Hz, measured {measured:7.1} Hz");
    }
    Ok(())
}
