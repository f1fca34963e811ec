//! LPC analysis of one frame, its poles, the McAdams warp and the
//! reconstructed coefficients.

use voxveil::mcadams::{lpc_analyze, mcadams_shift, poles_to_coeffs, poly_roots, repair_stability};
use voxveil::synth::{random_speakers, utterance};

fn main() -> voxveil::Result<()> {
    let (audio, _) = utterance(&random_speakers(1, 2)[0], 2);
    let frame = &audio.samples()[1600..1920];
    let model = lpc_analyze(frame, 20)?;
    println!("status {:?}, gain {:.4}", model.status, model.gain);

    let poles = poly_roots(&model.coefficients)?;
    let mut warped = mcadams_shift(&poles, 0.8);
    let repaired = repair_stability(&mut warped);
    for (p, w) in poles.iter().zip(&warped).filter(|(p, _)| p.im > 0.0) {
        println!(
            "|p| {:.4}  angle {:.4} -> {:.4}",
            p.norm(),
            p.arg(),
            w.arg()
        );
    }
    let coeffs = poles_to_coeffs(&warped)?;
    println!("{} coefficients, {repaired} poles repaired", coeffs.len());
    Ok(())
}
