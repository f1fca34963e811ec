//! Equal error rate of two overlapping Gaussian score distributions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use voxveil::metrics::{eer_from_scores, roc_points};

fn main() -> voxveil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for separation in [0.0, 1.0, 2.0, 4.0] {
        let target = Normal::new(separation, 1.0).unwrap();
        let nontarget = Normal::new(0.0, 1.0).unwrap();
        let t: Vec<f64> = (0..5000).map(|_| target.sample(&mut rng)).collect();
        let n: Vec<f64> = (0..5000).map(|_| nontarget.sample(&mut rng)).collect();
        let eer = eer_from_scores(&t, &n)?;
        println!(
            "separation {separation}: EER {:.2}% at threshold {:.3} ({} ROC points)",
            eer.eer_percent,
            eer.threshold,
            roc_points(&t, &n).len()
        );
    }
    Ok(())
}
