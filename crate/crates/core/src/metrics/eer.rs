use serde::{Deserialize, Serialize};

use super::scores::ScoreSet;
use crate::error::{Error, Result};
use crate::protocol::TrialLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer_percent: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// One operating point: accept when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// ROC points at `-inf`, at every distinct score (ascending), and at `+inf`.
/// Equal scores are processed together.
pub fn roc_points(targets: &[f64], nontargets: &[f64]) -> Vec<RocPoint> {
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|&s| (s, true))
        .chain(nontargets.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    }];
    let (mut targets_below, mut nontargets_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        points.push(RocPoint {
            threshold: s,
            far: (nontargets.len() - nontargets_below) as f64 / nn,
            frr: targets_below as f64 / nt,
        });
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    points
}

/// Equal error rate from raw target/nontarget scores.
///
/// The crossing of FAR and FRR is located on the threshold sweep and, when it
/// falls between two ROC points, linearly interpolated along that segment.
pub fn eer_from_scores(targets: &[f64], nontargets: &[f64]) -> Result<EerResult> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::SingleLabel);
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::Config("scores must be finite".into()));
    }
    let points = roc_points(targets, nontargets);
    // FRR - FAR goes from -1 to +1, so a sign change always exists
    let k = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("last ROC point has FRR = 1 >= FAR = 0");
    let (lo, hi) = (points[k - 1], points[k]);
    let (d_lo, d_hi) = (lo.frr - lo.far, hi.frr - hi.far);

    let (eer, threshold) = if d_hi == 0.0 {
        (hi.far, hi.threshold)
    } else {
        let t = -d_lo / (d_hi - d_lo);
        let eer = lo.far + t * (hi.far - lo.far);
        let threshold = match (lo.threshold.is_finite(), hi.threshold.is_finite()) {
            (true, true) => lo.threshold + t * (hi.threshold - lo.threshold),
            (false, _) => hi.threshold,
            (_, false) => lo.threshold,
        };
        (eer, threshold)
    };
    Ok(EerResult {
        eer_percent: 100.0 * eer,
        threshold,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
    })
}

pub fn compute_eer(scores: &ScoreSet) -> Result<EerResult> {
    eer_from_scores(
        &scores.scores(TrialLabel::Target),
        &scores.scores(TrialLabel::Nontarget),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example_one_third() {
        let r = eer_from_scores(&[0.9, 0.8, 0.4], &[0.7, 0.3, 0.2]).unwrap();
        assert!((r.eer_percent - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!((r.n_target, r.n_nontarget), (3, 3));
    }

    #[test]
    fn separable_is_exactly_zero() {
        let r = eer_from_scores(&[0.9, 0.8], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r.eer_percent, 0.0);
        assert!(r.threshold > 0.3 && r.threshold <= 0.8);
    }

    #[test]
    fn fully_inverted_is_hundred() {
        let r = eer_from_scores(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!(r.eer_percent, 100.0);
    }

    #[test]
    fn all_tied_is_fifty() {
        let r = eer_from_scores(&[0.5; 4], &[0.5; 7]).unwrap();
        assert!((r.eer_percent - 50.0).abs() < 1e-12);
    }

    #[test]
    fn single_label_rejected() {
        assert!(matches!(eer_from_scores(&[0.1], &[]), Err(Error::SingleLabel)));
        assert!(matches!(
            compute_eer(&ScoreSet::from_labelled(&[], &[0.3])),
            Err(Error::SingleLabel)
        ));
    }

    proptest! {
        #[test]
        fn swap_and_negate_is_symmetric(
            t in proptest::collection::vec(-10i32..10, 1..40),
            n in proptest::collection::vec(-10i32..10, 1..40),
        ) {
            // integer-valued scores exercise ties
            let t: Vec<f64> = t.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            let a = eer_from_scores(&t, &n).unwrap().eer_percent;
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            let b = eer_from_scores(&neg(&n), &neg(&t)).unwrap().eer_percent;
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }

        #[test]
        fn invariant_under_increasing_transform(
            t in proptest::collection::vec(-3.0f64..3.0, 1..60),
            n in proptest::collection::vec(-3.0f64..3.0, 1..60),
        ) {
            let a = eer_from_scores(&t, &n).unwrap().eer_percent;
            let f = |v: &[f64]| v.iter().map(|x| (2.0 * x).exp() + 5.0).collect::<Vec<_>>();
            let b = eer_from_scores(&f(&t), &f(&n)).unwrap().eer_percent;
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&a));
        }
    }
}
