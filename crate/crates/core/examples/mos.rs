//! Aggregate listening-test ratings into per-system naturalness MOS and the
//! share of "adult" age estimates.

use voxveil::metrics::{aggregate_mos, AgeEstimate, GroupBy, RatingRecord};

fn main() {
    let mut ratings = Vec::new();
    for (system, scores) in [("original", [5, 4, 5, 4]), ("McAdams", [3, 2, 3, 4]), ("other", [2, 1, 2, 9])] {
        for (i, s) in scores.into_iter().enumerate() {
            ratings.push(RatingRecord {
                listener_id: format!("L{i}"),
                sample_id: format!("{system}_{i}"),
                system: system.into(),
                naturalness: s,
                age_estimate: if s <= 2 { AgeEstimate::Adult } else { AgeEstimate::Child },
                timestamp: "2024-01-01T00:00:00Z".into(),
            });
        }
    }
    let table = aggregate_mos(&ratings, GroupBy::System);
    for row in &table.rows {
        println!(
            "{:>8}: MOS {:.2} (n={}), adult {:.0}%",
            row.group,
            row.mean,
            row.count,
            100.0 * row.adult_fraction()
        );
    }
    println!("{} ratings rejected, {}", table.rejected, table.pooling);
}
