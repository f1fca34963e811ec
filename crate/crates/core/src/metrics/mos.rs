use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeEstimate {
    #[serde(rename = "0-10")]
    Child,
    #[serde(rename = "11-18")]
    Teen,
    #[serde(rename = ">18")]
    Adult,
}

impl AgeEstimate {
    pub const ALL: [AgeEstimate; 3] = [AgeEstimate::Child, AgeEstimate::Teen, AgeEstimate::Adult];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeEstimate::Child => "0-10",
            AgeEstimate::Teen => "11-18",
            AgeEstimate::Adult => ">18",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "0-10" | "0--10" => Some(AgeEstimate::Child),
            "11-18" | "11--18" => Some(AgeEstimate::Teen),
            ">18" | "18+" | "adult" => Some(AgeEstimate::Adult),
            _ => None,
        }
    }
}

/// One listener's judgement of one sample.
///
/// `naturalness` is kept as read so that out-of-range values can be counted
/// and rejected during aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub listener_id: String,
    pub sample_id: String,
    pub system: String,
    pub naturalness: i64,
    pub age_estimate: AgeEstimate,
    pub timestamp: String,
}

#[derive(Debug, Deserialize)]
struct RatingRow {
    listener_id: String,
    sample_id: String,
    system: String,
    naturalness: String,
    age_estimate: String,
    timestamp: String,
}

/// Reads the `listener_id,sample_id,system,naturalness,age_estimate,timestamp` CSV.
pub fn read_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RatingRow>().enumerate() {
        let line = i + 2;
        let row = row?;
        let naturalness = row
            .naturalness
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, line, format!("bad naturalness: {e}")))?;
        let age_estimate = AgeEstimate::parse(&row.age_estimate)
            .ok_or_else(|| Error::parse(path, line, format!("bad age estimate `{}`", row.age_estimate)))?;
        out.push(RatingRecord {
            listener_id: row.listener_id,
            sample_id: row.sample_id,
            system: row.system,
            naturalness,
            age_estimate,
            timestamp: row.timestamp,
        });
    }
    Ok(out)
}

pub fn write_ratings(path: impl AsRef<Path>, ratings: &[RatingRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["listener_id", "sample_id", "system", "naturalness", "age_estimate", "timestamp"])?;
    for r in ratings {
        w.write_record([
            r.listener_id.as_str(),
            r.sample_id.as_str(),
            r.system.as_str(),
            &r.naturalness.to_string(),
            r.age_estimate.as_str(),
            r.timestamp.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    System,
    Sample,
    Listener,
}

impl GroupBy {
    fn key<'a>(&self, r: &'a RatingRecord) -> &'a str {
        match self {
            GroupBy::System => &r.system,
            GroupBy::Sample => &r.sample_id,
            GroupBy::Listener => &r.listener_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRow {
    pub group: String,
    pub mean: f64,
    pub count: usize,
    /// Sample standard deviation; `None` for a single rating.
    pub stddev: Option<f64>,
    /// Fraction of ratings per age bucket, keyed `0-10`, `11-18`, `>18`.
    pub age_fractions: BTreeMap<String, f64>,
}

impl MosRow {
    pub fn adult_fraction(&self) -> f64 {
        self.age_fractions
            .get(AgeEstimate::Adult.as_str())
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    pub rows: Vec<MosRow>,
    /// Ratings outside 1..=5 that were dropped.
    pub rejected: usize,
    /// How listener ratings were combined.
    pub pooling: String,
}

impl MosTable {
    pub fn row(&self, group: &str) -> Option<&MosRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

/// Per-group mean opinion score, pooling every rating across listeners.
/// Groups without valid ratings produce no row.
pub fn aggregate_mos(ratings: &[RatingRecord], group_by: GroupBy) -> MosTable {
    let mut groups: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    let mut rejected = 0;
    for r in ratings {
        if !(1..=5).contains(&r.naturalness) {
            rejected += 1;
            continue;
        }
        groups.entry(group_by.key(r)).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|(group, rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.naturalness as f64).sum::<f64>() / n;
            let stddev = (rs.len() > 1).then(|| {
                (rs.iter().map(|r| (r.naturalness as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            });
            let age_fractions = AgeEstimate::ALL
                .iter()
                .map(|a| {
                    let k = rs.iter().filter(|r| r.age_estimate == *a).count();
                    (a.as_str().to_string(), k as f64 / n)
                })
                .collect();
            MosRow {
                group: group.to_string(),
                mean,
                count: rs.len(),
                stddev,
                age_fractions,
            }
        })
        .collect();
    MosTable {
        rows,
        rejected,
        pooling: "pooled over listeners".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(listener: &str, system: &str, n: i64, age: AgeEstimate) -> RatingRecord {
        RatingRecord {
            listener_id: listener.into(),
            sample_id: format!("{system}-s"),
            system: system.into(),
            naturalness: n,
            age_estimate: age,
            timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn mean_of_three() {
        let rs: Vec<_> = [3, 4, 5].iter().map(|&n| rating("l", "org", n, AgeEstimate::Child)).collect();
        let t = aggregate_mos(&rs, GroupBy::System);
        let row = t.row("org").unwrap();
        assert_eq!(row.mean, 4.0);
        assert_eq!(row.count, 3);
        assert_eq!(row.stddev, Some(1.0));
    }

    #[test]
    fn adult_fraction_twelve_percent() {
        let rs: Vec<_> = (0..100)
            .map(|i| {
                let age = if i < 12 { AgeEstimate::Adult } else { AgeEstimate::Child };
                rating(&format!("l{}", i % 12), "org", 4, age)
            })
            .collect();
        let t = aggregate_mos(&rs, GroupBy::System);
        assert!((t.row("org").unwrap().adult_fraction() - 0.12).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_rejected_and_empty_groups_absent() {
        let rs = vec![
            rating("l", "a", 6, AgeEstimate::Adult),
            rating("l", "b", 0, AgeEstimate::Adult),
            rating("l", "c", 2, AgeEstimate::Teen),
        ];
        let t = aggregate_mos(&rs, GroupBy::System);
        assert_eq!(t.rejected, 2);
        assert!(t.row("a").is_none());
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.row("c").unwrap().stddev, None);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rs = vec![rating("l1", "McAdams", 2, AgeEstimate::Teen), rating("l2", "org", 7, AgeEstimate::Adult)];
        write_ratings(&p, &rs).unwrap();
        assert_eq!(read_ratings(&p).unwrap(), rs);
        std::fs::write(&p, "listener_id,sample_id,system,naturalness,age_estimate,timestamp\nl,s,x,3,elderly,t\n").unwrap();
        assert!(read_ratings(&p).is_err());
    }
}
