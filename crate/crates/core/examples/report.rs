//! Render a small set of results as Markdown, CSV and JSON.

use std::collections::BTreeMap;

use voxveil::report::{build_report, Metric, ReportFormat, ReportOptions, RunRecord};

fn record(dataset: &str, system: &str, metric: Metric, value: f64) -> RunRecord {
    RunRecord {
        dataset: dataset.into(),
        system: system.into(),
        age_group: None,
        metric,
        value,
        counts: BTreeMap::new(),
        config_digest: "example".into(),
    }
}

fn main() -> voxveil::Result<()> {
    let records = vec![
        record("dev", "original", Metric::Eer, 4.1),
        record("dev", "McAdams", Metric::Eer, 21.7),
        record("dev", "other", Metric::Eer, 18.3),
        record("test", "original", Metric::Eer, 3.2),
        record("test", "McAdams", Metric::Eer, 25.0),
        record("dev", "original", Metric::Wer, 7.5),
        record("dev", "McAdams", Metric::Wer, 12.0),
        record("dev", "other", Metric::Wer, 11.996),
    ];
    let opts = ReportOptions::default();
    for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        println!("{}", build_report(&records, format, &opts)?);
    }
    Ok(())
}
