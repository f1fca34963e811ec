//! Word error rate for single pairs and for a small corpus.

use std::collections::BTreeMap;

use voxveil::metrics::{compute_wer, corpus_wer};

fn main() -> voxveil::Result<()> {
    let pairs = [
        ("the cat sat", "the bat sat on"),
        ("a b", "x y z"),
        ("Hello, World!", "hello world"),
    ];
    for (r, h) in pairs {
        let w = compute_wer(r, h)?;
        println!(
            "{r:?} vs {h:?}: S={} D={} I={} N={} -> {:.2}%",
            w.substitutions,
            w.deletions,
            w.insertions,
            w.n_ref_words,
            w.wer_percent()
        );
    }
    let refs: BTreeMap<_, _> = pairs.iter().enumerate().map(|(i, p)| (i.to_string(), p.0.to_string())).collect();
    let hyps: BTreeMap<_, _> = pairs.iter().enumerate().map(|(i, p)| (i.to_string(), p.1.to_string())).collect();
    println!("corpus WER {:.2}%", corpus_wer(&refs, &hyps)?.wer_percent());
    Ok(())
}
