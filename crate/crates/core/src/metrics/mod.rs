//! Privacy and utility metrics: verification scoring and EER, word error
//! rate, and mean opinion scores from listening-test ratings.

mod eer;
mod mos;
mod scores;
mod wer;

pub use eer::{compute_eer, eer_from_scores, roc_points, EerResult, RocPoint};
pub use mos::{aggregate_mos, read_ratings, write_ratings, AgeEstimate, GroupBy, MosRow, MosTable, RatingRecord};
pub use scores::{score_trials, ScoreEntry, ScoreSet};
pub use wer::{align_tokens, compute_wer, corpus_wer, normalize_text, read_transcripts, WerResult};
