//! Mention-level scoring and paired randomization tests.

mod eval;
mod significance;

pub use eval::{evaluate, per_document_f1, per_document_scores, EvalReport, LabelScore, Scores};
pub use significance::{
    approx_rand_test, exact_rand_test, SignificanceResult, EXACT_MAX_DOCS, HIGHLY_SIGNIFICANT,
};
