//! SQL tokens, schema-grounded tokenization, clause decomposition and the
//! set-match metrics.

mod clause;
mod metrics;
mod token;
mod tokenize;

pub use clause::{
    component_flags, decompose, exact_set_match, hardness, sequences_match, ClauseCounts,
    ClauseSet, Component, Connective, Direction, Hardness, SetOp,
};
pub use metrics::{
    evaluate_grouped, interaction_match, question_match, turn_bucket, BucketScore,
    EvaluationReport, TURN_BUCKETS,
};
pub use token::{Keyword, SqlToken, SqlTokenSeq, TokenKind, KEYWORDS};
pub use tokenize::tokenize_sql;
