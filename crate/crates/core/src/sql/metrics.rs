use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sql::clause::{decompose, hardness, sequences_match, Hardness};
use crate::sql::token::SqlTokenSeq;

/// Mean exact-set-match over aligned pairs.
pub fn question_match(preds: &[SqlTokenSeq], golds: &[SqlTokenSeq]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} gold queries",
            preds.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| sequences_match(p, g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

fn check_grouping(preds: &[Vec<SqlTokenSeq>], golds: &[Vec<SqlTokenSeq>]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted interactions for {} gold interactions",
            preds.len(),
            golds.len()
        )));
    }
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch(format!(
                "interaction {i}: {} predictions for {} gold queries",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Fraction of interactions whose every question matches.
pub fn interaction_match(preds: &[Vec<SqlTokenSeq>], golds: &[Vec<SqlTokenSeq>]) -> Result<f64> {
    check_grouping(preds, golds)?;
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.iter().zip(g.iter()).all(|(p, g)| sequences_match(p, g)))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: String,
    pub count: usize,
    pub question_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub question_match: f64,
    pub interaction_match: f64,
    pub num_questions: usize,
    pub num_interactions: usize,
    pub per_turn: Vec<BucketScore>,
    pub per_hardness: Vec<BucketScore>,
}

pub const TURN_BUCKETS: [&str; 4] = ["1", "2", "3", "4+"];

/// Turn buckets 1, 2, 3 and 4+ (turn indices start at 1).
pub fn turn_bucket(turn_index: usize) -> usize {
    turn_index.clamp(1, 4) - 1
}

pub fn evaluate_grouped(
    preds: &[Vec<SqlTokenSeq>],
    golds: &[Vec<SqlTokenSeq>],
) -> Result<EvaluationReport> {
    check_grouping(preds, golds)?;
    let mut turn_tally = [(0usize, 0usize); 4];
    let mut hard_tally = [(0usize, 0usize); 4];
    let mut questions = 0;
    let mut question_hits = 0;
    let mut interaction_hits = 0;
    for (p_int, g_int) in preds.iter().zip(golds) {
        let mut all = true;
        for (t, (p, g)) in p_int.iter().zip(g_int).enumerate() {
            let hit = sequences_match(p, g);
            all &= hit;
            questions += 1;
            question_hits += usize::from(hit);
            let tb = &mut turn_tally[turn_bucket(t + 1)];
            tb.0 += 1;
            tb.1 += usize::from(hit);
            let h = decompose(g).map_or(Hardness::Extra, |c| hardness(&c));
            let hb = &mut hard_tally[h as usize];
            hb.0 += 1;
            hb.1 += usize::from(hit);
        }
        interaction_hits += usize::from(all);
    }
    let frac = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    Ok(EvaluationReport {
        question_match: frac(question_hits, questions),
        interaction_match: frac(interaction_hits, golds.len()),
        num_questions: questions,
        num_interactions: golds.len(),
        per_turn: TURN_BUCKETS
            .iter()
            .zip(turn_tally)
            .map(|(b, (n, h))| BucketScore {
                bucket: b.to_string(),
                count: n,
                question_match: frac(h, n),
            })
            .collect(),
        per_hardness: Hardness::ALL
            .iter()
            .zip(hard_tally)
            .map(|(b, (n, h))| BucketScore {
                bucket: b.name().to_string(),
                count: n,
                question_match: frac(h, n),
            })
            .collect(),
    })
}
