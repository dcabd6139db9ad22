//! Token-level diffing between consecutive queries, per-turn copy/insert
//! statistics and clause segment extraction.

use serde::{Deserialize, Serialize};

use crate::corpus::Interaction;
use crate::error::{Error, Result};
use crate::sql::{self, turn_bucket, SqlToken, SqlTokenSeq, TURN_BUCKETS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditBlock<T> {
    Copy(Vec<T>),
    Insert(Vec<T>),
    Delete(Vec<T>),
}

impl<T> EditBlock<T> {
    pub fn tokens(&self) -> &[T] {
        match self {
            EditBlock::Copy(t) | EditBlock::Insert(t) | EditBlock::Delete(t) => t,
        }
    }

    fn same_kind(&self, other: &Self) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript<T = SqlToken> {
    pub ops: Vec<EditBlock<T>>,
}

impl<T: Clone + PartialEq> EditScript<T> {
    fn push(&mut self, block: EditBlock<T>) {
        if block.tokens().is_empty() {
            return;
        }
        if let Some(last) = self.ops.last_mut() {
            if last.same_kind(&block) {
                match (last, block) {
                    (EditBlock::Copy(a), EditBlock::Copy(b))
                    | (EditBlock::Insert(a), EditBlock::Insert(b))
                    | (EditBlock::Delete(a), EditBlock::Delete(b)) => a.extend(b),
                    _ => unreachable!(),
                }
                return;
            }
        }
        self.ops.push(block);
    }

    /// Source sequence: COPY and DELETE payloads in order.
    pub fn source(&self) -> Vec<T> {
        self.ops
            .iter()
            .filter(|b| !matches!(b, EditBlock::Insert(_)))
            .flat_map(|b| b.tokens().iter().cloned())
            .collect()
    }

    /// Target sequence: COPY and INSERT payloads in order.
    pub fn target(&self) -> Vec<T> {
        self.ops
            .iter()
            .filter(|b| !matches!(b, EditBlock::Delete(_)))
            .flat_map(|b| b.tokens().iter().cloned())
            .collect()
    }

    pub fn copied_tokens(&self) -> usize {
        self.count(|b| matches!(b, EditBlock::Copy(_))).1
    }

    /// (number of blocks, number of tokens) over blocks selected by `f`.
    pub fn count(&self, f: impl Fn(&EditBlock<T>) -> bool) -> (usize, usize) {
        self.ops
            .iter()
            .filter(|b| f(b))
            .fold((0, 0), |(n, t), b| (n + 1, t + b.tokens().len()))
    }
}

/// Longest common contiguous run as (source start, target start, length).
/// Ties go to the leftmost source position, then the leftmost target one.
fn longest_common_run<T: PartialEq>(a: &[T], b: &[T]) -> (usize, usize, usize) {
    let mut best = (0, 0, 0);
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            cur[j] = if a[i - 1] == b[j - 1] { prev[j - 1] + 1 } else { 0 };
            let len = cur[j];
            if len > best.2 {
                best = (i - len, j - len, len);
            } else if len == best.2 && len > 0 {
                let cand = (i - len, j - len);
                if cand < (best.0, best.1) {
                    best = (cand.0, cand.1, len);
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

fn diff_into<T: Clone + PartialEq>(a: &[T], b: &[T], out: &mut EditScript<T>) {
    let (i, j, len) = longest_common_run(a, b);
    if len == 0 {
        out.push(EditBlock::Delete(a.to_vec()));
        out.push(EditBlock::Insert(b.to_vec()));
        return;
    }
    diff_into(&a[..i], &b[..j], out);
    out.push(EditBlock::Copy(a[i..i + len].to_vec()));
    diff_into(&a[i + len..], &b[j + len..], out);
}

/// Recursive longest-common-run diff.
pub fn diff_tokens<T: Clone + PartialEq>(prev: &[T], cur: &[T]) -> EditScript<T> {
    let mut out = EditScript { ops: Vec::new() };
    diff_into(prev, cur, &mut out);
    out
}

pub fn diff(prev: &SqlTokenSeq, cur: &SqlTokenSeq) -> EditScript {
    diff_tokens(&prev.tokens, &cur.tokens)
}

pub fn apply_tokens<T: Clone + PartialEq>(script: &EditScript<T>, prev: &[T]) -> Result<Vec<T>> {
    let mut pos = 0;
    let mut out = Vec::new();
    for block in &script.ops {
        match block {
            EditBlock::Copy(t) | EditBlock::Delete(t) => {
                let end = pos + t.len();
                if end > prev.len() || prev[pos..end] != t[..] {
                    return Err(Error::Validation(format!(
                        "edit script disagrees with the source at position {pos}"
                    )));
                }
                if matches!(block, EditBlock::Copy(_)) {
                    out.extend_from_slice(t);
                }
                pos = end;
            }
            EditBlock::Insert(t) => out.extend_from_slice(t),
        }
    }
    if pos != prev.len() {
        return Err(Error::Validation(format!(
            "edit script consumes {pos} of {} source tokens",
            prev.len()
        )));
    }
    Ok(out)
}

pub fn apply(script: &EditScript, prev: &SqlTokenSeq) -> Result<SqlTokenSeq> {
    Ok(SqlTokenSeq::new(
        prev.db_id.clone(),
        apply_tokens(script, &prev.tokens)?,
    ))
}

/// Averages over the gold queries of one turn bucket. Operations are
/// counted per block; token counts are reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEditStats {
    pub turn: String,
    pub sample_count: usize,
    pub avg_query_length: f64,
    pub avg_copy_ops: f64,
    pub avg_insert_ops: f64,
    pub avg_delete_ops: f64,
    pub avg_tokens_copied: f64,
    pub avg_tokens_inserted: f64,
}

pub fn turn_edit_stats(interactions: &[Interaction]) -> Vec<TurnEditStats> {
    // per bucket: samples, length, copy ops, insert ops, delete ops, copied, inserted
    let mut sums = [[0usize; 7]; 4];
    for it in interactions {
        let mut prev: &[SqlToken] = &[];
        for (t, turn) in it.turns.iter().enumerate() {
            let script = diff_tokens(prev, &turn.query.tokens);
            let (copy_ops, copied) = script.count(|b| matches!(b, EditBlock::Copy(_)));
            let (insert_ops, inserted) = script.count(|b| matches!(b, EditBlock::Insert(_)));
            let (delete_ops, _) = script.count(|b| matches!(b, EditBlock::Delete(_)));
            let s = &mut sums[turn_bucket(t + 1)];
            s[0] += 1;
            s[1] += turn.query.len();
            s[2] += copy_ops;
            s[3] += insert_ops;
            s[4] += delete_ops;
            s[5] += copied;
            s[6] += inserted;
            prev = &turn.query.tokens;
        }
    }
    TURN_BUCKETS
        .iter()
        .zip(sums)
        .filter(|(_, s)| s[0] > 0)
        .map(|(name, s)| {
            let n = s[0] as f64;
            TurnEditStats {
                turn: name.to_string(),
                sample_count: s[0],
                avg_query_length: s[1] as f64 / n,
                avg_copy_ops: s[2] as f64 / n,
                avg_insert_ops: s[3] as f64 / n,
                avg_delete_ops: s[4] as f64 / n,
                avg_tokens_copied: s[5] as f64 / n,
                avg_tokens_inserted: s[6] as f64 / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentLabel {
    Select,
    From,
    GroupBy,
    OrderBy,
    Having,
    WhereCondition,
    Limit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: SegmentLabel,
    /// Offset of the first token in the source query.
    pub start: usize,
    pub tokens: Vec<SqlToken>,
}

fn clause_label(tok: &SqlToken) -> Option<Option<SegmentLabel>> {
    let SqlToken::Keyword(k) = tok else {
        return None;
    };
    Some(match k.text() {
        "SELECT" => Some(SegmentLabel::Select),
        "FROM" => Some(SegmentLabel::From),
        "WHERE" => Some(SegmentLabel::WhereCondition),
        "GROUP" => Some(SegmentLabel::GroupBy),
        "HAVING" => Some(SegmentLabel::Having),
        "ORDER" => Some(SegmentLabel::OrderBy),
        "LIMIT" => Some(SegmentLabel::Limit),
        "UNION" | "INTERSECT" | "EXCEPT" => None,
        _ => return None,
    })
}

/// Clause segments of the top-level query (and of set-operation
/// branches): SELECT, FROM, GROUP BY, ORDER BY, HAVING, LIMIT, and one
/// segment per WHERE condition. Connectives and the `WHERE` keyword belong
/// to no segment.
pub fn extract_segments(seq: &SqlTokenSeq) -> Vec<Segment> {
    if sql::decompose(seq).is_err() {
        return Vec::new();
    }
    let toks = &seq.tokens;
    // top-level clause boundaries
    let mut bounds: Vec<(usize, Option<SegmentLabel>)> = Vec::new();
    let mut depth = 0i32;
    for (i, t) in toks.iter().enumerate() {
        if t.is_kw("(") {
            depth += 1;
        } else if t.is_kw(")") {
            depth -= 1;
        } else if depth == 0 {
            if let Some(label) = clause_label(t) {
                bounds.push((i, label));
            }
        }
    }
    let mut out = Vec::new();
    for (n, &(start, label)) in bounds.iter().enumerate() {
        let end = bounds.get(n + 1).map_or(toks.len(), |b| b.0);
        match label {
            None => {}
            Some(SegmentLabel::WhereCondition) => where_conditions(toks, start + 1, end, &mut out),
            Some(label) => out.push(Segment {
                label,
                start,
                tokens: toks[start..end].to_vec(),
            }),
        }
    }
    out
}

fn where_conditions(toks: &[SqlToken], start: usize, end: usize, out: &mut Vec<Segment>) {
    let mut depth = 0i32;
    let mut cond_start = start;
    let mut pending_between = false;
    for i in start..end {
        let t = &toks[i];
        if t.is_kw("(") {
            depth += 1;
        } else if t.is_kw(")") {
            depth -= 1;
        } else if depth == 0 && t.is_kw("BETWEEN") {
            pending_between = true;
        } else if depth == 0 && (t.is_kw("AND") || t.is_kw("OR")) {
            if pending_between && t.is_kw("AND") {
                pending_between = false;
                continue;
            }
            out.push(Segment {
                label: SegmentLabel::WhereCondition,
                start: cond_start,
                tokens: toks[cond_start..i].to_vec(),
            });
            cond_start = i + 1;
        }
    }
    if cond_start < end {
        out.push(Segment {
            label: SegmentLabel::WhereCondition,
            start: cond_start,
            tokens: toks[cond_start..end].to_vec(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub queries: usize,
    pub segments: usize,
    pub avg_segments_per_query: f64,
}

pub fn segment_report<'a>(queries: impl IntoIterator<Item = &'a SqlTokenSeq>) -> SegmentReport {
    let (mut n, mut segs) = (0usize, 0usize);
    for q in queries {
        n += 1;
        segs += extract_segments(q).len();
    }
    SegmentReport {
        queries: n,
        segments: segs,
        avg_segments_per_query: if n == 0 { 0.0 } else { segs as f64 / n as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn identical_sequences_copy_once() {
        let s = diff_tokens(&chars("abc"), &chars("abc"));
        assert_eq!(s.ops, vec![EditBlock::Copy(chars("abc"))]);
    }

    #[test]
    fn empty_source_inserts_everything() {
        let s = diff_tokens(&[], &chars("abc"));
        assert_eq!(s.ops, vec![EditBlock::Insert(chars("abc"))]);
        let s = diff_tokens::<char>(&[], &[]);
        assert!(s.ops.is_empty());
    }

    #[test]
    fn tie_break_prefers_leftmost() {
        // "a" occurs twice in the target; the leftmost one is copied
        let s = diff_tokens(&chars("a"), &chars("bab a"));
        assert_eq!(
            s.ops,
            vec![
                EditBlock::Insert(chars("b")),
                EditBlock::Copy(chars("a")),
                EditBlock::Insert(chars("b a")),
            ]
        );
    }

    #[test]
    fn apply_rejects_inconsistent_scripts() {
        let s = diff_tokens(&chars("abc"), &chars("abd"));
        assert!(apply_tokens(&s, &chars("xbc")).is_err());
        assert!(apply_tokens(&s, &chars("abcd")).is_err());
        assert_eq!(apply_tokens(&s, &chars("abc")).unwrap(), chars("abd"));
    }
}
