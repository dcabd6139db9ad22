//! Clause-level decomposition of tokenized queries and the set-match
//! comparison built on it.
//!
//! Column and table references are already alias-free after tokenization,
//! so canonical strings use schema indices directly (`#5` for column 5,
//! `@2` for table 2). Literals are the single `value` placeholder.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::SqlError;
use crate::sql::token::{SqlToken, SqlTokenSeq};

const AGGREGATORS: &[&str] = &["COUNT", "SUM", "AVG", "MAX", "MIN"];
const COMPARISONS: &[&str] = &["=", "!=", "<", ">", "<=", ">="];
const ARITHMETIC: &[&str] = &["+", "-", "*", "/"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Connective {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SetOp {
    Union,
    Intersect,
    Except,
}

/// Structural counts used by component flags and the hardness buckets.
/// They are derived from the query, so they never decide a match.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseCounts {
    pub aggregates_select: usize,
    pub aggregates_where: usize,
    pub aggregates_group: usize,
    pub aggregates_order: usize,
    pub aggregates_having: usize,
    pub or_connectives: usize,
    pub like_conditions: usize,
    pub subqueries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseSet {
    pub distinct: bool,
    /// Sorted multiset of canonical select items.
    pub select_items: Vec<String>,
    pub from_tables: Vec<String>,
    pub from_subqueries: Vec<String>,
    /// Sorted multiset of (connective, condition) pairs. Each condition
    /// carries the connective to its left; the first carries the one to its
    /// right.
    pub where_conjuncts: Vec<(Connective, String)>,
    pub group_by: Vec<String>,
    pub having: Vec<(Connective, String)>,
    pub order_by: Vec<(String, Direction)>,
    pub limit: Option<String>,
    pub set_op: Option<(SetOp, Box<ClauseSet>)>,
    pub counts: ClauseCounts,
}

impl ClauseSet {
    /// Deterministic serialization; equal canonical strings mean equal
    /// clause sets. Used to embed nested subqueries inside conditions.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        s.push_str("select");
        if self.distinct {
            s.push_str(" distinct");
        }
        let _ = write!(s, " [{}]", self.select_items.join(" , "));
        let _ = write!(s, " from [{}]", self.from_tables.join(" , "));
        if !self.from_subqueries.is_empty() {
            let _ = write!(s, " [{}]", self.from_subqueries.join(" , "));
        }
        let conds = |v: &[(Connective, String)]| {
            v.iter()
                .map(|(c, x)| format!("{c:?}:{x}"))
                .collect::<Vec<_>>()
                .join(" ; ")
        };
        if !self.where_conjuncts.is_empty() {
            let _ = write!(s, " where [{}]", conds(&self.where_conjuncts));
        }
        if !self.group_by.is_empty() {
            let _ = write!(s, " group [{}]", self.group_by.join(" , "));
        }
        if !self.having.is_empty() {
            let _ = write!(s, " having [{}]", conds(&self.having));
        }
        if !self.order_by.is_empty() {
            let items: Vec<String> = self
                .order_by
                .iter()
                .map(|(x, d)| format!("{x} {d:?}"))
                .collect();
            let _ = write!(s, " order [{}]", items.join(" , "));
        }
        if let Some(l) = &self.limit {
            let _ = write!(s, " limit {l}");
        }
        if let Some((op, rhs)) = &self.set_op {
            let _ = write!(s, " {op:?} {{{}}}", rhs.canonical());
        }
        s
    }

    fn has_aggregate(&self) -> bool {
        let c = &self.counts;
        c.aggregates_select + c.aggregates_having + c.aggregates_order > 0
    }
}

/// Query components tracked in dataset statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Where,
    Agg,
    Group,
    Order,
    Having,
    Set,
    Join,
    Nested,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Where,
        Component::Agg,
        Component::Group,
        Component::Order,
        Component::Having,
        Component::Set,
        Component::Join,
        Component::Nested,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Where => "WHERE",
            Component::Agg => "AGG",
            Component::Group => "GROUP",
            Component::Order => "ORDER",
            Component::Having => "HAVING",
            Component::Set => "SET",
            Component::Join => "JOIN",
            Component::Nested => "Nested",
        }
    }
}

/// Components present in the query. Set-operation branches contribute
/// their components; subqueries only contribute `Nested`.
pub fn component_flags(c: &ClauseSet) -> BTreeSet<Component> {
    let mut out = BTreeSet::new();
    let mut cur = Some(c);
    while let Some(q) = cur {
        if !q.where_conjuncts.is_empty() {
            out.insert(Component::Where);
        }
        if q.has_aggregate() {
            out.insert(Component::Agg);
        }
        if !q.group_by.is_empty() {
            out.insert(Component::Group);
        }
        if !q.order_by.is_empty() {
            out.insert(Component::Order);
        }
        if !q.having.is_empty() {
            out.insert(Component::Having);
        }
        if q.from_tables.len() > 1 {
            out.insert(Component::Join);
        }
        if q.counts.subqueries > 0 {
            out.insert(Component::Nested);
        }
        if q.set_op.is_some() {
            out.insert(Component::Set);
        }
        cur = q.set_op.as_ref().map(|(_, r)| r.as_ref());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hardness {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Hardness {
    pub const ALL: [Hardness; 4] = [Hardness::Easy, Hardness::Medium, Hardness::Hard, Hardness::Extra];

    pub fn name(self) -> &'static str {
        match self {
            Hardness::Easy => "easy",
            Hardness::Medium => "medium",
            Hardness::Hard => "hard",
            Hardness::Extra => "extra",
        }
    }
}

/// Coarse four-bucket difficulty in the style of the Spider evaluator:
/// counts of clause components, nested queries and "other" complexity.
pub fn hardness(c: &ClauseSet) -> Hardness {
    let k = &c.counts;
    let mut comp1 = 0;
    comp1 += usize::from(!c.where_conjuncts.is_empty());
    comp1 += usize::from(!c.group_by.is_empty());
    comp1 += usize::from(!c.order_by.is_empty());
    comp1 += usize::from(c.limit.is_some());
    comp1 += c.from_tables.len().saturating_sub(1);
    comp1 += k.or_connectives + k.like_conditions;
    let comp2 = k.subqueries + usize::from(c.set_op.is_some());
    let aggs = k.aggregates_select
        + k.aggregates_where
        + k.aggregates_group
        + k.aggregates_order
        + k.aggregates_having;
    let others = usize::from(aggs > 1)
        + usize::from(c.select_items.len() > 1)
        + usize::from(c.where_conjuncts.len() > 1)
        + usize::from(c.group_by.len() > 1);

    if comp1 <= 1 && others == 0 && comp2 == 0 {
        Hardness::Easy
    } else if (others <= 2 && comp1 <= 1 && comp2 == 0) || (comp1 <= 2 && others < 2 && comp2 == 0)
    {
        Hardness::Medium
    } else if (others > 2 && comp1 <= 2 && comp2 == 0)
        || (2 < comp1 && comp1 <= 3 && others <= 2 && comp2 == 0)
        || (comp1 <= 1 && others == 0 && comp2 <= 1)
    {
        Hardness::Hard
    } else {
        Hardness::Extra
    }
}

/// Clause-by-clause comparison: multisets for select items, tables,
/// conditions and grouping; an ordered list for ORDER BY.
pub fn exact_set_match(pred: &ClauseSet, gold: &ClauseSet) -> bool {
    pred.distinct == gold.distinct
        && pred.select_items == gold.select_items
        && pred.from_tables == gold.from_tables
        && pred.from_subqueries == gold.from_subqueries
        && pred.where_conjuncts == gold.where_conjuncts
        && pred.group_by == gold.group_by
        && pred.having == gold.having
        && pred.order_by == gold.order_by
        && pred.limit == gold.limit
        && match (&pred.set_op, &gold.set_op) {
            (None, None) => true,
            (Some((a, l)), Some((b, r))) => a == b && exact_set_match(l, r),
            _ => false,
        }
}

/// Token-level convenience: a prediction that fails to decompose never
/// matches.
pub fn sequences_match(pred: &SqlTokenSeq, gold: &SqlTokenSeq) -> bool {
    match (decompose(pred), decompose(gold)) {
        (Ok(p), Ok(g)) => exact_set_match(&p, &g),
        _ => false,
    }
}

pub fn decompose(seq: &SqlTokenSeq) -> Result<ClauseSet, SqlError> {
    let mut p = Parser {
        toks: &seq.tokens,
        pos: 0,
    };
    let q = p.query()?;
    if p.pos != p.toks.len() {
        return Err(p.unexpected("end of query"));
    }
    Ok(q)
}

struct Parser<'a> {
    toks: &'a [SqlToken],
    pos: usize,
}

struct Expr {
    text: String,
    aggregates: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&SqlToken> {
        self.toks.get(self.pos)
    }

    fn peek_kw(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_kw(k))
    }

    fn peek_kw_at(&self, offset: usize, k: &str) -> bool {
        self.toks.get(self.pos + offset).is_some_and(|t| t.is_kw(k))
    }

    fn eat(&mut self, k: &str) -> bool {
        if self.peek_kw(k) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_any(&mut self, ks: &[&'static str]) -> Option<&'static str> {
        let k = ks.iter().find(|k| self.peek_kw(k))?;
        self.pos += 1;
        Some(k)
    }

    fn unexpected(&self, expected: &'static str) -> SqlError {
        match self.peek() {
            None => SqlError::UnexpectedEnd(expected),
            Some(t) => SqlError::Unexpected {
                position: self.pos,
                found: format!("{t:?}"),
                expected,
            },
        }
    }

    fn expect(&mut self, k: &'static str) -> Result<(), SqlError> {
        if self.eat(k) {
            Ok(())
        } else {
            Err(self.unexpected(k))
        }
    }

    fn query(&mut self) -> Result<ClauseSet, SqlError> {
        let mut q = self.select_core()?;
        let op = match self.eat_any(&["UNION", "INTERSECT", "EXCEPT"]) {
            Some("UNION") => Some(SetOp::Union),
            Some("INTERSECT") => Some(SetOp::Intersect),
            Some(_) => Some(SetOp::Except),
            None => None,
        };
        if let Some(op) = op {
            let rhs = self.query()?;
            q.set_op = Some((op, Box::new(rhs)));
        }
        Ok(q)
    }

    fn select_core(&mut self) -> Result<ClauseSet, SqlError> {
        let mut counts = ClauseCounts::default();
        self.expect("SELECT")?;
        let distinct = self.eat("DISTINCT");
        let mut select_items = Vec::new();
        loop {
            let e = self.expr(&mut counts)?;
            counts.aggregates_select += e.aggregates;
            select_items.push(e.text);
            if !self.eat(",") {
                break;
            }
        }
        self.expect("FROM")?;
        let mut from_tables = Vec::new();
        let mut from_subqueries = Vec::new();
        loop {
            match self.peek() {
                Some(SqlToken::Table(t)) => {
                    from_tables.push(format!("@{t}"));
                    self.pos += 1;
                }
                Some(t) if t.is_kw("(") && self.peek_kw_at(1, "SELECT") => {
                    self.pos += 1;
                    let sub = self.query()?;
                    self.expect(")")?;
                    counts.subqueries += 1;
                    from_subqueries.push(sub.canonical());
                }
                _ => return Err(self.unexpected("table")),
            }
            if self.eat("ON") {
                // join conditions are implied by the table set
                let mut scratch = ClauseCounts::default();
                self.conditions(&mut scratch)?;
                counts.subqueries += scratch.subqueries;
            }
            if !(self.eat("JOIN") || self.eat(",")) {
                break;
            }
        }
        from_tables.sort();
        from_subqueries.sort();

        let mut where_conjuncts = Vec::new();
        if self.eat("WHERE") {
            let mut c = ClauseCounts::default();
            where_conjuncts = self.conditions(&mut c)?;
            counts.aggregates_where += c.aggregates_select;
            counts.or_connectives += c.or_connectives;
            counts.like_conditions += c.like_conditions;
            counts.subqueries += c.subqueries;
        }
        let mut group_by = Vec::new();
        if self.eat("GROUP") {
            self.expect("BY")?;
            loop {
                let e = self.expr(&mut counts)?;
                counts.aggregates_group += e.aggregates;
                group_by.push(e.text);
                if !self.eat(",") {
                    break;
                }
            }
            group_by.sort();
        }
        let mut having = Vec::new();
        if self.eat("HAVING") {
            let mut c = ClauseCounts::default();
            having = self.conditions(&mut c)?;
            counts.aggregates_having += c.aggregates_select;
            counts.or_connectives += c.or_connectives;
            counts.like_conditions += c.like_conditions;
            counts.subqueries += c.subqueries;
        }
        let mut order_by = Vec::new();
        if self.eat("ORDER") {
            self.expect("BY")?;
            loop {
                let e = self.expr(&mut counts)?;
                counts.aggregates_order += e.aggregates;
                let dir = match self.eat_any(&["ASC", "DESC"]) {
                    Some("DESC") => Direction::Desc,
                    _ => Direction::Asc,
                };
                order_by.push((e.text, dir));
                if !self.eat(",") {
                    break;
                }
            }
        }
        let mut limit = None;
        if self.eat("LIMIT") {
            limit = match self.peek() {
                Some(SqlToken::Keyword(k)) if k.text().bytes().all(|b| b.is_ascii_digit()) => {
                    Some(k.text().to_string())
                }
                Some(SqlToken::Value) => Some("value".to_string()),
                _ => return Err(self.unexpected("limit count")),
            };
            self.pos += 1;
        }
        select_items.sort();
        Ok(ClauseSet {
            distinct,
            select_items,
            from_tables,
            from_subqueries,
            where_conjuncts,
            group_by,
            having,
            order_by,
            limit,
            set_op: None,
            counts,
        })
    }

    /// `cond ((AND | OR) cond)*`. Aggregates found in the conditions are
    /// reported through `counts.aggregates_select` for the caller to file.
    fn conditions(&mut self, counts: &mut ClauseCounts) -> Result<Vec<(Connective, String)>, SqlError> {
        let mut conds = Vec::new();
        let mut connectives = Vec::new();
        loop {
            conds.push(self.condition(counts)?);
            match self.eat_any(&["AND", "OR"]) {
                Some("AND") => connectives.push(Connective::And),
                Some(_) => {
                    counts.or_connectives += 1;
                    connectives.push(Connective::Or)
                }
                None => break,
            }
        }
        let mut out: Vec<(Connective, String)> = conds
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let conn = if i == 0 {
                    connectives.first().copied().unwrap_or(Connective::And)
                } else {
                    connectives[i - 1]
                };
                (conn, c)
            })
            .collect();
        out.sort();
        Ok(out)
    }

    fn condition(&mut self, counts: &mut ClauseCounts) -> Result<String, SqlError> {
        if self.peek_kw("(") && !self.peek_kw_at(1, "SELECT") {
            // parenthesized boolean group, compared structurally
            self.pos += 1;
            let inner = self.conditions(counts)?;
            self.expect(")")?;
            let parts: Vec<String> = inner.iter().map(|(c, x)| format!("{c:?}:{x}")).collect();
            return Ok(format!("( {} )", parts.join(" ; ")));
        }
        let mut negated = self.eat("NOT");
        if self.eat("EXISTS") {
            let sub = self.subquery(counts)?;
            return Ok(format!("{}exists {sub}", if negated { "not " } else { "" }));
        }
        let lhs = self.expr(counts)?;
        counts.aggregates_select += lhs.aggregates;
        if self.eat("NOT") {
            negated = !negated;
        }
        let neg = if negated { "not " } else { "" };
        if let Some(op) = self.eat_any(COMPARISONS) {
            let rhs = self.operand(counts)?;
            return Ok(format!("{neg}{} {op} {rhs}", lhs.text));
        }
        if self.eat("LIKE") {
            counts.like_conditions += 1;
            let rhs = self.operand(counts)?;
            return Ok(format!("{neg}{} like {rhs}", lhs.text));
        }
        if self.eat("IN") {
            let rhs = self.operand(counts)?;
            return Ok(format!("{neg}{} in {rhs}", lhs.text));
        }
        if self.eat("BETWEEN") {
            let lo = self.operand(counts)?;
            self.expect("AND")?;
            let hi = self.operand(counts)?;
            return Ok(format!("{neg}{} between {lo} and {hi}", lhs.text));
        }
        if self.eat("IS") {
            let not_null = self.eat("NOT");
            self.expect("NULL")?;
            let n = if not_null { "not " } else { "" };
            return Ok(format!("{neg}{} is {n}null", lhs.text));
        }
        Err(self.unexpected("comparison operator"))
    }

    fn subquery(&mut self, counts: &mut ClauseCounts) -> Result<String, SqlError> {
        self.expect("(")?;
        let sub = self.query()?;
        self.expect(")")?;
        counts.subqueries += 1;
        Ok(format!("{{{}}}", sub.canonical()))
    }

    /// Right-hand side of a comparison: a subquery or an expression.
    fn operand(&mut self, counts: &mut ClauseCounts) -> Result<String, SqlError> {
        if self.peek_kw("(") && self.peek_kw_at(1, "SELECT") {
            return self.subquery(counts);
        }
        let e = self.expr(counts)?;
        counts.aggregates_select += e.aggregates;
        Ok(e.text)
    }

    fn expr(&mut self, counts: &mut ClauseCounts) -> Result<Expr, SqlError> {
        let mut e = self.term(counts)?;
        while let Some(op) = self.eat_any(ARITHMETIC) {
            let rhs = self.term(counts)?;
            e.text = format!("{} {op} {}", e.text, rhs.text);
            e.aggregates += rhs.aggregates;
        }
        Ok(e)
    }

    fn term(&mut self, counts: &mut ClauseCounts) -> Result<Expr, SqlError> {
        if let Some(agg) = self.eat_any(AGGREGATORS) {
            self.expect("(")?;
            let distinct = self.eat("DISTINCT");
            let inner = self.expr(counts)?;
            self.expect(")")?;
            let d = if distinct { "distinct " } else { "" };
            return Ok(Expr {
                text: format!("{}({d}{})", agg.to_ascii_lowercase(), inner.text),
                aggregates: inner.aggregates + 1,
            });
        }
        if self.eat("DISTINCT") {
            let inner = self.term(counts)?;
            return Ok(Expr {
                text: format!("distinct {}", inner.text),
                aggregates: inner.aggregates,
            });
        }
        if self.eat("-") {
            let inner = self.term(counts)?;
            return Ok(Expr {
                text: format!("- {}", inner.text),
                aggregates: inner.aggregates,
            });
        }
        if self.peek_kw("(") {
            if self.peek_kw_at(1, "SELECT") {
                let text = self.subquery(counts)?;
                return Ok(Expr { text, aggregates: 0 });
            }
            self.pos += 1;
            let inner = self.expr(counts)?;
            self.expect(")")?;
            return Ok(Expr {
                text: format!("( {} )", inner.text),
                aggregates: inner.aggregates,
            });
        }
        let text = match self.peek() {
            Some(SqlToken::Column(0)) => "*".to_string(),
            Some(SqlToken::Column(c)) => format!("#{c}"),
            Some(SqlToken::Value) => "value".to_string(),
            Some(SqlToken::Keyword(k)) if k.text().bytes().all(|b| b.is_ascii_digit()) => {
                k.text().to_string()
            }
            Some(SqlToken::Keyword(k)) if k.is("NULL") => "null".to_string(),
            _ => return Err(self.unexpected("column or value")),
        };
        self.pos += 1;
        Ok(Expr { text, aggregates: 0 })
    }
}
