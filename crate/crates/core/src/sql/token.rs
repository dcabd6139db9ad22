use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Schema;

/// The closed keyword vocabulary. The first three entries are reserved:
/// beginning-of-sequence, end-of-sequence and the value placeholder.
pub const KEYWORDS: &[&str] = &[
    "<BOS>", "<EOS>", "value", "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "HAVING",
    "LIMIT", "ASC", "DESC", "DISTINCT", "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "IS", "NULL",
    "EXISTS", "JOIN", "ON", "UNION", "INTERSECT", "EXCEPT", "COUNT", "SUM", "AVG", "MAX", "MIN",
    "(", ")", ",", "=", "!=", "<", ">", "<=", ">=", "+", "-", "*", "/", "0", "1", "2", "3", "4",
    "5", "6", "7", "8", "9", "10",
];

/// Index into [`KEYWORDS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Keyword(u8);

impl Keyword {
    pub const BOS: Keyword = Keyword(0);
    pub const EOS: Keyword = Keyword(1);
    pub const VALUE: Keyword = Keyword(2);

    pub fn count() -> usize {
        KEYWORDS.len()
    }

    pub fn from_index(index: usize) -> Option<Keyword> {
        (index < KEYWORDS.len()).then_some(Keyword(index as u8))
    }

    /// Looks up a keyword by its canonical (uppercase) text. Reserved
    /// entries are not reachable through this lookup.
    pub fn lookup(text: &str) -> Option<Keyword> {
        let upper = text.to_ascii_uppercase();
        KEYWORDS
            .iter()
            .skip(3)
            .position(|k| *k == upper)
            .map(|i| Keyword((i + 3) as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn text(self) -> &'static str {
        KEYWORDS[self.0 as usize]
    }

    pub fn is(self, text: &str) -> bool {
        KEYWORDS[self.0 as usize] == text
    }
}

/// One query token. Column and table references are resolved to schema
/// indices, literals are collapsed to a single placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SqlToken {
    Keyword(Keyword),
    Column(usize),
    Table(usize),
    Value,
    Eos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Column,
    Table,
    Value,
    Eos,
}

impl SqlToken {
    pub fn kw(text: &str) -> SqlToken {
        SqlToken::Keyword(Keyword::lookup(text).unwrap_or_else(|| panic!("not a keyword: {text}")))
    }

    pub fn kind(&self) -> TokenKind {
        match self {
            SqlToken::Keyword(_) => TokenKind::Keyword,
            SqlToken::Column(_) => TokenKind::Column,
            SqlToken::Table(_) => TokenKind::Table,
            SqlToken::Value => TokenKind::Value,
            SqlToken::Eos => TokenKind::Eos,
        }
    }

    pub fn column_id(&self) -> Option<usize> {
        match self {
            SqlToken::Column(id) => Some(*id),
            _ => None,
        }
    }

    pub fn is_kw(&self, text: &str) -> bool {
        matches!(self, SqlToken::Keyword(k) if k.is(text))
    }

    /// Surface text of the token. Columns render as `table.column` using
    /// the original schema names; the star column renders as `*`.
    pub fn render(&self, schema: &Schema) -> String {
        match self {
            SqlToken::Keyword(k) => k.text().to_string(),
            SqlToken::Column(id) => schema.column_ref(*id),
            SqlToken::Table(id) => schema.tables[*id].original.clone(),
            SqlToken::Value => "'value'".to_string(),
            SqlToken::Eos => "<EOS>".to_string(),
        }
    }
}

/// A tokenized query grounded to one database.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlTokenSeq {
    pub db_id: String,
    pub tokens: Vec<SqlToken>,
}

impl SqlTokenSeq {
    pub fn new(db_id: impl Into<String>, tokens: Vec<SqlToken>) -> Self {
        SqlTokenSeq {
            db_id: db_id.into(),
            tokens,
        }
    }

    pub fn empty(db_id: impl Into<String>) -> Self {
        Self::new(db_id, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined SQL text; re-tokenizing it against the same schema
    /// yields an equal sequence.
    pub fn render(&self, schema: &Schema) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&t.render(schema));
        }
        out
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}
