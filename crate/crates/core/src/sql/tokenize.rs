//! Schema-grounded SQL tokenization.
//!
//! Table aliases are resolved away: `T3.amenity_name` becomes a single
//! column token, `dorm AS T1` becomes a single table token. Literals
//! collapse to the value placeholder, except small integers after `LIMIT`,
//! which are keywords.

use std::collections::HashMap;

use crate::corpus::Schema;
use crate::error::SqlError;
use crate::sql::token::{Keyword, SqlToken, SqlTokenSeq};

#[derive(Debug, Clone, PartialEq)]
enum LexKind {
    Str,
    Number,
    Ident,
    /// `qualifier.name`; name may be `*`.
    Qualified(String, String),
    Punct,
}

#[derive(Debug, Clone)]
struct Lexeme {
    kind: LexKind,
    text: String,
}

impl Lexeme {
    fn is_word(&self, word: &str) -> bool {
        self.kind == LexKind::Ident && self.text.eq_ignore_ascii_case(word)
    }

    fn is_punct(&self, p: &str) -> bool {
        self.kind == LexKind::Punct && self.text == p
    }
}

fn lex(raw: &str) -> Result<Vec<Lexeme>, SqlError> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let is_ident_start = |c: u8| c.is_ascii_alphabetic() || c == b'_';
    let is_ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'\'' || c == b'"' {
            i += 1;
            loop {
                match bytes.get(i) {
                    None => return Err(SqlError::UnbalancedQuote(start)),
                    Some(&q) if q == c => {
                        if bytes.get(i + 1) == Some(&c) {
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(_) => i += 1,
                }
            }
            out.push(Lexeme {
                kind: LexKind::Str,
                text: raw[start..i].to_string(),
            });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            out.push(Lexeme {
                kind: LexKind::Number,
                text: raw[start..i].to_string(),
            });
            continue;
        }
        if is_ident_start(c) || c == b'`' {
            let read_ident = |i: &mut usize| -> Result<String, SqlError> {
                if bytes[*i] == b'`' {
                    let s = *i;
                    *i += 1;
                    while *i < bytes.len() && bytes[*i] != b'`' {
                        *i += 1;
                    }
                    if *i >= bytes.len() {
                        return Err(SqlError::UnbalancedQuote(s));
                    }
                    *i += 1;
                    Ok(raw[s + 1..*i - 1].to_string())
                } else {
                    let s = *i;
                    while *i < bytes.len() && is_ident(bytes[*i]) {
                        *i += 1;
                    }
                    Ok(raw[s..*i].to_string())
                }
            };
            let first = read_ident(&mut i)?;
            if bytes.get(i) == Some(&b'.') {
                match bytes.get(i + 1) {
                    Some(b'*') => {
                        i += 2;
                        out.push(Lexeme {
                            kind: LexKind::Qualified(first, "*".into()),
                            text: raw[start..i].to_string(),
                        });
                        continue;
                    }
                    Some(&n) if is_ident_start(n) || n == b'`' => {
                        i += 1;
                        let second = read_ident(&mut i)?;
                        out.push(Lexeme {
                            kind: LexKind::Qualified(first, second),
                            text: raw[start..i].to_string(),
                        });
                        continue;
                    }
                    _ => {}
                }
            }
            out.push(Lexeme {
                kind: LexKind::Ident,
                text: first,
            });
            continue;
        }
        let two = raw.get(i..i + 2).unwrap_or("");
        let punct = match two {
            "!=" | "<>" | "<=" | ">=" => {
                i += 2;
                if two == "<>" {
                    "!="
                } else {
                    two
                }
            }
            _ => {
                i += 1;
                match c {
                    b'=' => "=",
                    b'<' => "<",
                    b'>' => ">",
                    b'+' => "+",
                    b'-' => "-",
                    b'*' => "*",
                    b'/' => "/",
                    b'(' => "(",
                    b')' => ")",
                    b',' => ",",
                    b';' => ";",
                    _ => {
                        let ch = raw[start..].chars().next().unwrap();
                        return Err(SqlError::UnexpectedChar(ch, start));
                    }
                }
            }
        };
        if punct != ";" {
            out.push(Lexeme {
                kind: LexKind::Punct,
                text: punct.to_string(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
struct Scope {
    parent: Option<usize>,
    tables: Vec<usize>,
    aliases: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Plain,
    Table(usize),
    Skip,
}

/// Resolves FROM bindings, assigning each lexeme a scope and a role.
fn bind(lexemes: &[Lexeme], schema: &Schema) -> Result<(Vec<Scope>, Vec<usize>, Vec<Role>), SqlError> {
    let mut scopes = vec![Scope::default()];
    let mut stack = vec![0usize];
    let mut parens: Vec<bool> = Vec::new();
    let mut in_from = vec![false];
    let mut scope_of = vec![0; lexemes.len()];
    let mut roles = vec![Role::Plain; lexemes.len()];
    let mut expect_table = false;

    let mut i = 0;
    while i < lexemes.len() {
        let lx = &lexemes[i];
        let cur = *stack.last().unwrap();
        scope_of[i] = cur;
        if lx.is_punct("(") {
            let sub = lexemes.get(i + 1).is_some_and(|n| n.is_word("select"));
            parens.push(sub);
            if sub {
                scopes.push(Scope {
                    parent: Some(cur),
                    ..Scope::default()
                });
                stack.push(scopes.len() - 1);
                in_from.push(false);
            }
            expect_table = false;
        } else if lx.is_punct(")") {
            match parens.pop() {
                None => return Err(SqlError::UnbalancedParens),
                Some(true) => {
                    stack.pop();
                    in_from.pop();
                    // derived-table alias
                    if lexemes.get(i + 1).is_some_and(|n| n.is_word("as")) {
                        roles[i + 1] = Role::Skip;
                        if i + 2 < lexemes.len() {
                            roles[i + 2] = Role::Skip;
                        }
                    }
                }
                Some(false) => {}
            }
        } else if lx.kind == LexKind::Ident {
            let word = lx.text.to_ascii_uppercase();
            match word.as_str() {
                "UNION" | "INTERSECT" | "EXCEPT" => {
                    let parent = scopes[cur].parent;
                    scopes.push(Scope {
                        parent,
                        ..Scope::default()
                    });
                    *stack.last_mut().unwrap() = scopes.len() - 1;
                    *in_from.last_mut().unwrap() = false;
                    scope_of[i] = scopes.len() - 1;
                    expect_table = false;
                }
                "FROM" => {
                    *in_from.last_mut().unwrap() = true;
                    expect_table = true;
                }
                "JOIN" => expect_table = true,
                "WHERE" | "GROUP" | "ORDER" | "HAVING" | "LIMIT" => {
                    *in_from.last_mut().unwrap() = false;
                    expect_table = false;
                }
                "ON" => expect_table = false,
                "AS" if roles[i] != Role::Skip => {
                    // column alias such as `COUNT(*) AS cnt`
                    roles[i] = Role::Skip;
                    if i + 1 < lexemes.len() {
                        roles[i + 1] = Role::Skip;
                    }
                    i += 2;
                    continue;
                }
                _ if expect_table => {
                    let t = schema
                        .find_table(&lx.text)
                        .ok_or_else(|| SqlError::UnknownTable(lx.text.clone()))?;
                    roles[i] = Role::Table(t);
                    scopes[cur].tables.push(t);
                    expect_table = false;
                    let next = lexemes.get(i + 1);
                    let alias_at = if next.is_some_and(|n| n.is_word("as")) {
                        roles[i + 1] = Role::Skip;
                        Some(i + 2)
                    } else if next.is_some_and(|n| {
                        n.kind == LexKind::Ident
                            && Keyword::lookup(&n.text).is_none()
                            && !n.is_word("on")
                    }) {
                        Some(i + 1)
                    } else {
                        None
                    };
                    if let Some(a) = alias_at {
                        let alias = lexemes
                            .get(a)
                            .filter(|l| l.kind == LexKind::Ident)
                            .ok_or(SqlError::UnexpectedEnd("table alias"))?;
                        roles[a] = Role::Skip;
                        scope_of[a] = cur;
                        if a > i + 1 {
                            scope_of[i + 1] = cur;
                        }
                        scopes[cur].aliases.insert(alias.text.to_ascii_lowercase(), t);
                        i = a + 1;
                        continue;
                    }
                }
                _ => {}
            }
        } else if lx.is_punct(",") && *in_from.last().unwrap() {
            expect_table = true;
        }
        i += 1;
    }
    if !parens.is_empty() {
        return Err(SqlError::UnbalancedParens);
    }
    Ok((scopes, scope_of, roles))
}

fn resolve_table(qualifier: &str, scope: usize, scopes: &[Scope], schema: &Schema) -> Option<usize> {
    let key = qualifier.to_ascii_lowercase();
    let mut s = Some(scope);
    while let Some(id) = s {
        if let Some(&t) = scopes[id].aliases.get(&key) {
            return Some(t);
        }
        s = scopes[id].parent;
    }
    // aliases bound in sibling or later scopes
    scopes
        .iter()
        .find_map(|sc| sc.aliases.get(&key).copied())
        .or_else(|| schema.find_table(qualifier))
}

fn resolve_bare(name: &str, scope: usize, scopes: &[Scope], schema: &Schema) -> Option<usize> {
    let mut s = Some(scope);
    while let Some(id) = s {
        for &t in &scopes[id].tables {
            if let Some(c) = schema.find_column(t, name) {
                return Some(c);
            }
        }
        s = scopes[id].parent;
    }
    let mut hits = schema
        .columns
        .iter()
        .filter(|c| !c.is_star && c.original.eq_ignore_ascii_case(name));
    match (hits.next(), hits.next()) {
        (Some(c), None) => Some(c.column_id),
        _ => None,
    }
}

/// Tokenizes `raw` against `schema`.
pub fn tokenize_sql(raw: &str, schema: &Schema) -> Result<SqlTokenSeq, SqlError> {
    let lexemes = lex(raw)?;
    let (scopes, scope_of, roles) = bind(&lexemes, schema)?;
    let mut tokens: Vec<SqlToken> = Vec::with_capacity(lexemes.len());
    for (i, lx) in lexemes.iter().enumerate() {
        let token = match roles[i] {
            Role::Skip => continue,
            Role::Table(t) => SqlToken::Table(t),
            Role::Plain => match &lx.kind {
                LexKind::Str => SqlToken::Value,
                LexKind::Number => {
                    let after_limit = tokens.last().is_some_and(|t| t.is_kw("LIMIT"));
                    match Keyword::lookup(&lx.text) {
                        Some(k) if after_limit => SqlToken::Keyword(k),
                        _ => SqlToken::Value,
                    }
                }
                LexKind::Qualified(q, name) => {
                    let t = resolve_table(q, scope_of[i], &scopes, schema)
                        .ok_or_else(|| SqlError::UnknownColumn(lx.text.clone()))?;
                    let c = schema
                        .find_column(t, name)
                        .ok_or_else(|| SqlError::UnknownColumn(lx.text.clone()))?;
                    SqlToken::Column(c)
                }
                LexKind::Ident => {
                    if lx.text.eq_ignore_ascii_case("value") {
                        SqlToken::Value
                    } else if let Some(k) = Keyword::lookup(&lx.text) {
                        SqlToken::Keyword(k)
                    } else if let Some(c) = resolve_bare(&lx.text, scope_of[i], &scopes, schema) {
                        SqlToken::Column(c)
                    } else {
                        return Err(SqlError::UnknownColumn(lx.text.clone()));
                    }
                }
                LexKind::Punct if lx.text == "*" => {
                    let star_position = tokens.last().is_none_or(|t| {
                        ["SELECT", "DISTINCT", "(", ","].iter().any(|k| t.is_kw(k))
                    });
                    if star_position {
                        SqlToken::Column(0)
                    } else {
                        SqlToken::kw("*")
                    }
                }
                LexKind::Punct => SqlToken::kw(&lx.text),
            },
        };
        tokens.push(token);
    }
    Ok(SqlTokenSeq::new(schema.db_id.clone(), tokens))
}
