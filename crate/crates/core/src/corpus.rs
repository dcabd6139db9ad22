//! Cross-domain, context-dependent datasets in the SParC/Spider JSON layout.
//!
//! A schema file is a JSON list of database records:
//!
//! ```json
//! [{"db_id": "dorm_1",
//!   "table_names_original": ["dorm", "has_amenity"],
//!   "table_names": ["dorm", "has amenity"],
//!   "column_names_original": [[-1, "*"], [0, "dormid"], [1, "amenid"]],
//!   "column_names": [[-1, "*"], [0, "dorm id"], [1, "amenity id"]],
//!   "foreign_keys": [[2, 1]]}]
//! ```
//!
//! `table_names` and `column_names` are optional natural-language names.
//! The star entry is optional; when absent a synthetic one is inserted at
//! column id 0 and foreign keys are shifted accordingly.
//!
//! An interaction file is a JSON list of
//! `{"database_id", "interaction": [{"utterance", "query"}], "final": {"utterance"}}`
//! records, with an optional `"interaction_id"` string.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sql::{self, Component, SqlTokenSeq};

pub const DOT: &str = ".";
pub const STAR: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInfo {
    pub original: String,
    pub words: Vec<String>,
    pub natural_words: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnHeader {
    pub column_id: usize,
    pub table_id: Option<usize>,
    pub original: String,
    pub table_name: Vec<String>,
    pub column_name: Vec<String>,
    /// `table_name ++ ["."] ++ column_name`, or `["*"]` for the star header.
    pub words: Vec<String>,
    pub natural_words: Option<Vec<String>>,
    pub is_star: bool,
}

impl ColumnHeader {
    pub fn star() -> Self {
        ColumnHeader {
            column_id: 0,
            table_id: None,
            original: STAR.to_string(),
            table_name: Vec::new(),
            column_name: vec![STAR.to_string()],
            words: vec![STAR.to_string()],
            natural_words: None,
            is_star: true,
        }
    }

    pub fn build(
        column_id: usize,
        table_id: usize,
        original: &str,
        table_name: Vec<String>,
        column_name: Vec<String>,
    ) -> Result<Self> {
        let words = build_column_header(&table_name, &column_name)?;
        Ok(ColumnHeader {
            column_id,
            table_id: Some(table_id),
            original: original.to_string(),
            table_name,
            column_name,
            words,
            natural_words: None,
            is_star: false,
        })
    }
}

/// Header word sequence: table words, the dot token, column words.
pub fn build_column_header(table_name: &[String], column_name: &[String]) -> Result<Vec<String>> {
    if column_name.is_empty() {
        return Err(Error::Validation("column name is empty".into()));
    }
    if column_name.len() == 1 && column_name[0] == STAR && table_name.is_empty() {
        return Ok(vec![STAR.to_string()]);
    }
    let mut words = Vec::with_capacity(table_name.len() + column_name.len() + 1);
    words.extend(table_name.iter().cloned());
    words.push(DOT.to_string());
    words.extend(column_name.iter().cloned());
    Ok(words)
}

/// Splits an original identifier such as `stu_fname` into lowercase words.
pub fn split_identifier(name: &str) -> Vec<String> {
    name.split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<TableInfo>,
    pub columns: Vec<ColumnHeader>,
    pub foreign_keys: Vec<(usize, usize)>,
}

impl Schema {
    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn find_table(&self, name: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|t| t.original.eq_ignore_ascii_case(name))
    }

    pub fn find_column(&self, table_id: usize, name: &str) -> Option<usize> {
        if name == STAR {
            return Some(0);
        }
        self.columns
            .iter()
            .position(|c| c.table_id == Some(table_id) && c.original.eq_ignore_ascii_case(name))
    }

    /// Columns of `table_id`, in schema order.
    pub fn table_columns(&self, table_id: usize) -> impl Iterator<Item = &ColumnHeader> {
        self.columns
            .iter()
            .filter(move |c| c.table_id == Some(table_id))
    }

    /// Qualified reference `table.column` using original names.
    pub fn column_ref(&self, column_id: usize) -> String {
        let c = &self.columns[column_id];
        match c.table_id {
            None => STAR.to_string(),
            Some(t) => format!("{}.{}", self.tables[t].original, c.original),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("schema {}: {msg}", self.db_id)));
        let stars = self.columns.iter().filter(|c| c.is_star).count();
        if stars != 1 || !self.columns.first().is_some_and(|c| c.is_star) {
            return fail("expected exactly one star header at column id 0".into());
        }
        for (i, c) in self.columns.iter().enumerate() {
            if c.column_id != i {
                return fail(format!("column ids not contiguous at {i}"));
            }
            if c.words.is_empty() {
                return fail(format!("column {i} has no words"));
            }
            if c.is_star {
                if c.words != [STAR] || !c.table_name.is_empty() {
                    return fail("malformed star header".into());
                }
                continue;
            }
            match c.table_id {
                Some(t) if t < self.tables.len() => {
                    if c.table_name != self.tables[t].words {
                        return fail(format!("column {i} table words disagree with table {t}"));
                    }
                }
                _ => return fail(format!("column {i} references a missing table")),
            }
            let expected = build_column_header(&c.table_name, &c.column_name)?;
            if c.words != expected {
                return fail(format!("column {i} words are not table . column"));
            }
        }
        for &(a, b) in &self.foreign_keys {
            for id in [a, b] {
                if id == 0 || id >= self.columns.len() {
                    return fail(format!("foreign key references invalid column {id}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaRecord {
    pub db_id: String,
    pub table_names_original: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_names: Option<Vec<String>>,
    pub column_names_original: Vec<(i64, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_names: Option<Vec<(i64, String)>>,
    #[serde(default)]
    pub foreign_keys: Vec<(i64, i64)>,
}

impl SchemaRecord {
    pub fn into_schema(self) -> std::result::Result<Schema, String> {
        let tables: Vec<TableInfo> = self
            .table_names_original
            .iter()
            .enumerate()
            .map(|(i, name)| TableInfo {
                original: name.clone(),
                words: split_identifier(name),
                natural_words: self
                    .table_names
                    .as_ref()
                    .and_then(|n| n.get(i))
                    .map(|n| split_identifier(n)),
            })
            .collect();
        if let Some(t) = tables.iter().find(|t| t.words.is_empty()) {
            return Err(format!("table {:?} has an empty name", t.original));
        }
        if let Some(natural) = &self.column_names {
            if natural.len() != self.column_names_original.len() {
                return Err("column_names and column_names_original differ in length".into());
            }
        }

        let has_star = matches!(self.column_names_original.first(), Some((-1, n)) if n == STAR);
        let offset = if has_star { 0 } else { 1 };
        let mut columns = vec![ColumnHeader::star()];
        for (i, (table_index, name)) in self.column_names_original.iter().enumerate() {
            if has_star && i == 0 {
                continue;
            }
            let t = usize::try_from(*table_index)
                .ok()
                .filter(|t| *t < tables.len())
                .ok_or_else(|| format!("column {name:?} has invalid table index {table_index}"))?;
            let mut header = ColumnHeader::build(
                columns.len(),
                t,
                name,
                tables[t].words.clone(),
                split_identifier(name),
            )
            .map_err(|e| format!("column {name:?}: {e}"))?;
            header.natural_words = self
                .column_names
                .as_ref()
                .map(|n| split_identifier(&n[i].1));
            columns.push(header);
        }
        let shift = |id: i64| -> std::result::Result<usize, String> {
            usize::try_from(id)
                .map(|id| id + offset)
                .map_err(|_| format!("foreign key id {id} is negative"))
        };
        let foreign_keys = self
            .foreign_keys
            .iter()
            .map(|&(a, b)| Ok((shift(a)?, shift(b)?)))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(Schema {
            db_id: self.db_id,
            tables,
            columns,
            foreign_keys,
        })
    }
}

impl From<&Schema> for SchemaRecord {
    fn from(s: &Schema) -> Self {
        let natural_tables: Option<Vec<String>> = s
            .tables
            .iter()
            .map(|t| t.natural_words.as_ref().map(|w| w.join(" ")))
            .collect();
        let mut natural_columns = vec![(-1, STAR.to_string())];
        let mut have_natural = true;
        let mut column_names_original = Vec::with_capacity(s.columns.len());
        for c in &s.columns {
            let t = c.table_id.map_or(-1, |t| t as i64);
            column_names_original.push((t, c.original.clone()));
            if !c.is_star {
                match &c.natural_words {
                    Some(w) => natural_columns.push((t, w.join(" "))),
                    None => have_natural = false,
                }
            }
        }
        SchemaRecord {
            db_id: s.db_id.clone(),
            table_names_original: s.tables.iter().map(|t| t.original.clone()).collect(),
            table_names: natural_tables,
            column_names_original,
            column_names: have_natural.then_some(natural_columns),
            foreign_keys: s
                .foreign_keys
                .iter()
                .map(|&(a, b)| (a as i64, b as i64))
                .collect(),
        }
    }
}

pub type SchemaMap = BTreeMap<String, Schema>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn records(path: &Path) -> Result<Vec<serde_json::Value>> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        record: "<file>".into(),
        message: e.to_string(),
    })
}

pub fn load_schemas(path: &Path) -> Result<SchemaMap> {
    let mut out = SchemaMap::new();
    for (i, value) in records(path)?.into_iter().enumerate() {
        let label = value
            .get("db_id")
            .and_then(|v| v.as_str())
            .map_or_else(|| format!("#{i}"), |s| s.to_string());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            record: label.clone(),
            message,
        };
        let record: SchemaRecord =
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        let schema = record.into_schema().map_err(parse_err)?;
        schema.validate()?;
        if out.contains_key(&schema.db_id) {
            return Err(Error::Validation(format!("duplicate db_id {}", schema.db_id)));
        }
        out.insert(schema.db_id.clone(), schema);
    }
    Ok(out)
}

pub fn write_schemas(path: &Path, schemas: &SchemaMap) -> Result<()> {
    let records: Vec<SchemaRecord> = schemas.values().map(SchemaRecord::from).collect();
    write_json(path, &records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub turn_index: usize,
    pub tokens: Vec<String>,
}

/// Lowercases and splits on whitespace and punctuation; decimal numbers
/// stay single tokens.
pub fn tokenize_utterance(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?|[^\W\d_]+|\S").unwrap());
    let lower = text.to_lowercase();
    re.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub utterance: Utterance,
    pub query: SqlTokenSeq,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub interaction_id: String,
    pub db_id: String,
    pub turns: Vec<Turn>,
    pub final_goal: Option<String>,
}

impl Interaction {
    pub fn validate(&self, schemas: &SchemaMap) -> Result<()> {
        if !schemas.contains_key(&self.db_id) {
            return Err(Error::Validation(format!(
                "interaction {} references unknown db_id {}",
                self.interaction_id, self.db_id
            )));
        }
        if self.turns.is_empty() {
            return Err(Error::Validation(format!(
                "interaction {} has no turns",
                self.interaction_id
            )));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.utterance.turn_index != i + 1 {
                return Err(Error::Validation(format!(
                    "interaction {} turn {} has index {}",
                    self.interaction_id,
                    i + 1,
                    t.utterance.turn_index
                )));
            }
            if t.utterance.tokens.is_empty() {
                return Err(Error::Validation(format!(
                    "interaction {} turn {} has an empty utterance",
                    self.interaction_id,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub utterance: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction_id: Option<String>,
    pub database_id: String,
    pub interaction: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#final: Option<FinalRecord>,
}

impl InteractionRecord {
    pub fn from_interaction(interaction: &Interaction, schema: &Schema) -> Self {
        InteractionRecord {
            interaction_id: Some(interaction.interaction_id.clone()),
            database_id: interaction.db_id.clone(),
            interaction: interaction
                .turns
                .iter()
                .map(|t| TurnRecord {
                    utterance: t.utterance.tokens.join(" "),
                    query: t.query.render(schema),
                })
                .collect(),
            r#final: interaction.final_goal.as_ref().map(|g| FinalRecord {
                utterance: g.clone(),
                query: None,
            }),
        }
    }
}

pub fn parse_interaction(
    record: InteractionRecord,
    index: usize,
    schemas: &SchemaMap,
) -> Result<Interaction> {
    let interaction_id = record
        .interaction_id
        .clone()
        .unwrap_or_else(|| format!("{}/{index}", record.database_id));
    let schema = schemas.get(&record.database_id).ok_or_else(|| {
        Error::Validation(format!(
            "interaction {interaction_id} references unknown db_id {}",
            record.database_id
        ))
    })?;
    let mut turns = Vec::with_capacity(record.interaction.len());
    for (i, t) in record.interaction.iter().enumerate() {
        let query = sql::tokenize_sql(&t.query, schema).map_err(|source| Error::GoldQuery {
            interaction_id: interaction_id.clone(),
            turn_index: i + 1,
            source,
        })?;
        turns.push(Turn {
            utterance: Utterance {
                turn_index: i + 1,
                tokens: tokenize_utterance(&t.utterance),
            },
            query,
        });
    }
    let interaction = Interaction {
        interaction_id,
        db_id: record.database_id,
        turns,
        final_goal: record.r#final.map(|f| f.utterance),
    };
    interaction.validate(schemas)?;
    Ok(interaction)
}

pub fn load_interactions(path: &Path, schemas: &SchemaMap) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (i, value) in records(path)?.into_iter().enumerate() {
        let record: InteractionRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: format!("#{i}"),
            message: e.to_string(),
        })?;
        out.push(parse_interaction(record, i, schemas)?);
    }
    Ok(out)
}

pub fn write_interactions(
    path: &Path,
    interactions: &[Interaction],
    schemas: &SchemaMap,
) -> Result<()> {
    let mut records = Vec::with_capacity(interactions.len());
    for it in interactions {
        let schema = schemas.get(&it.db_id).ok_or_else(|| {
            Error::Validation(format!("unknown db_id {} while writing", it.db_id))
        })?;
        records.push(InteractionRecord::from_interaction(it, schema));
    }
    write_json(path, &records)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits must not share databases.
pub fn check_disjoint_databases(splits: &[&[Interaction]]) -> Result<()> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (s, split) in splits.iter().enumerate() {
        for it in split.iter() {
            if let Some(&other) = owner.get(it.db_id.as_str()) {
                if other != s {
                    return Err(Error::Validation(format!(
                        "database {} appears in splits {other} and {s}",
                        it.db_id
                    )));
                }
            }
            owner.insert(&it.db_id, s);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_interactions: usize,
    pub num_questions: usize,
    pub num_databases: usize,
    pub avg_turns: f64,
    pub avg_question_length: f64,
    pub question_vocab_size: usize,
    /// Percentage of gold queries containing each component.
    pub clause_frequencies: BTreeMap<String, f64>,
    /// Gold queries the clause decomposer rejected; they count toward the
    /// denominator but contribute no components.
    pub undecomposable_queries: usize,
}

pub fn corpus_stats(interactions: &[Interaction]) -> CorpusStats {
    let num_interactions = interactions.len();
    let num_questions: usize = interactions.iter().map(|i| i.turns.len()).sum();
    let mut vocab = BTreeSet::new();
    let mut total_len = 0usize;
    let mut counts: BTreeMap<Component, usize> = Component::ALL.iter().map(|c| (*c, 0)).collect();
    let mut undecomposable = 0;
    for turn in interactions.iter().flat_map(|i| &i.turns) {
        total_len += turn.utterance.tokens.len();
        vocab.extend(turn.utterance.tokens.iter().map(String::as_str));
        match sql::decompose(&turn.query) {
            Ok(clauses) => {
                for c in sql::component_flags(&clauses) {
                    *counts.get_mut(&c).unwrap() += 1;
                }
            }
            Err(_) => undecomposable += 1,
        }
    }
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    CorpusStats {
        num_interactions,
        num_questions,
        num_databases: interactions
            .iter()
            .map(|i| i.db_id.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        avg_turns: ratio(num_questions as f64, num_interactions),
        avg_question_length: ratio(total_len as f64, num_questions),
        question_vocab_size: vocab.len(),
        clause_frequencies: counts
            .into_iter()
            .map(|(c, n)| (c.name().to_string(), 100.0 * ratio(n as f64, num_questions)))
            .collect(),
        undecomposable_queries: undecomposable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn column_header_concatenation() {
        assert_eq!(
            build_column_header(&words(&["dorm"]), &words(&["dormid"])).unwrap(),
            words(&["dorm", ".", "dormid"])
        );
        assert_eq!(
            build_column_header(&words(&["dorm", "amenity"]), &words(&["amenity", "name"]))
                .unwrap(),
            words(&["dorm", "amenity", ".", "amenity", "name"])
        );
        assert_eq!(ColumnHeader::star().words, words(&["*"]));
        assert!(build_column_header(&words(&["dorm"]), &[]).is_err());
    }

    #[test]
    fn identifiers_split_on_underscores() {
        assert_eq!(split_identifier("stu_fname"), words(&["stu", "fname"]));
        assert_eq!(split_identifier("Amenity_Name"), words(&["amenity", "name"]));
    }

    #[test]
    fn utterance_tokenization() {
        assert_eq!(
            tokenize_utterance("How many dorms have a TV Lounge?"),
            words(&["how", "many", "dorms", "have", "a", "tv", "lounge", "?"])
        );
        assert_eq!(
            tokenize_utterance("price above 3.5, please"),
            words(&["price", "above", "3.5", ",", "please"])
        );
    }

    fn tmp_json(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn synthetic_star_is_added() {
        let f = tmp_json(
            r#"[{"db_id": "one", "table_names_original": ["t"],
                 "column_names_original": [[0, "a"], [0, "b_c"]],
                 "foreign_keys": []}]"#,
        );
        let schemas = load_schemas(f.path()).unwrap();
        let s = &schemas["one"];
        assert_eq!(s.num_columns(), 3);
        assert!(s.columns[0].is_star);
        assert_eq!(s.columns[2].words, words(&["t", ".", "b", "c"]));
    }

    #[test]
    fn existing_star_is_not_duplicated_and_keys_keep_ids() {
        let f = tmp_json(
            r#"[{"db_id": "two", "table_names_original": ["t", "u"],
                 "column_names_original": [[-1, "*"], [0, "a"], [1, "a"]],
                 "foreign_keys": [[2, 1]]}]"#,
        );
        let s = &load_schemas(f.path()).unwrap()["two"];
        assert_eq!(s.num_columns(), 3);
        assert_eq!(s.foreign_keys, vec![(2, 1)]);
    }

    #[test]
    fn schema_errors() {
        let dup = tmp_json(
            r#"[{"db_id": "x", "table_names_original": ["t"], "column_names_original": [[0, "a"]]},
                {"db_id": "x", "table_names_original": ["t"], "column_names_original": [[0, "a"]]}]"#,
        );
        assert!(matches!(load_schemas(dup.path()), Err(Error::Validation(_))));
        let bad = tmp_json(
            r#"[{"db_id": "bad", "table_names_original": ["t"], "column_names_original": [[3, "a"]]}]"#,
        );
        match load_schemas(bad.path()) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, "bad"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let s = corpus_stats(&[]);
        assert_eq!(s.num_interactions, 0);
        assert_eq!(s.avg_turns, 0.0);
        assert!(s.clause_frequencies.values().all(|v| *v == 0.0));
    }
}
