#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqledit::corpus::{load_interactions, load_schemas, Interaction, Schema, SchemaMap, SchemaRecord};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn dorm_schemas() -> SchemaMap {
    load_schemas(&data_path("dorm_tables.json")).unwrap()
}

pub fn dorm() -> Schema {
    dorm_schemas().remove("dorm_1").unwrap()
}

pub fn dorm_interaction() -> Interaction {
    load_interactions(&data_path("dorm_interaction.json"), &dorm_schemas())
        .unwrap()
        .remove(0)
}

pub fn dorm_queries() -> Vec<String> {
    let text = std::fs::read_to_string(data_path("dorm_interaction.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v[0]["interaction"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["query"].as_str().unwrap().to_string())
        .collect()
}

/// `t(a, b, c, d)` and `u(e, f, g)`; `u.e` references `t.a`.
pub fn toy_schema() -> Schema {
    let record: SchemaRecord = serde_json::from_str(
        r#"{"db_id": "toy", "table_names_original": ["t", "u"],
            "column_names_original": [[0, "a"], [0, "b"], [0, "c"], [0, "d"],
                                      [1, "e"], [1, "f"], [1, "g"]],
            "foreign_keys": [[4, 0]]}"#,
    )
    .unwrap();
    let s = record.into_schema().unwrap();
    s.validate().unwrap();
    s
}

const SELECT_POOL: &[&str] = &[
    "{t}.a",
    "{t}.b",
    "count(*)",
    "max({t}.c)",
    "{u}.f",
    "avg({u}.g)",
    "count(DISTINCT {t}.d)",
];
const COND_POOL: &[&str] = &[
    "{t}.b = {lit}",
    "{t}.c > {lit}",
    "{t}.d != {lit}",
    "{u}.f LIKE {lit}",
    "{u}.g <= {lit}",
    "{t}.a IN (SELECT e FROM u WHERE g = {lit})",
];
const ALIASES: &[(&str, &str)] = &[("T1", "T2"), ("T2", "T1"), ("A", "B"), ("x", "y")];
const LITERALS: &[&str] = &["'A'", "'B b'", "3", "4.5", "\"q\"", "1000"];

fn render(
    items: &[&str],
    conds: &[&str],
    join: bool,
    swap_join: bool,
    aliases: (&str, &str),
    lits: &mut dyn Iterator<Item = &'static str>,
) -> String {
    let (t, u) = aliases;
    let fill = |s: &str, lit: &str| s.replace("{t}", t).replace("{u}", u).replace("{lit}", lit);
    let select: Vec<String> = items.iter().map(|s| fill(s, "")).collect();
    let from = match (join, swap_join) {
        (false, _) => format!("t AS {t}"),
        (true, false) => format!("t AS {t} JOIN u AS {u} ON {t}.a = {u}.e"),
        (true, true) => format!("u AS {u} JOIN t AS {t} ON {u}.e = {t}.a"),
    };
    let mut sql = format!("SELECT {} FROM {from}", select.join(" , "));
    if !conds.is_empty() {
        let cs: Vec<String> = conds.iter().map(|c| fill(c, lits.next().unwrap())).collect();
        sql.push_str(" WHERE ");
        sql.push_str(&cs.join(" AND "));
    }
    sql
}

/// Two spellings of the same query: select items and WHERE conjuncts
/// permuted, join order and alias names changed, literals replaced.
pub fn random_query_pair() -> impl Strategy<Value = (String, String)> {
    (
        any::<bool>(),
        proptest::sample::subsequence(SELECT_POOL, 1..=3),
        proptest::sample::subsequence(COND_POOL, 0..=3),
        any::<u64>(),
        0..ALIASES.len(),
        0..ALIASES.len(),
        any::<bool>(),
    )
        .prop_map(|(join, items, conds, seed, a1, a2, swap)| {
            let keep = |s: &&&str| join || !s.contains("{u}");
            let mut items: Vec<&str> = items.iter().filter(keep).copied().collect();
            if items.is_empty() {
                items.push("count(*)");
            }
            let mut conds: Vec<&str> = conds.iter().filter(keep).copied().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lits1 = (0..8).map(|_| *LITERALS.choose(&mut rng).unwrap()).collect::<Vec<_>>().into_iter();
            let mut lits2 = (0..8).map(|_| *LITERALS.choose(&mut rng).unwrap()).collect::<Vec<_>>().into_iter();
            let first = render(&items, &conds, join, false, ALIASES[a1], &mut lits1);
            items.shuffle(&mut rng);
            conds.shuffle(&mut rng);
            let second = render(&items, &conds, join, swap, ALIASES[a2], &mut lits2);
            (first, second)
        })
}
