//! A small generated corpus over two toy databases. Every interaction
//! starts from a filtered two-column selection and then edits it one
//! clause at a time, so consecutive gold queries overlap heavily.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_interaction, Interaction, InteractionRecord, SchemaMap, SchemaRecord, TurnRecord};
use crate::edit_ops::diff;
use crate::error::Result;

const COMPANY: &str = r#"{"db_id": "company",
  "table_names_original": ["employee", "department"],
  "column_names_original": [[0, "id"], [0, "name"], [0, "age"], [0, "salary"], [0, "city"],
                            [1, "id"], [1, "title"], [1, "budget"], [1, "floor"], [1, "size"]],
  "foreign_keys": []}"#;

const STORE: &str = r#"{"db_id": "store",
  "table_names_original": ["product", "customer"],
  "column_names_original": [[0, "id"], [0, "name"], [0, "price"], [0, "stock"], [0, "brand"],
                            [1, "id"], [1, "name"], [1, "age"], [1, "city"], [1, "points"]],
  "foreign_keys": []}"#;

/// `(table, columns)` per database, ids excluded.
const TABLES: &[(&str, &str, &[&str])] = &[
    ("company", "employee", &["name", "age", "salary", "city"]),
    ("company", "department", &["title", "budget", "floor", "size"]),
    ("store", "product", &["name", "price", "stock", "brand"]),
    ("store", "customer", &["name", "age", "city", "points"]),
];

const OPS: &[(&str, &str)] = &[(">", "above"), ("<", "below"), ("=", "exactly")];
const NUMBERS: &[&str] = &["10", "20", "50", "100"];
const LIMIT_WORDS: &[(&str, &str)] = &[("1", "one"), ("2", "two"), ("3", "three"), ("5", "five")];

pub fn synthetic_schemas() -> SchemaMap {
    [COMPANY, STORE]
        .iter()
        .map(|text| {
            let record: SchemaRecord = serde_json::from_str(text).expect("static schema");
            let schema = record.into_schema().expect("static schema");
            (schema.db_id.clone(), schema)
        })
        .collect()
}

#[derive(Debug, Clone)]
struct QueryState {
    table: &'static str,
    select: [&'static str; 2],
    filter: (&'static str, usize, &'static str),
    order: Option<(&'static str, bool)>,
    limit: Option<usize>,
}

impl QueryState {
    fn sql(&self) -> String {
        let t = self.table;
        let (col, op, num) = self.filter;
        let mut s = format!(
            "SELECT {t}.{} , {t}.{} FROM {t} WHERE {t}.{col} {} {num}",
            self.select[0], self.select[1], OPS[op].0
        );
        if let Some((c, desc)) = self.order {
            s.push_str(&format!(" ORDER BY {t}.{c} {}", if desc { "DESC" } else { "ASC" }));
        }
        if let Some(k) = self.limit {
            s.push_str(&format!(" LIMIT {}", LIMIT_WORDS[k].0));
        }
        s
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).unwrap()
}

fn generate_record(rng: &mut ChaCha8Rng, index: usize) -> InteractionRecord {
    let &(db, table, cols) = pick(rng, TABLES);
    let mut shuffled = cols.to_vec();
    shuffled.shuffle(rng);
    let filter_col = *pick(rng, cols);
    let op = rng.gen_range(0..OPS.len());
    let num = *pick(rng, NUMBERS);
    let mut state = QueryState {
        table,
        select: [shuffled[0], shuffled[1]],
        filter: (filter_col, op, num),
        order: None,
        limit: None,
    };
    let mut turns = vec![TurnRecord {
        utterance: format!(
            "show the {} and {} of each {table} whose {filter_col} is {} {num}",
            state.select[0], state.select[1], OPS[op].1
        ),
        query: state.sql(),
    }];
    let n_turns = rng.gen_range(2..=4);
    while turns.len() < n_turns {
        let utterance = match rng.gen_range(0..5) {
            0 => {
                let others: Vec<&str> = cols.iter().copied().filter(|c| !state.select.contains(c)).collect();
                let new = *pick(rng, &others);
                let old = state.select[1];
                state.select[1] = new;
                format!("show {new} instead of {old}")
            }
            1 => {
                let op = (state.filter.1 + rng.gen_range(1..OPS.len())) % OPS.len();
                let num = *pick(rng, NUMBERS);
                state.filter = (state.filter.0, op, num);
                format!("what about {} {num}", OPS[op].1)
            }
            2 | 3 if state.order.is_none() => {
                let c = *pick(rng, cols);
                let desc = rng.gen_bool(0.5);
                state.order = Some((c, desc));
                format!("sort them by {c} {}", if desc { "descending" } else { "ascending" })
            }
            _ if state.order.is_some() && state.limit.is_none() => {
                let k = rng.gen_range(0..LIMIT_WORDS.len());
                state.limit = Some(k);
                format!("only the top {}", LIMIT_WORDS[k].1)
            }
            _ if state.order.is_some() => {
                let (c, desc) = state.order.unwrap();
                state.order = Some((c, !desc));
                "reverse the order".to_string()
            }
            _ => continue,
        };
        turns.push(TurnRecord {
            utterance,
            query: state.sql(),
        });
    }
    InteractionRecord {
        interaction_id: Some(format!("synthetic/{index}")),
        database_id: db.to_string(),
        interaction: turns,
        r#final: None,
    }
}

/// `count` interactions drawn with `seed`.
pub fn synthetic_interactions(schemas: &SchemaMap, count: usize, seed: u64) -> Result<Vec<Interaction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| parse_interaction(generate_record(&mut rng, i), i, schemas))
        .collect()
}

/// Smallest fraction, over consecutive gold pairs, of the current query's
/// tokens that the diff copies from the previous one.
pub fn min_consecutive_overlap(interactions: &[Interaction]) -> f64 {
    let mut min = 1.0f64;
    for it in interactions {
        for w in it.turns.windows(2) {
            let script = diff(&w[0].query, &w[1].query);
            let longest = w[0].query.len().max(w[1].query.len());
            min = min.min(script.copied_tokens() as f64 / longest as f64);
        }
    }
    min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;
    use std::collections::BTreeSet;

    #[test]
    fn corpus_shape() {
        let schemas = synthetic_schemas();
        let train = synthetic_interactions(&schemas, 20, 1).unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(schemas.len(), 2);
        assert!(train.iter().all(|it| (2..=4).contains(&it.turns.len())));
        let stats = corpus_stats(&train);
        assert_eq!(stats.undecomposable_queries, 0);
        let vocab: BTreeSet<&String> = train.iter().flat_map(|i| &i.turns).flat_map(|t| &t.utterance.tokens).collect();
        assert!(vocab.len() <= 60, "{}", vocab.len());
        assert!(min_consecutive_overlap(&train) >= 0.7);
        assert_eq!(train, synthetic_interactions(&schemas, 20, 1).unwrap());
    }
}
