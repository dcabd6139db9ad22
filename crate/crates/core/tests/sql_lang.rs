mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use sqledit::sql::{
    component_flags, decompose, exact_set_match, interaction_match, question_match, tokenize_sql,
    Component, Connective, SqlToken, SqlTokenSeq, TokenKind,
};
use sqledit::SqlError;

use common::{dorm, dorm_queries, random_query_pair, toy_schema};

#[test]
fn s1_tokens() {
    let schema = dorm();
    let q = tokenize_sql(&dorm_queries()[0], &schema).unwrap();
    let kinds: Vec<TokenKind> = q.tokens.iter().map(|t| t.kind()).collect();
    assert_eq!(
        &q.tokens[..6],
        &[
            SqlToken::kw("SELECT"),
            SqlToken::kw("COUNT"),
            SqlToken::kw("("),
            SqlToken::Column(0),
            SqlToken::kw(")"),
            SqlToken::kw("FROM"),
        ]
    );
    assert_eq!(q.tokens.len(), 23);
    assert_eq!(*kinds.last().unwrap(), TokenKind::Value);
    // T3.amenity_name resolves through `dorm_amenity AS T3`
    assert_eq!(q.tokens[20], SqlToken::Column(14));
    assert_eq!(
        q.render(&schema),
        "SELECT COUNT ( * ) FROM dorm JOIN has_amenity ON dorm.dormid = has_amenity.dormid \
         JOIN dorm_amenity ON has_amenity.amenid = dorm_amenity.amenid \
         WHERE dorm_amenity.amenity_name = 'value'"
    );
}

#[test]
fn select_star_is_four_tokens() {
    let q = tokenize_sql("SELECT * FROM dorm", &dorm()).unwrap();
    assert_eq!(q.len(), 4);
    let columns = q.tokens.iter().filter(|t| t.kind() == TokenKind::Column).count();
    assert_eq!(columns, 1);
    assert_eq!(q.tokens[1], SqlToken::Column(0));
}

#[test]
fn tokenizer_errors() {
    let s = dorm();
    assert_eq!(
        tokenize_sql("SELECT T1.nope FROM dorm AS T1", &s),
        Err(SqlError::UnknownColumn("T1.nope".into()))
    );
    assert!(matches!(
        tokenize_sql("SELECT dormid FROM dorm WHERE dorm_name = 'x", &s),
        Err(SqlError::UnbalancedQuote(_))
    ));
    assert_eq!(
        tokenize_sql("SELECT COUNT(* FROM dorm", &s),
        Err(SqlError::UnbalancedParens)
    );
}

#[test]
fn nested_aliases_are_scoped() {
    let s = dorm();
    // T1 names different tables in the outer and inner query
    let q = tokenize_sql(
        "SELECT T1.fname FROM student AS T1 WHERE T1.stuid IN (SELECT T1.stuid FROM lives_in AS T1)",
        &s,
    )
    .unwrap();
    assert_eq!(q.tokens[1], SqlToken::Column(3));
    assert_eq!(q.tokens[5], SqlToken::Column(1));
    assert_eq!(q.tokens[9], SqlToken::Column(17));
}

#[test]
fn limit_numbers_are_keywords() {
    let s = dorm();
    let q = tokenize_sql("SELECT dorm_name FROM dorm ORDER BY student_capacity DESC LIMIT 1", &s)
        .unwrap();
    assert_eq!(*q.tokens.last().unwrap(), SqlToken::kw("1"));
    let q = tokenize_sql("SELECT dorm_name FROM dorm WHERE student_capacity > 100", &s).unwrap();
    assert_eq!(*q.tokens.last().unwrap(), SqlToken::Value);
}

#[test]
fn s1_decomposition() {
    let schema = dorm();
    let q = tokenize_sql(&dorm_queries()[0], &schema).unwrap();
    let c = decompose(&q).unwrap();
    assert_eq!(c.select_items, vec!["count(*)"]);
    assert_eq!(c.from_tables, vec!["@1", "@2", "@3"]);
    assert_eq!(c.where_conjuncts, vec![(Connective::And, "#14 = value".to_string())]);
    assert_eq!(
        component_flags(&c),
        BTreeSet::from([Component::Where, Component::Agg, Component::Join])
    );
}

#[test]
fn s3_nested_subquery() {
    let schema = dorm();
    let q = tokenize_sql(&dorm_queries()[2], &schema).unwrap();
    let c = decompose(&q).unwrap();
    assert_eq!(c.where_conjuncts.len(), 1);
    let cond = &c.where_conjuncts[0].1;
    assert!(cond.starts_with("#18 in {select [#15] from [@2 , @3] where"), "{cond}");
    assert!(component_flags(&c).contains(&Component::Nested));
}

#[test]
fn simple_select_items_and_flags() {
    let s = toy_schema();
    let q = tokenize_sql("SELECT a , b FROM t", &s).unwrap();
    let c = decompose(&q).unwrap();
    assert_eq!(c.select_items, vec!["#1", "#2"]);
    let q = tokenize_sql("SELECT a FROM t", &s).unwrap();
    assert!(component_flags(&decompose(&q).unwrap()).is_empty());
}

fn matches(a: &str, b: &str) -> bool {
    let s = toy_schema();
    let a = decompose(&tokenize_sql(a, &s).unwrap()).unwrap();
    let b = decompose(&tokenize_sql(b, &s).unwrap()).unwrap();
    exact_set_match(&a, &b)
}

#[test]
fn exact_set_match_examples() {
    assert!(matches("SELECT a , b FROM t", "SELECT a , b FROM t"));
    assert!(matches("SELECT a , b FROM t", "SELECT b , a FROM t"));
    assert!(matches("SELECT a FROM t WHERE b = 'A'", "SELECT a FROM t WHERE b = 'B'"));
    assert!(!matches("SELECT a FROM t WHERE b = 'A'", "SELECT a FROM t WHERE b > 'A'"));
    assert!(!matches("SELECT a FROM t ORDER BY b ASC", "SELECT a FROM t ORDER BY b DESC"));
    assert!(!matches("SELECT a FROM t", "SELECT DISTINCT a FROM t"));

    let schema = dorm();
    let qs: Vec<_> = dorm_queries()
        .iter()
        .map(|q| decompose(&tokenize_sql(q, &schema).unwrap()).unwrap())
        .collect();
    assert!(!exact_set_match(&qs[0], &qs[1]));
    assert!(!exact_set_match(&qs[2], &qs[3]));
    assert!(exact_set_match(&qs[3], &qs[3]));
}

#[test]
fn malformed_sequences_do_not_decompose() {
    let bad = SqlTokenSeq::new("x", vec![SqlToken::kw("SELECT"), SqlToken::kw("FROM")]);
    assert!(decompose(&bad).is_err());
    let bad = SqlTokenSeq::new("x", vec![SqlToken::kw("SELECT"), SqlToken::Column(0)]);
    assert!(decompose(&bad).is_err());
}

#[test]
fn question_and_interaction_match() {
    let s = toy_schema();
    let q = |x: &str| tokenize_sql(x, &s).unwrap();
    let golds = vec![
        q("SELECT a FROM t"),
        q("SELECT b FROM t"),
        q("SELECT a FROM t WHERE b = 1"),
        q("SELECT count(*) FROM t"),
    ];
    assert_eq!(question_match(&golds, &golds).unwrap(), 1.0);
    let empty = vec![SqlTokenSeq::empty("toy"); 4];
    assert_eq!(question_match(&empty, &golds).unwrap(), 0.0);
    let mut three = golds.clone();
    three[1] = q("SELECT a FROM t");
    assert_eq!(question_match(&three, &golds).unwrap(), 0.75);
    assert!(question_match(&golds[..3], &golds).is_err());

    let grouped_gold = vec![golds[..2].to_vec(), golds[2..].to_vec()];
    assert_eq!(interaction_match(&grouped_gold, &grouped_gold).unwrap(), 1.0);
    let half = vec![three[..2].to_vec(), three[2..].to_vec()];
    assert_eq!(interaction_match(&half, &grouped_gold).unwrap(), 0.5);
    let none = vec![
        vec![golds[0].clone(), golds[0].clone()],
        vec![golds[0].clone(), golds[3].clone()],
    ];
    assert_eq!(interaction_match(&none, &grouped_gold).unwrap(), 0.0);
    assert!(interaction_match(&grouped_gold[..1], &grouped_gold).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reflexive_and_permutation_invariant(pair in random_query_pair()) {
        let s = toy_schema();
        let a = decompose(&tokenize_sql(&pair.0, &s).unwrap()).unwrap();
        let b = decompose(&tokenize_sql(&pair.1, &s).unwrap()).unwrap();
        prop_assert!(exact_set_match(&a, &a));
        prop_assert!(exact_set_match(&a, &b), "{} vs {}", pair.0, pair.1);
        prop_assert!(exact_set_match(&b, &a));
    }

    #[test]
    fn render_then_tokenize_is_idempotent(pair in random_query_pair()) {
        let s = toy_schema();
        let q = tokenize_sql(&pair.0, &s).unwrap();
        let again = tokenize_sql(&q.render(&s), &s).unwrap();
        prop_assert_eq!(q, again);
    }

    #[test]
    fn interaction_match_never_exceeds_question_match(
        hits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 1..5), 1..8)
    ) {
        let s = toy_schema();
        let right = tokenize_sql("SELECT a FROM t", &s).unwrap();
        let wrong = tokenize_sql("SELECT b FROM t", &s).unwrap();
        let golds: Vec<Vec<_>> = hits.iter().map(|h| vec![right.clone(); h.len()]).collect();
        let preds: Vec<Vec<_>> = hits
            .iter()
            .map(|h| h.iter().map(|ok| if *ok { right.clone() } else { wrong.clone() }).collect())
            .collect();
        let flat_p: Vec<_> = preds.concat();
        let flat_g: Vec<_> = golds.concat();
        let qm = question_match(&flat_p, &flat_g).unwrap();
        let im = interaction_match(&preds, &golds).unwrap();
        // counts: a fully correct interaction needs at least one correct question
        let correct_interactions = im * golds.len() as f64;
        let correct_questions = qm * flat_g.len() as f64;
        prop_assert!(correct_interactions <= correct_questions + 1e-9);
        // with equal interaction lengths the fractions are ordered too
        if hits.iter().all(|h| h.len() == hits[0].len()) {
            prop_assert!(im <= qm + 1e-12);
        }
    }

    #[test]
    fn literal_substitution_never_changes_match(pair in random_query_pair()) {
        let s = toy_schema();
        let q = tokenize_sql(&pair.0, &s).unwrap();
        let swapped = pair.0.replace("'A'", "'zzz'").replace('3', "7");
        let r = tokenize_sql(&swapped, &s).unwrap();
        prop_assert!(exact_set_match(&decompose(&q).unwrap(), &decompose(&r).unwrap()));
    }
}
