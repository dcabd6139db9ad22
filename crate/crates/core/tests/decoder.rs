use proptest::prelude::*;
use sqledit::autodiff::Graph;
use sqledit::decoder::{edit_distribution, encode_prev_query, DecoderContext, OutputSpace, PrevQuery};
use sqledit::model::{Model, ModelConfig};
use sqledit::sql::SqlToken;

fn model(bias: f64) -> Model {
    let mut m = Model::new(
        ModelConfig {
            embedding_dim: 3,
            hidden_size: 2,
            ..ModelConfig::default()
        },
        0.5,
        7,
    );
    let id = m.decoder.b_copy;
    m.store.get_mut(id)[0] = bias;
    m
}

fn token(space: &OutputSpace, code: usize) -> SqlToken {
    // Skip BOS so every token is one the decoder can emit.
    space.token(1 + code % (space.len() - 1))
}

/// `(aggregated, base, p_copy, prev_probs, positions)` for one step.
fn mixture(m: &Model, prev: &[usize], seed: &[f64]) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let space = OutputSpace { columns: 4, tables: 2 };
    let d = m.state_dim();
    let mut g = Graph::new(&m.store);
    let mut it = seed.iter().cycle();
    let mut vec = |n: usize, g: &mut Graph| g.input((0..n).map(|_| *it.next().unwrap()).collect());
    let ctx = DecoderContext {
        space,
        columns: (0..4).map(|_| vec(d, &mut g)).collect(),
        tables: (0..2).map(|_| vec(d, &mut g)).collect(),
        utterance_tokens: vec![vec(d, &mut g)],
        prev: None,
    };
    let tokens: Vec<SqlToken> = prev.iter().map(|&c| token(&space, c)).collect();
    let states = encode_prev_query(&mut g, &m.decoder, &ctx, &tokens).unwrap();
    let prev = PrevQuery { tokens, states };
    let o = vec(d, &mut g);
    let c = vec(3 * d, &mut g);
    let logits = vec(space.len(), &mut g);
    let base = g.softmax(logits);
    let e = edit_distribution(&mut g, &m.decoder, o, c, &prev, base, &space).unwrap();
    (
        g.value(e.aggregated).to_vec(),
        g.value(base).to_vec(),
        g.scalar(e.p_copy),
        g.value(e.prev_probs).to_vec(),
        g.value(e.positions).to_vec(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn edit_distributions_are_normalized(
        prev in proptest::collection::vec(0usize..64, 1..8),
        seed in proptest::collection::vec(-3.0f64..3.0, 5..40),
        bias in -4.0f64..4.0,
    ) {
        let (agg, _, p, prev_probs, positions) = mixture(&model(bias), &prev, &seed);
        prop_assert!((0.0..=1.0).contains(&p));
        for dist in [&agg, &prev_probs, &positions] {
            prop_assert!(dist.iter().all(|x| *x >= 0.0));
            prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert_eq!(prev_probs.len(), prev.len());
        prop_assert_eq!(positions.len(), agg.len() + prev.len());
    }
}

#[test]
fn vanishing_copy_probability_recovers_the_base_distribution() {
    let seed = [0.3, -0.7, 1.1, 0.05, -1.9, 0.6, 0.2];
    let (agg, base, p, _, _) = mixture(&model(-800.0), &[1, 5, 5, 9], &seed);
    assert!(p < 1e-300);
    for (a, b) in agg.iter().zip(&base) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn saturated_copy_probability_puts_all_mass_on_previous_tokens() {
    let seed = [0.3, -0.7, 1.1, 0.05, -1.9, 0.6, 0.2];
    let prev = [1, 5, 5, 9];
    let (agg, _, p, prev_probs, _) = mixture(&model(800.0), &prev, &seed);
    assert_eq!(p, 1.0);
    let space = OutputSpace { columns: 4, tables: 2 };
    let idx: Vec<usize> = prev.iter().map(|&c| space.index(token(&space, c)).unwrap()).collect();
    let outside: f64 = agg.iter().enumerate().filter(|(i, _)| !idx.contains(i)).map(|(_, x)| x).sum();
    assert!(outside < 1e-12);
    // Token 5 appears twice: its mass is the sum of both positions.
    let five = space.index(token(&space, 5)).unwrap();
    assert!((agg[five] - (prev_probs[1] + prev_probs[2])).abs() < 1e-12);
}
