//! Interaction-level state and turn attention.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::recurrent::{Lstm, LstmState};
use crate::sql::SqlTokenSeq;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionParams {
    pub cell: Lstm,
    /// Bilinear turn-attention matrix, `d × d`.
    pub w_turn: ParamId,
}

impl InteractionParams {
    /// `d` is the utterance-encoding dimension (twice the encoder hidden size).
    pub fn register(store: &mut ParamStore, d: usize) -> Self {
        InteractionParams {
            cell: Lstm::register(store, "interaction.cell", d, d),
            w_turn: store.add("interaction.w_turn", d, d),
        }
    }
}

/// Discourse state after some number of completed turns. Advancing
/// returns a new value.
#[derive(Debug, Clone)]
pub struct InteractionState {
    pub h_i: Var,
    pub c_i: Var,
    pub history_utterances: Vec<Var>,
    pub history_token_states: Vec<Vec<Var>>,
    pub history_queries: Vec<SqlTokenSeq>,
}

impl InteractionState {
    pub fn initial(g: &mut Graph, params: &InteractionParams) -> Self {
        let LstmState { h, c } = params.cell.zero_state(g);
        InteractionState {
            h_i: h,
            c_i: c,
            history_utterances: Vec::new(),
            history_token_states: Vec::new(),
            history_queries: Vec::new(),
        }
    }

    pub fn turns(&self) -> usize {
        self.history_utterances.len()
    }

    pub fn advance(
        &self,
        g: &mut Graph,
        params: &InteractionParams,
        h_u: Var,
        token_states: Vec<Var>,
        query: SqlTokenSeq,
    ) -> Result<InteractionState> {
        if g.dim(h_u) != params.cell.input {
            return Err(Error::Dimension {
                expected: params.cell.input,
                actual: g.dim(h_u),
                context: "interaction cell input",
            });
        }
        let next = params.cell.step(
            g,
            h_u,
            LstmState {
                h: self.h_i,
                c: self.c_i,
            },
        );
        let mut out = self.clone();
        out.h_i = next.h;
        out.c_i = next.c;
        out.history_utterances.push(h_u);
        out.history_token_states.push(token_states);
        out.history_queries.push(query);
        Ok(out)
    }

    /// The last `window` turns, or all of them.
    pub fn recent_utterances(&self, window: Option<usize>) -> &[Var] {
        let n = self.history_utterances.len();
        &self.history_utterances[n - window.unwrap_or(n).min(n)..]
    }

    pub fn recent_token_states(&self, window: Option<usize>) -> &[Vec<Var>] {
        let n = self.history_token_states.len();
        &self.history_token_states[n - window.unwrap_or(n).min(n)..]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TurnAttention {
    pub c_turn: Var,
    /// Softmax over previous turns; `None` at the first turn.
    pub weights: Option<Var>,
}

/// `c_turn = h_U + Σ_i α_i h_U_i` with `α = softmax(h_U W h_U_i)`.
pub fn turn_attention(g: &mut Graph, params: &InteractionParams, h_u: Var, history: &[Var]) -> TurnAttention {
    if history.is_empty() {
        return TurnAttention {
            c_turn: h_u,
            weights: None,
        };
    }
    let query = g.mattvec(params.w_turn, h_u);
    let scores = g.scores(query, history);
    let alpha = g.softmax(scores);
    let context = g.weighted_sum(alpha, history);
    TurnAttention {
        c_turn: g.add(h_u, context),
        weights: Some(alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamStore, InteractionParams) {
        let mut store = ParamStore::new();
        let p = InteractionParams::register(&mut store, 4);
        store.init_uniform(0.1, 3);
        (store, p)
    }

    #[test]
    fn advancing_grows_history_and_keeps_the_argument() {
        let (store, p) = setup();
        let mut g = Graph::new(&store);
        let s0 = InteractionState::initial(&mut g, &p);
        assert!(g.value(s0.h_i).iter().all(|x| *x == 0.0));
        let q = SqlTokenSeq::empty("d");
        let u: Vec<Var> = (0..3).map(|i| g.input(vec![0.1 * (i + 1) as f64; 4])).collect();
        let s1 = s0.advance(&mut g, &p, u[0], vec![u[0]], q.clone()).unwrap();
        assert_eq!(s0.turns(), 0);
        assert_eq!(s1.turns(), 1);
        let s2 = s1.advance(&mut g, &p, u[1], vec![u[1]], q.clone()).unwrap();
        let s3 = s2.advance(&mut g, &p, u[2], vec![u[2]], q.clone()).unwrap();
        assert_eq!(s3.turns(), 3);
        assert_eq!(s3.history_queries.len(), 3);
        assert_ne!(g.value(s3.h_i), g.value(s2.h_i));
        let replay = s2.advance(&mut g, &p, u[2], vec![u[2]], q.clone()).unwrap();
        assert_eq!(g.value(replay.h_i), g.value(s3.h_i));
        let bad = g.input(vec![0.0; 3]);
        assert!(s0.advance(&mut g, &p, bad, vec![], q).is_err());
        assert_eq!(s3.recent_utterances(Some(2)), &s3.history_utterances[1..]);
    }

    #[test]
    fn turn_attention_cases() {
        let (store, p) = setup();
        let mut g = Graph::new(&store);
        let h = g.input(vec![0.3, -0.1, 0.2, 0.5]);
        let first = turn_attention(&mut g, &p, h, &[]);
        assert_eq!(first.c_turn, h);

        let v = vec![0.2, 0.4, -0.6, 0.1];
        let same: Vec<Var> = (0..3).map(|_| g.input(v.clone())).collect();
        let t = turn_attention(&mut g, &p, h, &same);
        for (i, x) in g.value(t.c_turn).iter().enumerate() {
            assert!((x - (g.value(h)[i] + v[i])).abs() < 1e-12);
        }

        let a = g.input(vec![1.0, 0.0, 0.0, 0.0]);
        let b = g.input(vec![0.0, -2.0, 1.0, 0.0]);
        let t = turn_attention(&mut g, &p, h, &[a, b]);
        let w = g.value(t.weights.unwrap());
        assert_eq!(w.len(), 2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
