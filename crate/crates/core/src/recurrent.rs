//! LSTM cells on the autodiff tape.

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Gate order in the stacked weight matrix: input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    /// `4h × (n + h)`
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn register(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Self {
        Lstm {
            input,
            hidden,
            w: store.add(format!("{name}.w"), 4 * hidden, input + hidden),
            b: store.add(format!("{name}.b"), 4 * hidden, 1),
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        LstmState {
            h: g.zeros(self.hidden),
            c: g.zeros(self.hidden),
        }
    }

    pub fn step(&self, g: &mut Graph, x: Var, state: LstmState) -> LstmState {
        let h = self.hidden;
        let xh = g.concat(&[x, state.h]);
        let z = g.linear(self.w, self.b, xh);
        let zi = g.slice(z, 0, h);
        let zf = g.slice(z, h, h);
        let zg = g.slice(z, 2 * h, h);
        let zo = g.slice(z, 3 * h, h);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }

    /// Hidden states over `xs` from a zero state, in input order.
    pub fn run(&self, g: &mut Graph, xs: &[Var], reverse: bool) -> Vec<Var> {
        let mut state = self.zero_state(g);
        let mut out = vec![state.h; xs.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..xs.len()).rev())
        } else {
            Box::new(0..xs.len())
        };
        for t in order {
            state = self.step(g, xs[t], state);
            out[t] = state.h;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

/// Per-position `[forward; backward]` states plus the summary
/// `[last forward; first backward]`.
#[derive(Debug, Clone)]
pub struct BiOutput {
    pub states: Vec<Var>,
    pub summary: Var,
}

impl BiLstm {
    pub fn register(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Self {
        BiLstm {
            fwd: Lstm::register(store, &format!("{name}.fwd"), input, hidden),
            bwd: Lstm::register(store, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn run(&self, g: &mut Graph, xs: &[Var]) -> BiOutput {
        assert!(!xs.is_empty());
        let f = self.fwd.run(g, xs, false);
        let b = self.bwd.run(g, xs, true);
        let states = f.iter().zip(&b).map(|(a, c)| g.concat(&[*a, *c])).collect();
        let summary = g.concat(&[*f.last().unwrap(), b[0]]);
        BiOutput { states, summary }
    }
}
