//! Table-aware decoder with the query-editing mechanism.
//!
//! The output space is the keyword vocabulary, then the schema columns,
//! then the schema tables. When editing, the previous query's positions
//! form a second source mixed in by the copy switch; duplicate surface
//! tokens are summed into one aggregated distribution.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::recurrent::{BiLstm, Lstm, LstmState};
use crate::sql::{Keyword, SqlToken};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderParams {
    /// Decoder hidden size; equals the encoder state dimension.
    pub d: usize,
    pub keyword_embedding: ParamId,
    pub layer1: Lstm,
    pub layer2: Lstm,
    /// Projects `[c_turn; h_I]` to the first-layer state when the
    /// interaction state conditions the decoder.
    pub w_init: Option<ParamId>,
    pub w_column_att: ParamId,
    pub w_utterance_att: ParamId,
    pub w_query_att: ParamId,
    pub w_o: ParamId,
    pub w_sql: ParamId,
    pub b_sql: ParamId,
    pub w_column: ParamId,
    /// Scores table tokens against the mean of their column states.
    pub w_table: ParamId,
    pub w_copy: ParamId,
    pub b_copy: ParamId,
    pub w_prev: ParamId,
    pub prev_query: BiLstm,
}

impl DecoderParams {
    pub fn register(store: &mut ParamStore, d: usize, use_interaction_state: bool) -> Self {
        assert!(d.is_multiple_of(2), "decoder size must be even");
        let k = Keyword::count();
        DecoderParams {
            d,
            keyword_embedding: store.add("decoder.keyword_embedding", k, d),
            layer1: Lstm::register(store, "decoder.layer1", 4 * d, d),
            layer2: Lstm::register(store, "decoder.layer2", d, d),
            w_init: use_interaction_state.then(|| store.add("decoder.w_init", d, 2 * d)),
            w_column_att: store.add("decoder.w_column_att", d, d),
            w_utterance_att: store.add("decoder.w_utterance_att", d, d),
            w_query_att: store.add("decoder.w_query_att", d, d),
            w_o: store.add("decoder.w_o", d, 4 * d),
            w_sql: store.add("decoder.w_sql", k, d),
            b_sql: store.add("decoder.b_sql", k, 1),
            w_column: store.add("decoder.w_column", d, d),
            w_table: store.add("decoder.w_table", d, d),
            w_copy: store.add("decoder.w_copy", 1, 3 * d),
            b_copy: store.add("decoder.b_copy", 1, 1),
            w_prev: store.add("decoder.w_prev", d, d),
            prev_query: BiLstm::register(store, "decoder.prev_query", d, d / 2),
        }
    }
}

/// Keywords, then `columns` schema columns, then `tables` schema tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSpace {
    pub columns: usize,
    pub tables: usize,
}

impl OutputSpace {
    pub fn keywords(&self) -> usize {
        Keyword::count()
    }

    pub fn len(&self) -> usize {
        self.keywords() + self.columns + self.tables
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, token: SqlToken) -> Result<usize> {
        let k = self.keywords();
        match token {
            SqlToken::Keyword(kw) => Ok(kw.index()),
            SqlToken::Value => Ok(Keyword::VALUE.index()),
            SqlToken::Eos => Ok(Keyword::EOS.index()),
            SqlToken::Column(c) if c < self.columns => Ok(k + c),
            SqlToken::Table(t) if t < self.tables => Ok(k + self.columns + t),
            other => Err(Error::TokenOutsideSupport(format!("{other:?}"))),
        }
    }

    pub fn token(&self, index: usize) -> SqlToken {
        let k = self.keywords();
        if index == Keyword::EOS.index() {
            SqlToken::Eos
        } else if index == Keyword::VALUE.index() {
            SqlToken::Value
        } else if index < k {
            SqlToken::Keyword(Keyword::from_index(index).unwrap())
        } else if index < k + self.columns {
            SqlToken::Column(index - k)
        } else {
            SqlToken::Table(index - k - self.columns)
        }
    }
}

/// Previous query tokens with their encoder states `h^Q`.
#[derive(Debug, Clone)]
pub struct PrevQuery {
    pub tokens: Vec<SqlToken>,
    pub states: Vec<Var>,
}

/// Everything the decoder attends to at one turn.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    pub space: OutputSpace,
    /// `h^C`
    pub columns: Vec<Var>,
    pub tables: Vec<Var>,
    /// `h^E` of the current and previous turns, flattened.
    pub utterance_tokens: Vec<Var>,
    /// Present when editing is active for this turn.
    pub prev: Option<PrevQuery>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub layer1: LstmState,
    pub layer2: LstmState,
    pub step: usize,
    /// Context vector of the previous step, `3d`.
    pub context: Var,
}

/// Input embedding of a query token: a learned keyword vector, or the
/// current column / table encoding.
pub fn token_embedding(g: &mut Graph, params: &DecoderParams, ctx: &DecoderContext, token: SqlToken) -> Result<Var> {
    Ok(match token {
        SqlToken::Keyword(k) => g.row(params.keyword_embedding, k.index()),
        SqlToken::Value => g.row(params.keyword_embedding, Keyword::VALUE.index()),
        SqlToken::Eos => g.row(params.keyword_embedding, Keyword::EOS.index()),
        SqlToken::Column(c) => *ctx
            .columns
            .get(c)
            .ok_or_else(|| Error::Validation(format!("column {c} not in schema")))?,
        SqlToken::Table(t) => *ctx
            .tables
            .get(t)
            .ok_or_else(|| Error::Validation(format!("table {t} not in schema")))?,
    })
}

/// `h^Q`: bidirectional states over the previous query.
pub fn encode_prev_query(g: &mut Graph, params: &DecoderParams, ctx: &DecoderContext, query: &[SqlToken]) -> Result<Vec<Var>> {
    if query.is_empty() {
        return Ok(Vec::new());
    }
    let xs = query
        .iter()
        .map(|t| token_embedding(g, params, ctx, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(params.prev_query.run(g, &xs).states)
}

pub fn initial_state(g: &mut Graph, params: &DecoderParams, c_turn: Var, h_i: Option<Var>) -> Result<DecoderState> {
    if g.dim(c_turn) != params.d {
        return Err(Error::Dimension {
            expected: params.d,
            actual: g.dim(c_turn),
            context: "decoder initial state",
        });
    }
    let h = match (params.w_init, h_i) {
        (Some(w), Some(hi)) => {
            let x = g.concat(&[c_turn, hi]);
            let z = g.matvec(w, x);
            g.tanh(z)
        }
        _ => c_turn,
    };
    let c = g.zeros(params.d);
    Ok(DecoderState {
        layer1: LstmState { h, c },
        layer2: params.layer2.zero_state(g),
        step: 0,
        context: g.zeros(3 * params.d),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub vector: Var,
    pub column_attention: Var,
    pub token_attention: Var,
    pub query_attention: Option<Var>,
}

fn attend(g: &mut Graph, w: ParamId, h: Var, keys: &[Var]) -> (Var, Var) {
    let q = g.mattvec(w, h);
    let scores = g.scores(q, keys);
    let alpha = g.softmax(scores);
    (g.weighted_sum(alpha, keys), alpha)
}

/// `c_k = [c_column; c_token; c_query]`, with `c_query = 0` when not editing.
pub fn context_vector(g: &mut Graph, params: &DecoderParams, h: Var, ctx: &DecoderContext) -> Context {
    let (c_col, a_col) = attend(g, params.w_column_att, h, &ctx.columns);
    let (c_tok, a_tok) = attend(g, params.w_utterance_att, h, &ctx.utterance_tokens);
    let (c_query, a_query) = match &ctx.prev {
        Some(prev) => {
            let (c, a) = attend(g, params.w_query_att, h, &prev.states);
            (c, Some(a))
        }
        None => (g.zeros(params.d), None),
    };
    Context {
        vector: g.concat(&[c_col, c_tok, c_query]),
        column_attention: a_col,
        token_attention: a_tok,
        query_attention: a_query,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BaseOutput {
    pub o: Var,
    /// Softmax over keywords, columns and tables.
    pub probs: Var,
}

pub fn output_distribution(g: &mut Graph, params: &DecoderParams, h: Var, c: Var, ctx: &DecoderContext) -> BaseOutput {
    let hc = g.concat(&[h, c]);
    let z = g.matvec(params.w_o, hc);
    let o = g.tanh(z);
    let m_sql = g.linear(params.w_sql, params.b_sql, o);
    let u = g.mattvec(params.w_column, o);
    let m_col = g.scores(u, &ctx.columns);
    let mut parts = vec![m_sql, m_col];
    if !ctx.tables.is_empty() {
        let v = g.mattvec(params.w_table, o);
        parts.push(g.scores(v, &ctx.tables));
    }
    let scores = g.concat(&parts);
    BaseOutput {
        o,
        probs: g.softmax(scores),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EditOutput {
    pub p_copy: Var,
    /// Softmax over previous-query positions.
    pub prev_probs: Var,
    /// Per surface token: `p_copy · Σ P_prev + (1 − p_copy) · P_base`.
    pub aggregated: Var,
    /// `[(1 − p_copy) · P_base; p_copy · P_prev]`.
    pub positions: Var,
}

pub fn edit_distribution(
    g: &mut Graph,
    params: &DecoderParams,
    o: Var,
    c: Var,
    prev: &PrevQuery,
    base: Var,
    space: &OutputSpace,
) -> Result<EditOutput> {
    if prev.tokens.is_empty() {
        return Err(Error::EmptyPreviousQuery);
    }
    if prev.tokens.len() != prev.states.len() {
        return Err(Error::LengthMismatch(format!(
            "{} previous-query tokens, {} states",
            prev.tokens.len(),
            prev.states.len()
        )));
    }
    let idx = prev
        .tokens
        .iter()
        .map(|t| space.index(*t))
        .collect::<Result<Vec<_>>>()?;
    let z = g.linear(params.w_copy, params.b_copy, c);
    let p_copy = g.sigmoid(z);
    let p_insert = g.one_minus(p_copy);
    let q = g.mattvec(params.w_prev, o);
    let scores = g.scores(q, &prev.states);
    let prev_probs = g.softmax(scores);
    let copied = g.scatter(prev_probs, &idx, space.len());
    let copied = g.scale_by(p_copy, copied);
    let inserted = g.scale_by(p_insert, base);
    let aggregated = g.add(copied, inserted);
    let pos_prev = g.scale_by(p_copy, prev_probs);
    let positions = g.concat(&[inserted, pos_prev]);
    Ok(EditOutput {
        p_copy,
        prev_probs,
        aggregated,
        positions,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub context: Context,
    pub base: BaseOutput,
    pub edit: Option<EditOutput>,
    /// Final per-surface-token distribution.
    pub aggregated: Var,
}

pub fn step(
    g: &mut Graph,
    params: &DecoderParams,
    state: &DecoderState,
    prev_token: SqlToken,
    ctx: &DecoderContext,
) -> Result<(DecoderState, StepOutput)> {
    let q = token_embedding(g, params, ctx, prev_token)?;
    let x = g.concat(&[q, state.context]);
    let l1 = params.layer1.step(g, x, state.layer1);
    let l2 = params.layer2.step(g, l1.h, state.layer2);
    let context = context_vector(g, params, l2.h, ctx);
    let base = output_distribution(g, params, l2.h, context.vector, ctx);
    let edit = match &ctx.prev {
        Some(prev) => Some(edit_distribution(g, params, base.o, context.vector, prev, base.probs, &ctx.space)?),
        None => None,
    };
    let aggregated = edit.map_or(base.probs, |e| e.aggregated);
    let next = DecoderState {
        layer1: l1,
        layer2: l2,
        step: state.step + 1,
        context: context.vector,
    };
    Ok((
        next,
        StepOutput {
            context,
            base,
            edit,
            aggregated,
        },
    ))
}

/// Mean negative log aggregated probability of `gold` followed by EOS,
/// under teacher forcing.
pub fn teacher_forced_loss(
    g: &mut Graph,
    params: &DecoderParams,
    init: DecoderState,
    ctx: &DecoderContext,
    gold: &[SqlToken],
) -> Result<Var> {
    let mut state = init;
    let mut prev = SqlToken::Keyword(Keyword::BOS);
    let mut terms = Vec::with_capacity(gold.len() + 1);
    for &target in gold.iter().chain(std::iter::once(&SqlToken::Eos)) {
        let index = ctx.space.index(target)?;
        let (next, out) = step(g, params, &state, prev, ctx)?;
        let p = g.pick(out.aggregated, index);
        let lp = g.log(p);
        terms.push(lp);
        state = next;
        prev = target;
    }
    let total = g.sum(&terms);
    Ok(g.scale(total, -1.0 / terms.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<SqlToken>,
    /// Stopped at `max_len` without emitting EOS.
    pub truncated: bool,
}

/// First index of the maximum, skipping BOS.
pub fn argmax_token(probs: &[f64]) -> usize {
    let mut best = usize::MAX;
    for (i, p) in probs.iter().enumerate() {
        if i == Keyword::BOS.index() {
            continue;
        }
        if best == usize::MAX || *p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn decode_greedy(
    g: &mut Graph,
    params: &DecoderParams,
    init: DecoderState,
    ctx: &DecoderContext,
    max_len: usize,
) -> Result<Decoded> {
    assert!(max_len >= 1);
    let mut state = init;
    let mut prev = SqlToken::Keyword(Keyword::BOS);
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let (next, out) = step(g, params, &state, prev, ctx)?;
        let token = ctx.space.token(argmax_token(g.value(out.aggregated)));
        if token == SqlToken::Eos {
            return Ok(Decoded {
                tokens,
                truncated: false,
            });
        }
        tokens.push(token);
        state = next;
        prev = token;
    }
    Ok(Decoded {
        tokens,
        truncated: true,
    })
}
