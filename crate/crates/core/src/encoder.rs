//! Utterance-table encoder with co-attention.
//!
//! Both sides attend to the other side's first-layer representations: the
//! utterance tokens attend to header summaries, the headers attend to
//! first-layer token states. Header self-attention is single-head scaled
//! dot-product and is added to the header summary before concatenation
//! with the utterance-attention vector.

use crate::autodiff::{Graph, Var};
use crate::corpus::Schema;
use crate::embedding::InputEmbeddings;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::recurrent::BiLstm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderParams {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub utterance_l1: BiLstm,
    pub utterance_l2: BiLstm,
    pub table_l1: BiLstm,
    pub table_l2: BiLstm,
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, embedding_dim: usize, hidden: usize) -> Self {
        let d = 2 * hidden;
        EncoderParams {
            embedding_dim,
            hidden,
            utterance_l1: BiLstm::register(store, "encoder.utterance1", embedding_dim, hidden),
            utterance_l2: BiLstm::register(store, "encoder.utterance2", 2 * d, hidden),
            table_l1: BiLstm::register(store, "encoder.table1", embedding_dim, hidden),
            table_l2: BiLstm::register(store, "encoder.table2", 2 * d, hidden),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UtteranceEncoding {
    /// `h^E`, one per token, dimension `2 × hidden`.
    pub token_states: Vec<Var>,
    /// `h^U`: the last token state.
    pub final_state: Var,
}

#[derive(Debug, Clone)]
pub struct ColumnEncoding {
    /// `h^C`, one per header, dimension `2 × hidden`.
    pub header_states: Vec<Var>,
}

/// Softmax nodes of the three co-attention layers, exposed for inspection.
#[derive(Debug, Clone)]
pub struct CoAttention {
    /// Per utterance token, over headers.
    pub token_to_header: Vec<Var>,
    /// Per header, over headers.
    pub header_self: Vec<Var>,
    /// Per header, over utterance tokens.
    pub header_to_token: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub utterance: UtteranceEncoding,
    pub columns: ColumnEncoding,
    pub attention: CoAttention,
}

pub fn encode_utterance_table(g: &mut Graph, params: &EncoderParams, inputs: &InputEmbeddings) -> Result<Encoded> {
    if inputs.tokens.is_empty() {
        return Err(Error::Validation("utterance has no tokens".into()));
    }
    if inputs.headers.is_empty() {
        return Err(Error::Validation("schema has no column headers".into()));
    }
    let e = params.embedding_dim;
    for v in inputs.tokens.iter().chain(inputs.headers.iter().flatten()) {
        if v.len() != e {
            return Err(Error::Dimension {
                expected: e,
                actual: v.len(),
                context: "input embedding",
            });
        }
    }
    if inputs.headers.iter().any(Vec::is_empty) {
        return Err(Error::Validation("column header has no words".into()));
    }

    let xs: Vec<Var> = inputs.tokens.iter().map(|v| g.input(v.clone())).collect();
    let first = params.utterance_l1.run(g, &xs).states;

    let summaries: Vec<Var> = inputs
        .headers
        .iter()
        .map(|words| {
            let ws: Vec<Var> = words.iter().map(|v| g.input(v.clone())).collect();
            params.table_l1.run(g, &ws).summary
        })
        .collect();

    let mut token_to_header = Vec::with_capacity(first.len());
    let second_inputs: Vec<Var> = first
        .iter()
        .map(|&s| {
            let scores = g.scores(s, &summaries);
            let alpha = g.softmax(scores);
            token_to_header.push(alpha);
            let att = g.weighted_sum(alpha, &summaries);
            g.concat(&[s, att])
        })
        .collect();
    let token_states = params.utterance_l2.run(g, &second_inputs).states;

    let scale = 1.0 / ((2 * params.hidden) as f64).sqrt();
    let mut header_self = Vec::with_capacity(summaries.len());
    let mut header_to_token = Vec::with_capacity(summaries.len());
    let header_states = summaries
        .iter()
        .map(|&c| {
            let raw = g.scores(c, &summaries);
            let scaled = g.scale(raw, scale);
            let beta = g.softmax(scaled);
            header_self.push(beta);
            let self_att = g.weighted_sum(beta, &summaries);
            let self_att = g.add(c, self_att);
            let scores = g.scores(c, &first);
            let gamma = g.softmax(scores);
            header_to_token.push(gamma);
            let utt_att = g.weighted_sum(gamma, &first);
            let x = g.concat(&[self_att, utt_att]);
            params.table_l2.run(g, &[x]).states[0]
        })
        .collect();

    let final_state = *token_states.last().unwrap();
    Ok(Encoded {
        utterance: UtteranceEncoding {
            token_states,
            final_state,
        },
        columns: ColumnEncoding { header_states },
        attention: CoAttention {
            token_to_header,
            header_self,
            header_to_token,
        },
    })
}

/// Mean of the header states of each table's columns; a table without
/// columns falls back to the star header.
pub fn table_vectors(g: &mut Graph, schema: &Schema, columns: &ColumnEncoding) -> Vec<Var> {
    (0..schema.tables.len())
        .map(|t| {
            let members: Vec<Var> = schema
                .columns
                .iter()
                .filter(|c| c.table_id == Some(t))
                .map(|c| columns.header_states[c.column_id])
                .collect();
            if members.is_empty() {
                columns.header_states[0]
            } else {
                g.mean(&members)
            }
        })
        .collect()
}
