//! The full model: parameters for every component and the per-interaction
//! forward pass tying encoder, interaction state and decoder together.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{Schema, Turn};
use crate::decoder::{
    decode_greedy, encode_prev_query, initial_state, teacher_forced_loss, Decoded, DecoderContext,
    DecoderParams, OutputSpace, PrevQuery,
};
use crate::embedding::EmbeddingProvider;
use crate::encoder::{encode_utterance_table, table_vectors, EncoderParams, Encoded};
use crate::error::{Error, Result};
use crate::interaction::{turn_attention, InteractionParams, InteractionState};
use crate::params::ParamStore;
use crate::sql::{SqlToken, SqlTokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub editing: bool,
    /// Feeds the interaction-level state into the decoder's initial state.
    pub use_interaction_state: bool,
    /// Caps how many previous turns are attended.
    pub turn_window: Option<usize>,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 50,
            hidden_size: 32,
            editing: true,
            use_interaction_state: false,
            turn_window: None,
            max_decode_len: 200,
        }
    }
}

/// Which previous query feeds the editing mechanism at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevQueryMode {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub interaction: InteractionParams,
    pub decoder: DecoderParams,
}

/// Encoder outputs for one turn plus the turn-attention result.
#[derive(Debug, Clone)]
pub struct EncodedTurn {
    pub encoded: Encoded,
    pub tables: Vec<Var>,
    pub c_turn: Var,
    pub turn_weights: Option<Var>,
}

impl Model {
    /// Registers every tensor, then draws all of them from
    /// U[-init_range, init_range].
    pub fn new(config: ModelConfig, init_range: f64, seed: u64) -> Self {
        let mut model = Self::uninitialized(config);
        model.store.init_uniform(init_range, seed);
        model
    }

    /// Registration only; every tensor is zero.
    pub fn uninitialized(config: ModelConfig) -> Self {
        let mut store = ParamStore::new();
        let d = 2 * config.hidden_size;
        let encoder = EncoderParams::register(&mut store, config.embedding_dim, config.hidden_size);
        let interaction = InteractionParams::register(&mut store, d);
        let decoder = DecoderParams::register(&mut store, d, config.use_interaction_state);
        Model {
            config,
            store,
            encoder,
            interaction,
            decoder,
        }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.config.hidden_size
    }

    pub fn output_space(schema: &Schema) -> OutputSpace {
        OutputSpace {
            columns: schema.columns.len(),
            tables: schema.tables.len(),
        }
    }

    pub fn encode_turn(
        &self,
        g: &mut Graph,
        provider: &EmbeddingProvider,
        schema: &Schema,
        utterance: &[String],
        state: &InteractionState,
    ) -> Result<EncodedTurn> {
        if provider.dimension() != self.config.embedding_dim {
            return Err(Error::Dimension {
                expected: self.config.embedding_dim,
                actual: provider.dimension(),
                context: "embedding provider",
            });
        }
        let inputs = provider.embed(utterance, schema)?;
        let encoded = encode_utterance_table(g, &self.encoder, &inputs)?;
        let tables = table_vectors(g, schema, &encoded.columns);
        let history = state.recent_utterances(self.config.turn_window);
        let att = turn_attention(g, &self.interaction, encoded.utterance.final_state, history);
        Ok(EncodedTurn {
            encoded,
            tables,
            c_turn: att.c_turn,
            turn_weights: att.weights,
        })
    }

    /// Attention targets for one turn. Editing is active only when enabled
    /// and the previous query is non-empty.
    pub fn decoder_context(
        &self,
        g: &mut Graph,
        schema: &Schema,
        turn: &EncodedTurn,
        state: &InteractionState,
    ) -> Result<DecoderContext> {
        let mut utterance_tokens: Vec<Var> = state
            .recent_token_states(self.config.turn_window)
            .iter()
            .flatten()
            .copied()
            .collect();
        utterance_tokens.extend(&turn.encoded.utterance.token_states);
        let mut ctx = DecoderContext {
            space: Self::output_space(schema),
            columns: turn.encoded.columns.header_states.clone(),
            tables: turn.tables.clone(),
            utterance_tokens,
            prev: None,
        };
        if self.config.editing {
            if let Some(prev) = state.history_queries.last().filter(|q| !q.is_empty()) {
                let states = encode_prev_query(g, &self.decoder, &ctx, &prev.tokens)?;
                ctx.prev = Some(PrevQuery {
                    tokens: prev.tokens.clone(),
                    states,
                });
            }
        }
        Ok(ctx)
    }

    fn init(&self, g: &mut Graph, turn: &EncodedTurn, state: &InteractionState) -> Result<crate::decoder::DecoderState> {
        let h_i = self.config.use_interaction_state.then_some(state.h_i);
        initial_state(g, &self.decoder, turn.c_turn, h_i)
    }

    /// Teacher-forced per-turn losses for turns `0..=last`, with the gold
    /// previous query as the editing source. Only turns at or after
    /// `first_loss` are decoded; earlier turns are encoded for history.
    pub fn interaction_losses(
        &self,
        g: &mut Graph,
        provider: &EmbeddingProvider,
        schema: &Schema,
        turns: &[Turn],
        first_loss: usize,
    ) -> Result<Vec<Var>> {
        let mut state = InteractionState::initial(g, &self.interaction);
        let mut losses = Vec::new();
        for (t, turn) in turns.iter().enumerate() {
            let enc = self.encode_turn(g, provider, schema, &turn.utterance.tokens, &state)?;
            if t >= first_loss {
                let ctx = self.decoder_context(g, schema, &enc, &state)?;
                let init = self.init(g, &enc, &state)?;
                losses.push(teacher_forced_loss(g, &self.decoder, init, &ctx, &turn.query.tokens)?);
            }
            if t + 1 < turns.len() {
                state = state.advance(
                    g,
                    &self.interaction,
                    enc.encoded.utterance.final_state,
                    enc.encoded.utterance.token_states.clone(),
                    turn.query.clone(),
                )?;
            }
        }
        Ok(losses)
    }

    /// Greedy decoding of every turn. In gold mode `gold` must supply the
    /// previous queries; in predicted mode the model's own outputs do.
    pub fn predict_interaction(
        &self,
        g: &mut Graph,
        provider: &EmbeddingProvider,
        schema: &Schema,
        utterances: &[Vec<String>],
        gold: Option<&[SqlTokenSeq]>,
        mode: PrevQueryMode,
    ) -> Result<Vec<Decoded>> {
        let mut state = InteractionState::initial(g, &self.interaction);
        let mut out = Vec::with_capacity(utterances.len());
        for (t, utterance) in utterances.iter().enumerate() {
            let enc = self.encode_turn(g, provider, schema, utterance, &state)?;
            let ctx = self.decoder_context(g, schema, &enc, &state)?;
            let init = self.init(g, &enc, &state)?;
            let decoded = decode_greedy(g, &self.decoder, init, &ctx, self.config.max_decode_len)?;
            let history = match (mode, gold) {
                (PrevQueryMode::Gold, Some(gold)) => gold
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::LengthMismatch(format!("no gold query for turn {}", t + 1)))?,
                (PrevQueryMode::Gold, None) => {
                    return Err(Error::Validation("gold previous-query mode needs gold queries".into()))
                }
                (PrevQueryMode::Predicted, _) => SqlTokenSeq::new(schema.db_id.clone(), decoded.tokens.clone()),
            };
            out.push(decoded);
            state = state.advance(
                g,
                &self.interaction,
                enc.encoded.utterance.final_state,
                enc.encoded.utterance.token_states.clone(),
                history,
            )?;
        }
        Ok(out)
    }
}

/// Renders decoded tokens, dropping anything that cannot stand in a query.
pub fn decoded_query(db_id: &str, decoded: &Decoded) -> SqlTokenSeq {
    SqlTokenSeq::new(
        db_id,
        decoded
            .tokens
            .iter()
            .copied()
            .filter(|t| *t != SqlToken::Eos)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SchemaRecord, Utterance};
    use crate::sql::tokenize_sql;

    fn schema() -> Schema {
        let record: SchemaRecord = serde_json::from_str(
            r#"{"db_id": "toy", "table_names_original": ["t", "u"],
                "column_names_original": [[0, "a"], [0, "b"], [1, "c"]], "foreign_keys": []}"#,
        )
        .unwrap();
        record.into_schema().unwrap()
    }

    fn turns(s: &Schema) -> Vec<Turn> {
        [("show a", "SELECT a FROM t"), ("and b too", "SELECT a , b FROM t")]
            .iter()
            .enumerate()
            .map(|(i, (u, q))| Turn {
                utterance: Utterance {
                    turn_index: i + 1,
                    tokens: u.split(' ').map(String::from).collect(),
                },
                query: tokenize_sql(q, s).unwrap(),
            })
            .collect()
    }

    fn tiny(editing: bool) -> Model {
        Model::new(
            ModelConfig {
                embedding_dim: 3,
                hidden_size: 2,
                editing,
                max_decode_len: 5,
                ..ModelConfig::default()
            },
            0.1,
            1,
        )
    }

    #[test]
    fn losses_are_positive_and_prefix_independent() {
        let s = schema();
        let m = tiny(true);
        let p = EmbeddingProvider::random(3, 0);
        let ts = turns(&s);
        let mut g = Graph::new(&m.store);
        let all = m.interaction_losses(&mut g, &p, &s, &ts, 0).unwrap();
        let tail = m.interaction_losses(&mut g, &p, &s, &ts, 1).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(tail.len(), 1);
        assert_eq!(g.scalar(all[1]), g.scalar(tail[0]));
        assert!(g.scalar(all[0]) > 0.0);
    }

    #[test]
    fn editing_is_off_at_the_first_turn() {
        let s = schema();
        let p = EmbeddingProvider::random(3, 0);
        let ts = turns(&s);
        let utts: Vec<Vec<String>> = ts.iter().map(|t| t.utterance.tokens.clone()).collect();
        let mut with = tiny(true);
        let without_cfg = ModelConfig {
            editing: false,
            ..with.config.clone()
        };
        with.config = without_cfg.clone();
        let a = {
            let mut g = Graph::new(&with.store);
            with.predict_interaction(&mut g, &p, &s, &utts[..1], None, PrevQueryMode::Predicted).unwrap()
        };
        with.config.editing = true;
        let b = {
            let mut g = Graph::new(&with.store);
            with.predict_interaction(&mut g, &p, &s, &utts[..1], None, PrevQueryMode::Predicted).unwrap()
        };
        assert_eq!(a, b);
        let mut g = Graph::new(&with.store);
        assert!(with.predict_interaction(&mut g, &p, &s, &utts, None, PrevQueryMode::Gold).is_err());
    }

    #[test]
    fn interaction_state_ablation_changes_the_manifest() {
        let base = Model::uninitialized(ModelConfig::default());
        let abl = Model::uninitialized(ModelConfig {
            use_interaction_state: true,
            ..ModelConfig::default()
        });
        assert_eq!(abl.store.len(), base.store.len() + 1);
        assert!(abl.store.find("decoder.w_init").is_some());
    }
}
