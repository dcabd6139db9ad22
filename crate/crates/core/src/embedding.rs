//! Input word vectors for the first encoder layer.
//!
//! Three sources: seeded hash-derived random vectors, a word-vector text
//! file, or a joint contextual encoder run over the utterance and all
//! column headers as one sequence.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Schema;
use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Random,
    StaticFile,
    JointContextual,
}

/// Serializable description of a provider, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub mode: EmbeddingMode,
    pub dimension: usize,
    pub seed: u64,
    pub source: Option<PathBuf>,
    /// Maximum sequence length of the contextual encoder.
    pub max_len: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: EmbeddingMode::Random,
            dimension: 50,
            seed: 0,
            source: None,
            max_len: 512,
        }
    }
}

/// A pretrained encoder over a flat token sequence. Returns one vector per
/// input position.
pub trait ContextualEncoder: Send + Sync {
    fn dimension(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, tokens: &[String]) -> Vec<Vec<f64>>;
}

/// Deterministic stand-in for a pretrained contextual encoder: each
/// position is its word's hash vector mixed with the sequence mean and a
/// position signal.
#[derive(Debug, Clone)]
pub struct StubContextualEncoder {
    pub dimension: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ContextualEncoder for StubContextualEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn encode(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        let base: Vec<Vec<f64>> = tokens.iter().map(|t| hash_vector(t, self.dimension, self.seed)).collect();
        let mut mean = vec![0.0; self.dimension];
        for v in &base {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / tokens.len() as f64;
            }
        }
        base.into_iter()
            .enumerate()
            .map(|(pos, v)| {
                v.iter()
                    .zip(&mean)
                    .enumerate()
                    .map(|(d, (x, m))| 0.7 * x + 0.3 * m + 0.05 * ((pos + 1) as f64 / (d + 1) as f64).sin())
                    .collect()
            })
            .collect()
    }
}

fn fnv1a(seed: u64, word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in word.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seeded vector for a word, drawn from U[-0.5, 0.5].
pub fn hash_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(seed, word));
    (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

/// First-layer inputs for one utterance and one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEmbeddings {
    pub tokens: Vec<Vec<f64>>,
    /// One word-vector list per column header.
    pub headers: Vec<Vec<Vec<f64>>>,
}

impl InputEmbeddings {
    /// Mean of each header's word vectors.
    pub fn header_means(&self) -> Vec<Vec<f64>> {
        self.headers
            .iter()
            .map(|words| {
                let mut m = vec![0.0; words[0].len()];
                for w in words {
                    for (a, b) in m.iter_mut().zip(w) {
                        *a += b / words.len() as f64;
                    }
                }
                m
            })
            .collect()
    }
}

/// Position bookkeeping for the joint sequence
/// `[CLS] x_1 .. x_n [SEP] c_1 [SEP] .. c_m [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub sequence: Vec<String>,
    pub utterance: std::ops::Range<usize>,
    pub headers: Vec<std::ops::Range<usize>>,
}

pub fn joint_layout(utterance: &[String], schema: &Schema) -> JointLayout {
    let mut sequence = vec![CLS.to_string()];
    sequence.extend(utterance.iter().cloned());
    let utterance = 1..sequence.len();
    sequence.push(SEP.to_string());
    let mut headers = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let start = sequence.len();
        sequence.extend(c.words.iter().cloned());
        headers.push(start..sequence.len());
        sequence.push(SEP.to_string());
    }
    JointLayout {
        sequence,
        utterance,
        headers,
    }
}

#[derive(Clone)]
pub struct EmbeddingProvider {
    config: ProviderConfig,
    table: HashMap<String, Vec<f64>>,
    contextual: Option<Arc<dyn ContextualEncoder>>,
}

impl fmt::Debug for EmbeddingProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingProvider")
            .field("config", &self.config)
            .field("vocabulary", &self.table.len())
            .finish()
    }
}

impl EmbeddingProvider {
    pub fn random(dimension: usize, seed: u64) -> Self {
        EmbeddingProvider {
            config: ProviderConfig {
                mode: EmbeddingMode::Random,
                dimension,
                seed,
                ..ProviderConfig::default()
            },
            table: HashMap::new(),
            contextual: None,
        }
    }

    /// Reads `word v_1 .. v_dimension` lines. Words missing from the file
    /// fall back to seeded random vectors.
    pub fn from_file(path: &Path, dimension: usize, seed: u64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut table = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                record: format!("line {}", lineno + 1),
                message: e.to_string(),
            })?;
            if values.len() != dimension {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    record: format!("line {}", lineno + 1),
                    message: format!("{} values, expected {dimension}", values.len()),
                });
            }
            table.insert(word.to_lowercase(), values);
        }
        Ok(EmbeddingProvider {
            config: ProviderConfig {
                mode: EmbeddingMode::StaticFile,
                dimension,
                seed,
                source: Some(path.to_path_buf()),
                ..ProviderConfig::default()
            },
            table,
            contextual: None,
        })
    }

    pub fn joint(encoder: Arc<dyn ContextualEncoder>, seed: u64) -> Self {
        EmbeddingProvider {
            config: ProviderConfig {
                mode: EmbeddingMode::JointContextual,
                dimension: encoder.dimension(),
                seed,
                source: None,
                max_len: encoder.max_len(),
            },
            table: HashMap::new(),
            contextual: Some(encoder),
        }
    }

    /// Rebuilds a provider from its stored description. Joint mode uses the
    /// deterministic stub encoder.
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        match config.mode {
            EmbeddingMode::Random => Ok(Self::random(config.dimension, config.seed)),
            EmbeddingMode::StaticFile => {
                let path = config
                    .source
                    .as_ref()
                    .ok_or_else(|| Error::Validation("static embedding mode needs a source file".into()))?;
                Self::from_file(path, config.dimension, config.seed)
            }
            EmbeddingMode::JointContextual => Ok(Self::joint(
                Arc::new(StubContextualEncoder {
                    dimension: config.dimension,
                    max_len: config.max_len,
                    seed: config.seed,
                }),
                config.seed,
            )),
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.config.mode
    }

    pub fn word(&self, word: &str) -> Vec<f64> {
        match self.table.get(word) {
            Some(v) => v.clone(),
            None => hash_vector(word, self.config.dimension, self.config.seed),
        }
    }

    pub fn embed(&self, utterance: &[String], schema: &Schema) -> Result<InputEmbeddings> {
        if self.config.mode == EmbeddingMode::JointContextual {
            return self.joint_contextual_embed(utterance, schema);
        }
        Ok(InputEmbeddings {
            tokens: utterance.iter().map(|w| self.word(w)).collect(),
            headers: schema
                .columns
                .iter()
                .map(|c| c.words.iter().map(|w| self.word(w)).collect())
                .collect(),
        })
    }

    /// Runs the contextual encoder over the joint sequence and slices its
    /// output back into utterance-token and header-word vectors.
    pub fn joint_contextual_embed(&self, utterance: &[String], schema: &Schema) -> Result<InputEmbeddings> {
        let encoder = self.contextual.as_ref().ok_or_else(|| {
            Error::Validation("joint contextual embedding needs a contextual encoder".into())
        })?;
        let layout = joint_layout(utterance, schema);
        if layout.sequence.len() > encoder.max_len() {
            return Err(Error::SequenceTooLong {
                length: layout.sequence.len(),
                max: encoder.max_len(),
            });
        }
        let states = encoder.encode(&layout.sequence);
        Ok(InputEmbeddings {
            tokens: states[layout.utterance.clone()].to_vec(),
            headers: layout.headers.iter().map(|r| states[r.clone()].to_vec()).collect(),
        })
    }
}
