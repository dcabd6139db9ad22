//! Token-level cross-entropy training with Adam, validation-driven
//! learning-rate decay, checkpoints and evaluation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::corpus::{write_json, Interaction, SchemaMap};
use crate::decoder::{Decoded, OutputSpace};
use crate::embedding::{EmbeddingProvider, ProviderConfig};
use crate::error::{Error, Result};
use crate::model::{decoded_query, Model, ModelConfig, PrevQueryMode};
use crate::params::{Adam, Gradients, ShapeEntry};
use crate::sql::{evaluate_grouped, EvaluationReport, SqlToken, SqlTokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub init_range: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub prev_query_mode: PrevQueryMode,
    /// Evaluate dev question match after every epoch.
    pub eval_each_epoch: bool,
    pub model: ModelConfig,
    pub provider: ProviderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            initial_lr: 0.001,
            lr_decay_factor: 0.8,
            init_range: 0.1,
            max_epochs: 10,
            seed: 0,
            clip_norm: 5.0,
            prev_query_mode: PrevQueryMode::Predicted,
            eval_each_epoch: false,
            model: ModelConfig::default(),
            provider: ProviderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("train config: {what}")));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.initial_lr > 0.0 && self.init_range > 0.0 && self.clip_norm > 0.0) {
            return bad("initial_lr, init_range and clip_norm must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if self.model.hidden_size == 0 || self.model.embedding_dim == 0 || self.model.max_decode_len == 0 {
            return bad("model sizes must be positive");
        }
        if self.provider.dimension != self.model.embedding_dim {
            return bad("provider dimension differs from model embedding_dim");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_question_match: Option<f64>,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }
}

/// Wall-clock measurements, kept apart from the deterministic report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTiming {
    pub epoch_seconds: Vec<f64>,
}

/// Mean negative log probability of each gold token followed by EOS, given
/// one distribution per step.
pub fn sequence_loss(distributions: &[Vec<f64>], gold: &[SqlToken], space: &OutputSpace) -> Result<f64> {
    if distributions.len() != gold.len() + 1 {
        return Err(Error::LengthMismatch(format!(
            "{} distributions for {} gold tokens plus EOS",
            distributions.len(),
            gold.len()
        )));
    }
    let mut total = 0.0;
    for (dist, tok) in distributions.iter().zip(gold.iter().chain(std::iter::once(&SqlToken::Eos))) {
        let i = space.index(*tok)?;
        let p = *dist.get(i).ok_or_else(|| Error::TokenOutsideSupport(format!("{tok:?}")))?;
        total -= p.ln();
    }
    Ok(total / distributions.len() as f64)
}

/// Turn-level batches over the flattened `(interaction, turn)` sequence.
pub fn make_batches(order: &[usize], data: &[Interaction], batch_size: usize) -> Vec<Vec<(usize, usize)>> {
    let flat: Vec<(usize, usize)> = order
        .iter()
        .flat_map(|&i| (0..data[i].turns.len()).map(move |t| (i, t)))
        .collect();
    flat.chunks(batch_size).map(<[_]>::to_vec).collect()
}

/// Interaction fragments of one batch: `(interaction, first turn, last turn)`.
fn fragments(batch: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for &(i, t) in batch {
        match out.last_mut() {
            Some(f) if f.0 == i && f.2 + 1 == t => f.2 = t,
            _ => out.push((i, t, t)),
        }
    }
    out
}

/// Mean turn loss over a batch and its gradient.
pub fn batch_gradient(
    model: &Model,
    provider: &EmbeddingProvider,
    schemas: &SchemaMap,
    data: &[Interaction],
    batch: &[(usize, usize)],
) -> Result<(f64, Gradients)> {
    let weight = 1.0 / batch.len() as f64;
    let parts = fragments(batch)
        .par_iter()
        .map(|&(i, first, last)| {
            let it = &data[i];
            let schema = schema_of(schemas, it)?;
            let mut g = Graph::new(&model.store);
            let losses = model.interaction_losses(&mut g, provider, schema, &it.turns[..=last], first)?;
            let total: f64 = losses.iter().map(|l| g.scalar(*l)).sum();
            let seeds: Vec<_> = losses.iter().map(|l| (*l, weight)).collect();
            Ok((total, g.backward(&seeds)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Gradients::zeros(&model.store);
    let mut total = 0.0;
    for (loss, g) in &parts {
        total += loss;
        grads.add_assign(g);
    }
    Ok((total * weight, grads))
}

fn schema_of<'a>(schemas: &'a SchemaMap, it: &Interaction) -> Result<&'a crate::corpus::Schema> {
    schemas
        .get(&it.db_id)
        .ok_or_else(|| Error::Validation(format!("unknown db_id {}", it.db_id)))
}

/// Mean teacher-forced loss over every turn.
pub fn mean_turn_loss(
    model: &Model,
    provider: &EmbeddingProvider,
    schemas: &SchemaMap,
    data: &[Interaction],
) -> Result<f64> {
    let per: Vec<Vec<f64>> = data
        .par_iter()
        .map(|it| {
            let mut g = Graph::new(&model.store);
            let losses = model.interaction_losses(&mut g, provider, schemas_get(schemas, it)?, &it.turns, 0)?;
            Ok(losses.iter().map(|l| g.scalar(*l)).collect())
        })
        .collect::<Result<_>>()?;
    let n: usize = per.iter().map(Vec::len).sum();
    Ok(if n == 0 {
        0.0
    } else {
        per.iter().flatten().sum::<f64>() / n as f64
    })
}

fn schemas_get<'a>(schemas: &'a SchemaMap, it: &Interaction) -> Result<&'a crate::corpus::Schema> {
    schema_of(schemas, it)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub provider: ProviderConfig,
    pub train: Option<TrainConfig>,
    pub manifest: Vec<ShapeEntry>,
    pub tensors: Vec<Vec<f64>>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn capture(model: &Model, provider: &ProviderConfig, train: Option<&TrainConfig>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            provider: provider.clone(),
            train: train.cloned(),
            manifest: model.store.manifest().to_vec(),
            tensors: model.store.values().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rebuilds the model, refusing a manifest that this code would not
    /// produce for the stored configuration.
    pub fn restore(&self) -> Result<Model> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not {CHECKPOINT_VERSION}",
                self.format_version
            )));
        }
        let mut model = Model::uninitialized(self.model.clone());
        model.store.load_from(&self.manifest, self.tensors.clone())?;
        Ok(model)
    }
}

/// Trains from scratch. Checkpoints go to `out_dir/latest.json` after every
/// epoch and `out_dir/best.json` on the best validation loss.
pub fn fit(
    config: &TrainConfig,
    train: &[Interaction],
    dev: &[Interaction],
    schemas: &SchemaMap,
    out_dir: Option<&Path>,
) -> Result<(Model, TrainReport, TrainTiming)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let provider = EmbeddingProvider::from_config(&config.provider)?;
    let mut model = Model::new(config.model.clone(), config.init_range, config.seed);
    let mut adam = Adam::new(&model.store);
    let mut lr = config.initial_lr;
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
    };
    let mut timing = TrainTiming::default();
    let mut best = f64::INFINITY;
    let mut prev_val: Option<f64> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let batches = make_batches(&order, train, config.batch_size);
        let mut loss_sum = 0.0;
        let mut turns = 0usize;
        let mut max_norm = 0.0f64;
        for batch in &batches {
            let (loss, mut grads) = batch_gradient(&model, &provider, schemas, train, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            max_norm = max_norm.max(grads.clip(config.clip_norm));
            adam.step(&mut model.store, &grads, lr);
            loss_sum += loss * batch.len() as f64;
            turns += batch.len();
        }
        let train_loss = loss_sum / turns as f64;
        let validation_loss = if dev.is_empty() {
            None
        } else {
            let v = mean_turn_loss(&model, &provider, schemas, dev)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            Some(v)
        };
        let validation_question_match = if config.eval_each_epoch && !dev.is_empty() {
            Some(evaluate(&model, &provider, schemas, dev, config.prev_query_mode, 0)?.report.question_match)
        } else {
            None
        };
        report.epochs.push(EpochReport {
            epoch,
            lr,
            train_loss,
            validation_loss,
            validation_question_match,
            max_grad_norm: max_norm,
        });
        timing.epoch_seconds.push(start.elapsed().as_secs_f64());

        let score = validation_loss.unwrap_or(train_loss);
        if let Some(dir) = out_dir {
            let ckpt = Checkpoint::capture(&model, &config.provider, Some(config));
            ckpt.save(&dir.join("latest.json"))?;
            if score < best {
                ckpt.save(&dir.join("best.json"))?;
            }
        }
        if score < best {
            best = score;
            report.best_epoch = Some(epoch);
        }
        if let (Some(v), Some(p)) = (validation_loss, prev_val) {
            if v > p {
                lr *= config.lr_decay_factor;
            }
        }
        prev_val = validation_loss;
    }
    Ok((model, report, timing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvaluationReport,
    pub mode: PrevQueryMode,
    /// Rendered predictions grouped by interaction.
    pub predictions: Vec<Vec<String>>,
    pub truncated: usize,
}

/// Greedy decoding of every turn, scored with exact set match. `jobs = 0`
/// uses the global thread pool.
pub fn evaluate(
    model: &Model,
    provider: &EmbeddingProvider,
    schemas: &SchemaMap,
    data: &[Interaction],
    mode: PrevQueryMode,
    jobs: usize,
) -> Result<EvalOutput> {
    let run = || -> Result<Vec<Vec<Decoded>>> {
        data.par_iter()
            .map(|it| {
                let schema = schema_of(schemas, it)?;
                let mut g = Graph::new(&model.store);
                let utts: Vec<Vec<String>> = it.turns.iter().map(|t| t.utterance.tokens.clone()).collect();
                let golds: Vec<SqlTokenSeq> = it.turns.iter().map(|t| t.query.clone()).collect();
                model.predict_interaction(&mut g, provider, schema, &utts, Some(&golds), mode)
            })
            .collect()
    };
    let decoded = if jobs == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(run)?
    };
    score_predictions(schemas, data, &decoded, mode)
}

pub fn score_predictions(
    schemas: &SchemaMap,
    data: &[Interaction],
    decoded: &[Vec<Decoded>],
    mode: PrevQueryMode,
) -> Result<EvalOutput> {
    let mut preds = Vec::with_capacity(data.len());
    let mut rendered = Vec::with_capacity(data.len());
    let mut truncated = 0;
    for (it, outs) in data.iter().zip(decoded) {
        let schema = schema_of(schemas, it)?;
        let qs: Vec<SqlTokenSeq> = outs.iter().map(|d| decoded_query(&it.db_id, d)).collect();
        truncated += outs.iter().filter(|d| d.truncated).count();
        rendered.push(qs.iter().map(|q| q.render(schema)).collect());
        preds.push(qs);
    }
    let golds: Vec<Vec<SqlTokenSeq>> = data
        .iter()
        .map(|it| it.turns.iter().map(|t| t.query.clone()).collect())
        .collect();
    Ok(EvalOutput {
        report: evaluate_grouped(&preds, &golds)?,
        mode,
        predictions: rendered,
        truncated,
    })
}

/// Scores the gold queries against themselves.
pub fn gold_passthrough(data: &[Interaction]) -> Result<EvaluationReport> {
    let golds: Vec<Vec<SqlTokenSeq>> = data
        .iter()
        .map(|it| it.turns.iter().map(|t| t.query.clone()).collect())
        .collect();
    evaluate_grouped(&golds, &golds)
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub per_tensor: BTreeMap<String, f64>,
}

/// Central-difference check of the summed teacher-forced loss of `data`
/// over every parameter scalar.
pub fn gradient_check(
    model: &mut Model,
    provider: &EmbeddingProvider,
    schemas: &SchemaMap,
    data: &[Interaction],
    step: f64,
) -> Result<GradCheckReport> {
    let loss_and_grad = |model: &Model, want_grad: bool| -> Result<(f64, Option<Gradients>)> {
        let mut total = 0.0;
        let mut grads = want_grad.then(|| Gradients::zeros(&model.store));
        for it in data {
            let mut g = Graph::new(&model.store);
            let losses = model.interaction_losses(&mut g, provider, schema_of(schemas, it)?, &it.turns, 0)?;
            total += losses.iter().map(|l| g.scalar(*l)).sum::<f64>();
            if let Some(acc) = grads.as_mut() {
                let seeds: Vec<_> = losses.iter().map(|l| (*l, 1.0)).collect();
                acc.add_assign(&g.backward(&seeds));
            }
        }
        Ok((total, grads))
    };
    let analytic = loss_and_grad(model, true)?.1.unwrap();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        per_tensor: BTreeMap::new(),
    };
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.name(id).to_string();
        let mut tensor_max = 0.0f64;
        for j in 0..model.store.get(id).len() {
            let orig = model.store.get(id)[j];
            model.store.get_mut(id)[j] = orig + step;
            let up = loss_and_grad(model, false)?.0;
            model.store.get_mut(id)[j] = orig - step;
            let down = loss_and_grad(model, false)?.0;
            model.store.get_mut(id)[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic.get(id)[j], numeric, 1e-5);
            tensor_max = tensor_max.max(err);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_parameter = format!("{name}[{j}]");
            }
        }
        report.per_tensor.insert(name, tensor_max);
    }
    Ok(report)
}
