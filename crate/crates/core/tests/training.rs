use sqledit::autodiff::Graph;
use sqledit::corpus::{Interaction, SchemaMap};
use sqledit::decoder::{initial_state, step};
use sqledit::embedding::EmbeddingProvider;
use sqledit::interaction::InteractionState;
use sqledit::model::{Model, ModelConfig, PrevQueryMode};
use sqledit::sql::{Keyword, SqlToken};
use sqledit::synthetic::{synthetic_interactions, synthetic_schemas};
use sqledit::training::{
    batch_gradient, evaluate, fit, make_batches, sequence_loss, Checkpoint, TrainConfig,
};

fn small(editing: bool) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        initial_lr: 0.01,
        max_epochs: 3,
        seed: 5,
        model: ModelConfig {
            embedding_dim: 8,
            hidden_size: 4,
            editing,
            max_decode_len: 30,
            ..ModelConfig::default()
        },
        provider: sqledit::embedding::ProviderConfig {
            dimension: 8,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

fn corpus(n: usize, seed: u64) -> (SchemaMap, Vec<Interaction>) {
    let schemas = synthetic_schemas();
    let data = synthetic_interactions(&schemas, n, seed).unwrap();
    (schemas, data)
}

/// Per-turn losses with gold history, one graph per interaction.
fn turn_losses(model: &Model, provider: &EmbeddingProvider, schemas: &SchemaMap, it: &Interaction) -> Vec<f64> {
    let mut g = Graph::new(&model.store);
    model
        .interaction_losses(&mut g, provider, &schemas[&it.db_id], &it.turns, 0)
        .unwrap()
        .iter()
        .map(|l| g.scalar(*l))
        .collect()
}

#[test]
fn batch_loss_is_the_mean_of_turn_losses() {
    let (schemas, data) = corpus(6, 2);
    let config = small(true);
    let model = Model::new(config.model.clone(), 0.3, 1);
    let provider = EmbeddingProvider::from_config(&config.provider).unwrap();
    let per: Vec<Vec<f64>> = data.iter().map(|it| turn_losses(&model, &provider, &schemas, it)).collect();
    let order: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
    for batch in make_batches(&order, &data, 5) {
        let (loss, grads) = batch_gradient(&model, &provider, &schemas, &data, &batch).unwrap();
        let expected = batch.iter().map(|&(i, t)| per[i][t]).sum::<f64>() / batch.len() as f64;
        assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
        assert!(grads.global_norm() > 0.0);
    }
}

#[test]
fn batch_gradient_is_the_mean_of_single_turn_gradients() {
    let (schemas, data) = corpus(3, 8);
    let config = small(true);
    let model = Model::new(config.model.clone(), 0.3, 2);
    let provider = EmbeddingProvider::from_config(&config.provider).unwrap();
    let batch: Vec<(usize, usize)> = make_batches(&[0, 1, 2], &data, 100).remove(0);
    let (_, whole) = batch_gradient(&model, &provider, &schemas, &data, &batch).unwrap();
    let mut sum = sqledit::params::Gradients::zeros(&model.store);
    for &item in &batch {
        let (_, g) = batch_gradient(&model, &provider, &schemas, &data, &[item]).unwrap();
        sum.add_assign(&g);
    }
    sum.scale(1.0 / batch.len() as f64);
    for id in model.store.ids() {
        for (a, b) in whole.get(id).iter().zip(sum.get(id)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn sequence_loss_matches_the_graph_loss() {
    let (schemas, data) = corpus(2, 4);
    let config = small(true);
    let model = Model::new(config.model.clone(), 0.3, 3);
    let provider = EmbeddingProvider::from_config(&config.provider).unwrap();
    let it = &data[0];
    let schema = &schemas[&it.db_id];
    let graph_losses = turn_losses(&model, &provider, &schemas, it);

    let mut g = Graph::new(&model.store);
    let mut state = InteractionState::initial(&mut g, &model.interaction);
    for (t, turn) in it.turns.iter().enumerate() {
        let enc = model.encode_turn(&mut g, &provider, schema, &turn.utterance.tokens, &state).unwrap();
        let ctx = model.decoder_context(&mut g, schema, &enc, &state).unwrap();
        let mut dec = initial_state(&mut g, &model.decoder, enc.c_turn, None).unwrap();
        let mut prev = SqlToken::Keyword(Keyword::BOS);
        let mut dists = Vec::new();
        for &tok in turn.query.tokens.iter().chain(std::iter::once(&SqlToken::Eos)) {
            let (next, out) = step(&mut g, &model.decoder, &dec, prev, &ctx).unwrap();
            dists.push(g.value(out.aggregated).to_vec());
            dec = next;
            prev = tok;
        }
        let l = sequence_loss(&dists, &turn.query.tokens, &ctx.space).unwrap();
        assert!((l - graph_losses[t]).abs() < 1e-12);
        state = state
            .advance(
                &mut g,
                &model.interaction,
                enc.encoded.utterance.final_state,
                enc.encoded.utterance.token_states.clone(),
                turn.query.clone(),
            )
            .unwrap();
    }
}

#[test]
fn training_edits_from_the_gold_previous_query() {
    let (schemas, data) = corpus(4, 6);
    let config = small(true);
    let model = Model::new(config.model.clone(), 0.3, 4);
    let provider = EmbeddingProvider::from_config(&config.provider).unwrap();
    let it = data.iter().find(|i| i.turns.len() >= 3).unwrap();
    let base = turn_losses(&model, &provider, &schemas, it);
    let mut altered = it.clone();
    altered.turns[0].query = altered.turns[2].query.clone();
    let changed = turn_losses(&model, &provider, &schemas, &altered);
    assert_ne!(base[1], changed[1]);
    assert_eq!(base[2], changed[2]);

    let no_edit = Model {
        config: ModelConfig {
            editing: false,
            ..model.config.clone()
        },
        ..model.clone()
    };
    let a = turn_losses(&no_edit, &provider, &schemas, it);
    let b = turn_losses(&no_edit, &provider, &schemas, &altered);
    assert_eq!(a[1], b[1]);
}

#[test]
fn learning_rate_trace_follows_validation_loss() {
    let (schemas, all) = corpus(16, 12);
    let (train, dev) = all.split_at(10);
    // Dev utterances paired with another interaction's queries, and a large
    // step size, so the validation loss rises at some epoch.
    let mut dev = dev.to_vec();
    for i in 0..dev.len() {
        let donor = all[(i + 1) % 10].clone();
        dev[i].db_id = donor.db_id.clone();
        for (t, turn) in dev[i].turns.iter_mut().enumerate() {
            turn.query = donor.turns[t.min(donor.turns.len() - 1)].query.clone();
        }
    }
    let dev = &dev[..];
    let config = TrainConfig {
        initial_lr: 0.3,
        max_epochs: 8,
        ..small(true)
    };
    let (_, report, _) = fit(&config, train, dev, &schemas, None).unwrap();
    let lrs = report.lr_trace();
    assert_eq!(lrs[0], config.initial_lr);
    let mut decays = 0;
    for e in 1..report.epochs.len() {
        assert!(lrs[e] <= lrs[e - 1]);
        let increased = e >= 2 && report.epochs[e - 1].validation_loss > report.epochs[e - 2].validation_loss;
        if increased {
            assert_eq!(lrs[e], lrs[e - 1] * 0.8);
            decays += 1;
        } else {
            assert_eq!(lrs[e], lrs[e - 1]);
        }
    }
    let vals: Vec<_> = report.epochs.iter().map(|e| e.validation_loss).collect();
    assert!(decays >= 1, "trace {lrs:?} never decayed; validation {vals:?}");
}

#[test]
fn seeded_training_is_reproducible() {
    let (schemas, all) = corpus(8, 3);
    let (train, dev) = all.split_at(6);
    let config = small(true);
    let (m1, r1, _) = fit(&config, train, dev, &schemas, None).unwrap();
    let (m2, r2, _) = fit(&config, train, dev, &schemas, None).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1.store.values(), m2.store.values());
    let other = TrainConfig { seed: 6, ..config };
    let (m3, _, _) = fit(&other, train, dev, &schemas, None).unwrap();
    assert_ne!(m1.store.values(), m3.store.values());
}

#[test]
fn training_reduces_the_loss() {
    let (schemas, train) = corpus(10, 9);
    let config = TrainConfig {
        batch_size: 2,
        max_epochs: 4,
        ..small(true)
    };
    let (_, report, timing) = fit(&config, &train, &[], &schemas, None).unwrap();
    let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert_eq!(timing.epoch_seconds.len(), 4);
    assert!(fit(&config, &[], &[], &schemas, None).is_err());
}

#[test]
fn gold_history_scores_at_least_predicted_history() {
    let (schemas, train) = corpus(20, 1);
    let config = TrainConfig {
        batch_size: 2,
        initial_lr: 0.02,
        max_epochs: 6,
        model: ModelConfig {
            max_decode_len: 40,
            ..ModelConfig::default()
        },
        provider: Default::default(),
        ..small(true)
    };
    let (model, _, _) = fit(&config, &train, &[], &schemas, None).unwrap();
    let provider = EmbeddingProvider::from_config(&config.provider).unwrap();
    let gold = evaluate(&model, &provider, &schemas, &train, PrevQueryMode::Gold, 0).unwrap();
    let pred = evaluate(&model, &provider, &schemas, &train, PrevQueryMode::Predicted, 0).unwrap();
    assert!(
        gold.report.question_match >= pred.report.question_match,
        "{} < {}",
        gold.report.question_match,
        pred.report.question_match
    );
    // Turn one never sees a previous query, so both modes agree there.
    assert_eq!(gold.report.per_turn[0], pred.report.per_turn[0]);
}

#[test]
fn evaluation_is_independent_of_thread_count() {
    let (schemas, data) = corpus(6, 10);
    let config = small(true);
    let model = Model::new(config.model.clone(), 0.3, 9);
    let provider = EmbeddingProvider::from_config(&config.provider).unwrap();
    let one = evaluate(&model, &provider, &schemas, &data, PrevQueryMode::Predicted, 1).unwrap();
    let three = evaluate(&model, &provider, &schemas, &data, PrevQueryMode::Predicted, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.predictions.len(), 6);
}

#[test]
fn checkpoints_roundtrip_and_reject_foreign_manifests() {
    let (schemas, all) = corpus(5, 2);
    let (train, dev) = all.split_at(3);
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        max_epochs: 2,
        ..small(true)
    };
    let (model, report, _) = fit(&config, train, dev, &schemas, Some(dir.path())).unwrap();
    let latest = Checkpoint::load(&dir.path().join("latest.json")).unwrap();
    assert_eq!(latest.restore().unwrap(), model);
    assert_eq!(latest.train.as_ref(), Some(&config));
    let best = Checkpoint::load(&dir.path().join("best.json")).unwrap();
    if report.best_epoch == Some(2) {
        assert_eq!(best.tensors, latest.tensors);
    } else {
        assert_ne!(best.tensors, latest.tensors);
    }

    let mut foreign = latest.clone();
    foreign.model.use_interaction_state = true;
    assert!(foreign.restore().is_err());
    let mut truncated = latest.clone();
    truncated.tensors[0].pop();
    assert!(truncated.restore().is_err());
    let mut version = latest;
    version.format_version += 1;
    assert!(version.restore().is_err());
}
