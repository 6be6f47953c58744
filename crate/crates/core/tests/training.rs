mod common;

use cci_core::nn::{load_checkpoint, Encoder, Model};
use cci_core::records::Task;
use cci_core::train::{cross_validate, train_model, FramesPerStep, History, TrainConfig, TrainMode};
use common::{mini_model, mini_net, random_episodes, sign_episodes};

fn cfg(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        batch_n: 2,
        intervention_w: 3,
        frames_per_step: FramesPerStep::Count(1),
        epochs_max: 3,
        beta: 5e-3,
        alpha: 5e-3,
        net: mini_net(),
        seed: 11,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig, n: usize) -> (Model, History) {
    let eps = sign_episodes(n, 3);
    train_model(mini_model(Task::Qrs, cfg.seed), cfg, &eps, &eps[..2]).unwrap()
}

fn enc_dec(m: &Model) -> (String, String) {
    (m.encoder.params().fingerprint(), m.decoder.params().fingerprint())
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let c = TrainConfig { epochs_max: 0, ..cfg(TrainMode::Cci) };
    let (m, h) = run(&c, 6);
    assert_eq!(m.fingerprint(), mini_model(Task::Qrs, c.seed).fingerprint());
    assert!(h.epochs.is_empty() && h.steps.is_empty());
}

#[test]
fn toy_task_halves_segmentation_loss() {
    let c = TrainConfig { beta: 1e-2, epochs_max: 7, ..cfg(TrainMode::Baseline) };
    let (_, h) = run(&c, 16);
    assert!(h.steps.len() >= 50);
    let first = h.steps[0].loss.l_seg;
    let fiftieth = h.steps[49].loss.l_seg;
    assert!(fiftieth <= 0.5 * first, "{first} -> {fiftieth}");
}

#[test]
fn frozen_metric_stops_at_best_plus_patience() {
    let c = TrainConfig {
        beta: 1e-15,
        alpha: 1e-15,
        epochs_max: 100,
        patience: 20,
        ..cfg(TrainMode::Baseline)
    };
    let (_, h) = run(&c, 4);
    let best = h.best_epoch.unwrap();
    assert_eq!(best, 1);
    assert_eq!(h.epochs.len(), best + 20);
    assert!(h.stopped_early);
}

#[test]
fn inert_lambdas_match_baseline() {
    let base = run(&cfg(TrainMode::Baseline), 6);
    let cci = run(
        &TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..cfg(TrainMode::Cci)
        },
        6,
    );
    assert_eq!(enc_dec(&base.0), enc_dec(&cci.0));
    let seg = |h: &History| h.steps.iter().map(|s| s.loss.l_seg).collect::<Vec<_>>();
    assert_eq!(seg(&base.1), seg(&cci.1));
}

#[test]
fn augment_without_kinds_matches_baseline() {
    let base = run(&cfg(TrainMode::Baseline), 6);
    let aug = run(
        &TrainConfig {
            intervention_kinds: vec![],
            ..cfg(TrainMode::Augment)
        },
        6,
    );
    assert_eq!(enc_dec(&base.0), enc_dec(&aug.0));
    assert_eq!(base.1.epochs, aug.1.epochs);
}

#[test]
fn augmented_epoch_doubles_the_stream() {
    let (_, h) = run(&cfg(TrainMode::Augment), 6);
    assert!(h.epochs.iter().all(|e| e.visited == 12));
    let (_, b) = run(&cfg(TrainMode::Baseline), 6);
    assert!(b.epochs.iter().all(|e| e.visited == 6));
}

#[test]
fn identical_seed_identical_history() {
    let c = cfg(TrainMode::Cci);
    let (m1, h1) = run(&c, 6);
    let (m2, h2) = run(&c, 6);
    assert_eq!(h1, h2);
    assert_eq!(m1.fingerprint(), m2.fingerprint());
    let (_, h3) = run(&TrainConfig { seed: 12, ..c }, 6);
    assert_ne!(h1.steps, h3.steps);
}

#[test]
fn cci_records_every_component() {
    let (_, h) = run(&cfg(TrainMode::Cci), 6);
    for e in &h.epochs {
        assert!(e.l_seg.is_finite() && e.i_vcci.is_finite() && e.l_sim.is_finite());
        assert!(e.l_sim != 0.0 && e.l_q != 0.0);
        assert!((e.total - (e.l_seg + 0.1 * e.i_vcci - e.l_sim)).abs() < 1e-9);
    }
    assert!(h.to_csv().starts_with("epoch,l_seg,i_vcci,l_sim,val_metric\n"));
}

#[test]
fn literal_encoder_update_skips_segmentation_gradient() {
    let c = TrainConfig {
        encoder_gets_seg_grad: false,
        ..cfg(TrainMode::Baseline)
    };
    let (m, _) = run(&c, 6);
    let init = mini_model(Task::Qrs, c.seed);
    assert_eq!(m.encoder.params().fingerprint(), init.encoder.params().fingerprint());
    assert_ne!(m.decoder.params().fingerprint(), init.decoder.params().fingerprint());
}

#[test]
fn heartsound_cci_trains() {
    let c = cfg(TrainMode::Cci);
    let eps = random_episodes(Task::Heartsound, 6, 5);
    let (_, h) = train_model(mini_model(Task::Heartsound, 1), &c, &eps, &[]).unwrap();
    assert_eq!(h.epochs.len(), 3);
    assert!(h.epochs.iter().all(|e| e.total.is_finite()));
}

#[test]
fn rejects_mismatched_episodes() {
    let eps = random_episodes(Task::Heartsound, 4, 5);
    assert!(train_model(mini_model(Task::Qrs, 1), &cfg(TrainMode::Baseline), &eps, &[]).is_err());
    assert!(train_model(mini_model(Task::Qrs, 1), &cfg(TrainMode::Baseline), &[], &[]).is_err());
}

#[test]
fn cross_validation_writes_loadable_checkpoints() {
    // cross_validate builds full-size encoders, so use the real episode shape.
    let recs: Vec<_> = (0..3)
        .map(|i| {
            let c = cci_core::records::SynthConfig { duration_s: 20.0, ..cci_core::records::SynthConfig::ecg() };
            cci_core::records::synth_ecg(&cci_core::records::SynthConfig { id: format!("r{i}"), ..c }, i).unwrap()
        })
        .collect();
    let eps = cci_core::preprocess::preprocess_records(&recs, &Default::default()).unwrap();
    let c = TrainConfig {
        folds: 3,
        epochs_max: 1,
        batch_n: 2,
        net: cci_core::nn::NetConfig { width_divisor: 8, ..Default::default() },
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = cross_validate(&c, &eps, Some(dir.path())).unwrap();
    assert_eq!(out.len(), 3);
    for o in &out {
        let ids: std::collections::BTreeSet<&str> = o.val_ids.iter().map(|&i| eps[i].source_id.as_str()).collect();
        assert_eq!(ids.len(), 1);
        let (m, manifest) = load_checkpoint(o.checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(manifest.mode, "baseline");
        assert_eq!(manifest.seed, o.fold as u64);
        // Checkpoints store f32, so compare predictions loosely.
        let a = o.model.predict(&eps[0].signal).unwrap();
        let b = m.predict(&eps[0].signal).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-4));
        assert!(dir.path().join(format!("fold{}_history.csv", o.fold)).exists());
    }
}
