mod common;

use cci_core::nn::{Encoder, Model, ParamSet};
use cci_core::objective::{qnet_ll, qnet_ll_grad, PairBatch};
use cci_core::records::{Episode, Task};
use cci_core::train::{composite_gradients, FramesPerStep, StepPlan, TrainConfig, TrainMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn jitter(params: &mut ParamSet, rng: &mut ChaCha8Rng, biases_only: bool) {
    for t in &mut params.tensors {
        if biases_only && !t.name.ends_with(".b") {
            continue;
        }
        for v in &mut t.data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

/// Moves zero-initialized biases off the ReLU kink (a zeroed input window
/// otherwise yields pre-activations of exactly 0) and perturbs q.
fn jitter_model(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter(model.encoder.params_mut(), &mut rng, true);
    jitter(model.decoder.params_mut(), &mut rng, true);
    jitter(model.qnet.params_mut(), &mut rng, false);
}

fn cfg() -> TrainConfig {
    TrainConfig {
        mode: TrainMode::Cci,
        lambda1: 0.5,
        lambda2: 1.0,
        batch_n: 2,
        intervention_w: 3,
        frames_per_step: FramesPerStep::Count(2),
        ..TrainConfig::default()
    }
}

enum Group {
    Encoder,
    Decoder,
}

fn params_mut<'a>(model: &'a mut Model, g: &Group) -> &'a mut ParamSet {
    match g {
        Group::Encoder => model.encoder.params_mut(),
        Group::Decoder => model.decoder.params_mut(),
    }
}

fn check_composite(task: Task, seed: u64) -> f64 {
    let mut model = common::mini_model(task, seed);
    jitter_model(&mut model, seed + 100);
    let eps: Vec<Episode> = common::random_episodes(task, 2, seed + 200);
    let batch: Vec<&Episode> = eps.iter().collect();
    let cfg = cfg();
    let plan = StepPlan::sample(2, 16, &cfg, &mut ChaCha8Rng::seed_from_u64(seed + 300)).unwrap();
    let (loss, genc, gdec) = composite_gradients(&model, &batch, &plan, &cfg).unwrap();
    assert!(loss.i_vcci != 0.0 && loss.l_sim != 0.0);
    let mut worst: f64 = 0.0;
    for (group, grads) in [(Group::Encoder, genc), (Group::Decoder, gdec)] {
        for i in 0..grads.num_values() {
            let mut m = model.clone();
            let orig = *params_mut(&mut m, &group).value_mut(i);
            *params_mut(&mut m, &group).value_mut(i) = orig + H;
            let up = composite_gradients(&m, &batch, &plan, &cfg).unwrap().0.total;
            *params_mut(&mut m, &group).value_mut(i) = orig - H;
            let down = composite_gradients(&m, &batch, &plan, &cfg).unwrap().0.total;
            let num = (up - down) / (2.0 * H);
            let e = rel_err(grads.value(i), num);
            assert!(e < 1e-4, "param {i}: analytic {} numeric {num} rel {e}", grads.value(i));
            worst = worst.max(e);
        }
    }
    worst
}

#[test]
fn composite_gradient_matches_finite_differences_qrs() {
    let worst = check_composite(Task::Qrs, 11);
    println!("max relative error {worst:.2e}");
}

#[test]
fn composite_gradient_matches_finite_differences_heartsound() {
    check_composite(Task::Heartsound, 5);
}

#[test]
fn qnet_likelihood_gradient_matches_finite_differences() {
    let mut model = common::mini_model(Task::Qrs, 3);
    jitter_model(&mut model, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-1.5..1.5)).collect();
    let z_do: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-1.5..1.5)).collect();
    let pairs = PairBatch::new(5, 1, 8, z, z_do).unwrap();
    let (ll, grads) = qnet_ll_grad(&model.qnet, &pairs).unwrap();
    assert!((ll - qnet_ll(&model.qnet, &pairs).unwrap()).abs() < 1e-12);
    for i in 0..grads.num_values() {
        let mut q = model.qnet.clone();
        let orig = q.params().value(i);
        *q.params_mut().value_mut(i) = orig + H;
        let up = qnet_ll(&q, &pairs).unwrap();
        *q.params_mut().value_mut(i) = orig - H;
        let down = qnet_ll(&q, &pairs).unwrap();
        let num = (up - down) / (2.0 * H);
        assert!(rel_err(grads.value(i), num) < 1e-4, "q param {i}: {} vs {num}", grads.value(i));
    }
}
