#![allow(dead_code)]

use cci_core::nn::{ConvSpec, MbcnnArch, Model, NetConfig};
use cci_core::records::{Episode, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-stage, three-branch encoder: 64 samples → 16 frames × 8.
pub fn mini_arch() -> MbcnnArch {
    let c = |kernel, channels, dilation| ConvSpec { kernel, channels, dilation };
    MbcnnArch {
        input_len: 64,
        branches: vec![
            vec![vec![c(5, 3, 1), c(3, 3, 1)], vec![c(3, 4, 1)]],
            vec![vec![c(5, 3, 2)], vec![c(3, 4, 2)]],
            vec![vec![c(3, 2, 4)], vec![c(3, 3, 4), c(3, 3, 8)]],
        ],
        latent_dim: 8,
    }
}

pub fn mini_net() -> NetConfig {
    NetConfig {
        width_divisor: 1,
        decoder_hidden: 6,
        qnet_hidden: Some(6),
    }
}

pub fn mini_model(task: Task, seed: u64) -> Model {
    Model::init_with_arch(task, mini_arch(), &mini_net(), seed).unwrap()
}

/// Random standardized-ish episodes sized for [`mini_arch`].
pub fn random_episodes(task: Task, n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Episode {
            task,
            signal: (0..64).map(|_| rng.random_range(-2.0..2.0)).collect(),
            frame_labels: (0..16).map(|_| rng.random_range(0..task.classes().max(2)) as u8).collect(),
            frame_len_samples: 4,
            source_id: format!("rand{i}"),
            offset_samples: 0,
        })
        .collect()
}

/// Toy separable task: each frame's label is the sign of its local mean.
pub fn sign_episodes(n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let levels: Vec<f64> = (0..16).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let signal = (0..64).map(|s| levels[s / 4] + rng.random_range(-0.3..0.3)).collect();
            Episode {
                task: Task::Qrs,
                signal,
                frame_labels: levels.iter().map(|&l| u8::from(l > 0.0)).collect(),
                frame_len_samples: 4,
                source_id: format!("sign{i}"),
                offset_samples: 0,
            }
        })
        .collect()
}
