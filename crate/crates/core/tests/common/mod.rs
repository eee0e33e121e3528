#![allow(dead_code)]

pub mod grad;

use interpoll::autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps entries that are
/// zero in both from dividing by zero.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

use interpoll::data::{gen_planted_shortcut, Group, PlantedConfig, PlantedSplits};
use interpoll::grouping::{AssignmentSource, Flag, GroupAssignment};
use interpoll::model::ModelConfig;

pub fn small_planted(seed: u64) -> PlantedSplits {
    gen_planted_shortcut(&PlantedConfig {
        n: 600,
        n_test: 150,
        seed,
        ..PlantedConfig::default()
    })
    .unwrap()
}

pub fn small_learner(d: &interpoll::data::Dataset, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: d.vocab_size(),
        embed_dim: 8,
        hidden_dims: vec![12],
        num_classes: d.num_classes(),
        seed,
    }
}

/// Flags taken straight from the generator's ground-truth groups.
pub fn oracle_assignment(d: &interpoll::data::Dataset) -> GroupAssignment {
    let flags = d
        .examples()
        .iter()
        .map(|e| {
            let flag = match e.group.unwrap() {
                Group::Minority => Flag::InferredMinority,
                Group::Majority => Flag::InferredMajority,
            };
            (e.id, flag)
        })
        .collect();
    GroupAssignment::new(
        flags,
        AssignmentSource {
            variant: "oracle".into(),
            seed: 0,
        },
    )
}
