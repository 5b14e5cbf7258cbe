#![allow(dead_code)]

use hba2c_core::generate::{generate, GeneratorParams};
use hba2c_core::linalg::{Matrix, Vector};
use hba2c_core::mdp::{FeatureSet, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A spread of random instances: sizes, discount, reward scale and feature
/// dimensions all vary with `i`.
pub fn random_instance(i: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
    let n = rng.random_range(3..=8);
    let na = rng.random_range(2..=3);
    let d_w = rng.random_range(1..=n);
    let d_v = rng.random_range(1..=4);
    let gamma = [0.5, 0.8, 0.9, 0.95][rng.random_range(0..4)];
    let r_max = rng.random_range(0.2..2.0);
    generate(&GeneratorParams::new(n, na, d_w, d_v, gamma, r_max, 77 + i)).expect("generator output is valid")
}

pub fn random_one_hot(i: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + i);
    let n = rng.random_range(2..=7);
    let na = rng.random_range(2..=3);
    let gamma = [0.5, 0.8, 0.9, 0.95][rng.random_range(0..4)];
    generate(&GeneratorParams::one_hot(n, na, gamma, 1.0, 300 + i)).expect("generator output is valid")
}

/// Identity critic features with the instance's own policy features.
pub fn with_one_hot_critic(inst: &Instance) -> FeatureSet {
    let n = inst.mdp.n_states();
    FeatureSet::new(
        Matrix::identity(n, n),
        inst.feats.policy_matrix().clone(),
        inst.mdp.n_actions(),
    )
    .expect("identity critic is valid")
}

pub fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

pub fn unit(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    let g = gaussian(d, rng);
    let n = g.norm();
    g / n
}

/// Written straight to the process stdout so the line shows even when the
/// harness captures test output.
pub fn verdict(id: usize, name: &str, pass: bool, detail: String) {
    use std::io::Write;
    let line = format!("criterion {id} [{name}]: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}
