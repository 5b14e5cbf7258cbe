//! Seeded random instance generator.
//!
//! Rows of `P` are Dirichlet(1), rewards are uniform on `[-r_max, r_max]`,
//! critic features are random orthonormal columns rescaled so the largest row
//! norm is 1, and policy features are Gaussian rows rescaled the same way.
//! The `one_hot` flag replaces both feature sets by indicator features.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mdp::{FeatureSet, FiniteMdp, Instance};
use crate::rng;

pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub d_w: usize,
    pub d_v: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub seed: u64,
    #[serde(default)]
    pub one_hot: bool,
}

impl GeneratorParams {
    pub fn new(n_states: usize, n_actions: usize, d_w: usize, d_v: usize, gamma: f64, r_max: f64, seed: u64) -> Self {
        Self {
            n_states,
            n_actions,
            d_w,
            d_v,
            gamma,
            r_max,
            seed,
            one_hot: false,
        }
    }

    /// Indicator critic features and tabular policy features; `d_w` and `d_v`
    /// are overwritten accordingly.
    pub fn one_hot(n_states: usize, n_actions: usize, gamma: f64, r_max: f64, seed: u64) -> Self {
        Self {
            n_states,
            n_actions,
            d_w: n_states,
            d_v: n_states * n_actions,
            gamma,
            r_max,
            seed,
            one_hot: true,
        }
    }
}

/// Generates a validated instance, redrawing (up to [`MAX_ATTEMPTS`] times)
/// while the chain under the uniform policy is not ergodic.
pub fn generate(params: &GeneratorParams) -> Result<Instance> {
    if params.n_states == 0 || params.n_actions == 0 || params.d_w == 0 || params.d_v == 0 {
        return Err(Error::DomainError("sizes must be positive".into()));
    }
    if !(params.gamma > 0.0 && params.gamma < 1.0) {
        return Err(Error::InvalidDiscount(params.gamma));
    }
    if !(params.r_max.is_finite() && params.r_max >= 0.0) {
        return Err(Error::DomainError(format!("r_max = {} is invalid", params.r_max)));
    }
    let mut rng = rng::stream(params.seed, rng::GENERATOR_STREAM);
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let inst = draw(params, &mut rng)?;
        match inst.validate() {
            Ok(_) => return Ok(inst),
            Err(Error::NotErgodic(msg)) => last = Some(msg),
            Err(e) => return Err(e),
        }
    }
    Err(Error::NotErgodic(format!(
        "no ergodic draw in {MAX_ATTEMPTS} attempts ({})",
        last.unwrap_or_default()
    )))
}

fn draw<R: Rng>(p: &GeneratorParams, rng: &mut R) -> Result<Instance> {
    let (n, na) = (p.n_states, p.n_actions);
    let transition: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| (0..na).map(|_| dirichlet_one(n, rng)).collect())
        .collect();
    let reward: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..na).map(|_| p.r_max * rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let mdp = FiniteMdp::new(transition, reward, p.gamma, p.r_max)?;
    let feats = if p.one_hot {
        FeatureSet::one_hot(n, na)
    } else {
        let critic = critic_features(n, p.d_w, rng);
        let policy = scale_rows_to_unit_max(gaussian(n * na, p.d_v, rng));
        FeatureSet::new(critic, policy, na)?
    };
    Ok(Instance {
        mdp,
        feats,
        generator: Some(p.clone()),
    })
}

fn dirichlet_one<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_row_slice(rows, cols, &data)
}

fn critic_features<R: Rng>(n: usize, d_w: usize, rng: &mut R) -> Matrix {
    let g = gaussian(n, d_w, rng);
    if d_w <= n {
        scale_rows_to_unit_max(g.qr().q())
    } else {
        // cannot have full column rank; validation reports it
        scale_rows_to_unit_max(g)
    }
}

fn scale_rows_to_unit_max(m: Matrix) -> Matrix {
    let max = m.row_iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
    if max > 0.0 {
        m / max
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let p = GeneratorParams::new(5, 3, 2, 4, 0.9, 1.0, 11);
        let a = generate(&p).unwrap().to_json().unwrap();
        let b = generate(&p).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate(&GeneratorParams { seed: 12, ..p }).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_features_respect_bounds() {
        let inst = generate(&GeneratorParams::new(6, 2, 3, 5, 0.8, 2.0, 3)).unwrap();
        let max_phi = (0..6).map(|s| inst.feats.phi(s).norm()).fold(0.0, f64::max);
        assert!((max_phi - 1.0).abs() < 1e-12);
        let report = inst.validate().unwrap();
        assert_eq!(report.d_w, 3);
    }

    #[test]
    fn too_many_critic_features_is_rank_deficient() {
        let err = generate(&GeneratorParams::new(3, 2, 4, 2, 0.9, 1.0, 0)).unwrap_err();
        assert!(matches!(err, Error::RankDeficientFeatures(_)));
    }

    #[test]
    fn one_hot_two_state() {
        let inst = generate(&GeneratorParams::one_hot(2, 2, 0.9, 1.0, 0)).unwrap();
        assert_eq!(inst.feats.d_w(), 2);
        assert_eq!(inst.feats.d_v(), 4);
    }
}
