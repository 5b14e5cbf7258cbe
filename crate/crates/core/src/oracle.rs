//! Exact quantities for a finite instance under a fixed policy.
//!
//! Everything here is a direct dense computation: stationary distributions
//! from a linear solve, values from `(I − γP^π)V = r^π`, the optimal critic
//! from the exactly assembled stationary T-step system, and the exact policy
//! gradient from the discounted occupancy measure. Instances are small
//! (`n_states ≤ 200`), so no iterative solvers are involved.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::mdp::{FeatureSet, FiniteMdp, SoftmaxPolicy, POLICY_LIPSCHITZ, SCORE_BOUND};

pub const MAX_STATES: usize = 200;
/// Condition-number ceiling for the optimal critic system.
pub const MAX_CONDITION: f64 = 1e12;
/// Eigenvalues of the feature covariance at or below this are treated as zero.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Distribution of the frame start state used by `J` and `∇J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartDist {
    /// The stationary distribution `μ_v` of the current policy.
    #[default]
    Stationary,
    Uniform,
    Custom(Vec<f64>),
}

impl StartDist {
    pub fn resolve(&self, mu: &Vector) -> Result<Vector> {
        let n = mu.len();
        match self {
            StartDist::Stationary => Ok(mu.clone()),
            StartDist::Uniform => Ok(Vector::from_element(n, 1.0 / n as f64)),
            StartDist::Custom(p) => {
                let sum: f64 = p.iter().sum();
                if p.len() != n || p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "start distribution must be a probability vector over {n} states"
                    )));
                }
                Ok(Vector::from_column_slice(p))
            }
        }
    }
}

/// Stationary distribution of a row-stochastic matrix.
///
/// The chain must be primitive (irreducible and aperiodic); the fixed point
/// is found by replacing one balance equation of `(Pᵀ − I)μ = 0` with the
/// normalisation `Σμ = 1`.
pub fn stationary_of_chain(p: &Matrix) -> Result<Vector> {
    let n = p.nrows();
    if !linalg::is_primitive(p) {
        let why = if linalg::is_irreducible(p) {
            "periodic"
        } else {
            "reducible"
        };
        return Err(Error::NotErgodic(format!("induced chain is {why}")));
    }
    let mut a = p.transpose() - Matrix::identity(n, n);
    let mut b = Vector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NotErgodic("stationary system is singular".into()))?;
    let residual = (p.transpose() * &mu - &mu).amax();
    if residual > 1e-10 {
        return Err(Error::NotErgodic(format!("stationary residual {residual:e}")));
    }
    Ok(mu)
}

pub fn stationary_distribution(mdp: &FiniteMdp, policy: &SoftmaxPolicy<'_>) -> Result<Vector> {
    stationary_of_chain(&mdp.induced_chain(&policy.table()))
}

/// `V^π = (I − γP^π)⁻¹ r^π`.
pub fn exact_value(mdp: &FiniteMdp, policy: &SoftmaxPolicy<'_>) -> Vector {
    let pi = policy.table();
    value_of_chain(&mdp.induced_chain(&pi), &mdp.induced_reward(&pi), mdp.gamma())
}

fn value_of_chain(p: &Matrix, r: &Vector, gamma: f64) -> Vector {
    let n = p.nrows();
    let a = Matrix::identity(n, n) - p * gamma;
    a.lu().solve(r).expect("I - γP is invertible for γ < 1")
}

/// `J = (1 − γ) start_distᵀ V^π`.
pub fn exact_j(mdp: &FiniteMdp, policy: &SoftmaxPolicy<'_>, start_dist: &Vector) -> f64 {
    (1.0 - mdp.gamma()) * start_dist.dot(&exact_value(mdp, policy))
}

/// The stationary T-step critic system `Φ̄ w = b̄` and its solution.
#[derive(Debug, Clone)]
pub struct CriticSystem {
    pub phi_bar: Matrix,
    pub b_bar: Vector,
    pub w_star: Vector,
}

impl CriticSystem {
    /// Expected semi-gradient `Φ̄ w − b̄` under the stationary frame law.
    pub fn mean_semi_gradient(&self, w: &Vector) -> Vector {
        &self.phi_bar * w - &self.b_bar
    }
}

/// Assembles `Φ̄ = Σ_s μ(s) φ(s)(φ(s) − γ^T[(P^π)^T Φ]_s)ᵀ` and
/// `b̄ = Σ_s μ(s) φ(s) Σ_{t<T} γ^t [(P^π)^t r^π]_s` for a given chain.
pub fn assemble_critic_system(
    feats: &FeatureSet,
    p: &Matrix,
    r: &Vector,
    mu: &Vector,
    gamma: f64,
    t_len: usize,
) -> Result<CriticSystem> {
    let (phi_bar, b_bar) = critic_moments(feats, p, r, mu, gamma, t_len);
    let w_star = linalg::solve_checked(&phi_bar, &b_bar, MAX_CONDITION)?;
    Ok(CriticSystem { phi_bar, b_bar, w_star })
}

/// `(Φ̄, b̄)` with the frame start drawn from `start` (not necessarily
/// stationary) and the frame itself following `p`.
pub fn critic_moments(
    feats: &FeatureSet,
    p: &Matrix,
    r: &Vector,
    start: &Vector,
    gamma: f64,
    t_len: usize,
) -> (Matrix, Vector) {
    let phi = feats.critic_matrix();
    let mut propagated = phi.clone();
    let mut reward_t = r.clone();
    let mut discounted = Vector::zeros(r.len());
    let mut g = 1.0;
    for _ in 0..t_len {
        discounted.axpy(g, &reward_t, 1.0);
        reward_t = p * &reward_t;
        propagated = p * &propagated;
        g *= gamma;
    }
    let gamma_t = gamma.powi(t_len as i32);
    let weighted = Matrix::from_fn(phi.nrows(), phi.ncols(), |s, j| start[s] * phi[(s, j)]);
    let phi_bar = weighted.transpose() * (phi - propagated * gamma_t);
    let b_bar = weighted.transpose() * discounted;
    (phi_bar, b_bar)
}

/// Optimal critic `w*(v)`: the zero of the stationary expected semi-gradient.
pub fn optimal_critic(
    mdp: &FiniteMdp,
    feats: &FeatureSet,
    policy: &SoftmaxPolicy<'_>,
    t_len: usize,
) -> Result<CriticSystem> {
    let pi = policy.table();
    let p = mdp.induced_chain(&pi);
    let mu = stationary_of_chain(&p)?;
    assemble_critic_system(feats, &p, &mdp.induced_reward(&pi), &mu, mdp.gamma(), t_len)
}

/// Exact policy gradient with the critic `w` standing in for the value
/// function:
///
/// `Σ_{s,a} d(s) π(a|s) [r(s,a) + γ P[s][a]·Φw − φ(s)ᵀw] ∇log π(a|s)`,
///
/// with `d = (1 − γ) start_distᵀ (I − γP^π)⁻¹`. With `w = w*` this is the
/// gradient the algorithm's actor targets.
pub fn exact_policy_gradient(
    mdp: &FiniteMdp,
    feats: &FeatureSet,
    policy: &SoftmaxPolicy<'_>,
    w: &Vector,
    start_dist: &Vector,
) -> Vector {
    let pi = policy.table();
    let p = mdp.induced_chain(&pi);
    let d = discounted_occupancy(&p, start_dist, mdp.gamma());
    gradient_with_occupancy(mdp, feats, policy, &pi, w, &d)
}

/// `d = (1 − γ) start_distᵀ (I − γP)⁻¹`, which sums to 1.
pub fn discounted_occupancy(p: &Matrix, start_dist: &Vector, gamma: f64) -> Vector {
    let n = p.nrows();
    let a = (Matrix::identity(n, n) - p * gamma).transpose();
    a.lu().solve(start_dist).expect("I - γP is invertible for γ < 1") * (1.0 - gamma)
}

fn gradient_with_occupancy(
    mdp: &FiniteMdp,
    feats: &FeatureSet,
    policy: &SoftmaxPolicy<'_>,
    pi: &Matrix,
    w: &Vector,
    d: &Vector,
) -> Vector {
    gradient_with_values(mdp, policy, pi, &feats.values(w), d)
}

fn gradient_with_values(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy<'_>,
    pi: &Matrix,
    values: &Vector,
    d: &Vector,
) -> Vector {
    let feats = policy.features();
    let gamma = mdp.gamma();
    let mut grad = Vector::zeros(feats.d_v());
    for s in 0..mdp.n_states() {
        if d[s] == 0.0 {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp
                .next_state_probs(s, a)
                .iter()
                .zip(values.iter())
                .map(|(q, v)| q * v)
                .sum();
            let td = mdp.reward(s, a) + gamma * next - values[s];
            grad.axpy(d[s] * pi[(s, a)] * td, &policy.score(s, a), 1.0);
        }
    }
    grad
}

/// Smallest eigenvalue of `Σ_s μ(s) φ(s)φ(s)ᵀ` and `σ = (1 − γ^T) λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub lambda_min: f64,
    pub sigma: f64,
}

pub fn feature_covariance(feats: &FeatureSet, mu: &Vector) -> Matrix {
    let phi = feats.critic_matrix();
    let weighted = Matrix::from_fn(phi.nrows(), phi.ncols(), |s, j| mu[s] * phi[(s, j)]);
    weighted.transpose() * phi
}

pub fn feature_conditioning(feats: &FeatureSet, mu: &Vector, gamma: f64, t_len: usize) -> Result<Conditioning> {
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::DomainError(
            "feature conditioning needs a strictly positive distribution".into(),
        ));
    }
    let lambda_min = linalg::min_symmetric_eigenvalue(&feature_covariance(feats, mu));
    if lambda_min <= LAMBDA_FLOOR {
        return Err(Error::RankDeficientFeatures(format!(
            "smallest eigenvalue of the stationary feature covariance is {lambda_min:e}"
        )));
    }
    // ‖φ‖ ≤ 1 forces λ ≤ 1; equality only for a single constant unit feature.
    debug_assert!(lambda_min <= 1.0 + 1e-12, "lambda_min = {lambda_min}");
    Ok(Conditioning {
        lambda_min,
        sigma: (1.0 - gamma.powi(t_len as i32)) * lambda_min,
    })
}

/// Default projection radius `R_w = R_r / (1 − γ)`.
pub fn default_radius(mdp: &FiniteMdp) -> f64 {
    mdp.r_max() / (1.0 - mdp.gamma())
}

/// Heuristic stand-in for the Mitrophanov perturbation constant when no
/// empirical estimate is available: `c₀ / (1 − ρ)`.
pub fn heuristic_c2(c0: f64, rho: f64) -> f64 {
    c0 / (1.0 - rho)
}

/// Inputs of the closed-form constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsInput {
    pub gamma: f64,
    pub t_len: usize,
    pub r_r: f64,
    pub r_w: f64,
    pub n_actions: usize,
    pub eta1: f64,
    pub sigma: f64,
    pub c2: f64,
}

/// Closed-form constants of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalConstants {
    pub input: ConstantsInput,
    pub c1: f64,
    pub r_g: f64,
    pub r_h: f64,
    pub r_pi: f64,
    pub l_pi: f64,
    pub sigma: f64,
    pub g_star: f64,
    pub l_star: f64,
    pub c5: f64,
    pub c3: f64,
    pub c4: f64,
}

pub fn constants(input: ConstantsInput) -> TheoreticalConstants {
    let ConstantsInput {
        gamma,
        t_len,
        r_r,
        r_w,
        n_actions,
        eta1,
        sigma,
        c2,
    } = input;
    let gt = gamma.powi(t_len as i32);
    let r_pi = SCORE_BOUND;
    let l_pi = POLICY_LIPSCHITZ;
    let na = n_actions as f64;
    let c1 = (1.0 - gt) / (1.0 - gamma);
    let r_g = (1.0 + gt) * r_w + c1 * r_r;
    let r_h = r_pi * (r_r + (1.0 + gamma) * r_w);
    let g_star = r_pi / sigma * (c1 * r_r + (1.0 + gt) * r_w);
    let l_star = (1.0 + c2 + 2.0 * (1.0 + gt) * c2 / sigma) / sigma * c1 * r_r * na * l_pi;
    let c5 =
        (1.0 + 4.0 * (1.0 + gamma).powi(2) * r_pi * r_pi + 4.0 * (1.0 + gamma) * r_pi * g_star + 8.0 * g_star * g_star)
            / (4.0 * sigma);
    let c3 = ((1.0 + eta1) * l_star + 2.0 * eta1 * (c2 + 2.0 * t_len as f64) * na * l_pi * r_w) * r_g;
    let c4 = (2.0 * eta1 * (r_g + 9.0 * r_w) + (1.0 - eta1) * r_g) * r_g;
    TheoreticalConstants {
        input,
        c1,
        r_g,
        r_h,
        r_pi,
        l_pi,
        sigma,
        g_star,
        l_star,
        c5,
        c3,
        c4,
    }
}

impl TheoreticalConstants {
    /// The `O(1/K)` term `2(1 − η₁) R_w R_g c₅ / (η₁ K)` of the unified rate.
    pub fn initialization_term(&self, k: usize) -> f64 {
        let eta1 = self.input.eta1;
        2.0 * (1.0 - eta1) * self.input.r_w * self.r_g * self.c5 / (eta1 * k as f64)
    }
}

/// All exact quantities for one instance at one actor parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceOracle {
    pub v: Vec<f64>,
    pub t_len: usize,
    pub mu: Vec<f64>,
    #[serde(rename = "V")]
    pub values: Vec<f64>,
    pub w_star: Vec<f64>,
    pub grad_j: Vec<f64>,
    pub j: f64,
    pub lambda_min: f64,
    pub sigma: f64,
    pub w_star_exceeds_radius: bool,
}

/// Per-policy cache shared by every quantity evaluated at the same `v`.
pub struct PolicyOracle<'a> {
    mdp: &'a FiniteMdp,
    feats: &'a FeatureSet,
    policy: SoftmaxPolicy<'a>,
    pi: Matrix,
    p: Matrix,
    r: Vector,
    mu: Vector,
}

impl<'a> PolicyOracle<'a> {
    pub fn new(mdp: &'a FiniteMdp, feats: &'a FeatureSet, v: &Vector) -> Result<Self> {
        if mdp.n_states() > MAX_STATES {
            return Err(Error::DomainError(format!(
                "dense oracles are limited to {MAX_STATES} states"
            )));
        }
        let policy = SoftmaxPolicy::new(v.clone(), feats)?;
        let pi = policy.table();
        let p = mdp.induced_chain(&pi);
        let r = mdp.induced_reward(&pi);
        let mu = stationary_of_chain(&p)?;
        Ok(Self {
            mdp,
            feats,
            policy,
            pi,
            p,
            r,
            mu,
        })
    }

    pub fn policy(&self) -> &SoftmaxPolicy<'a> {
        &self.policy
    }

    pub fn chain(&self) -> &Matrix {
        &self.p
    }

    pub fn policy_table(&self) -> &Matrix {
        &self.pi
    }

    pub fn mu(&self) -> &Vector {
        &self.mu
    }

    pub fn values(&self) -> Vector {
        value_of_chain(&self.p, &self.r, self.mdp.gamma())
    }

    pub fn critic_system(&self, t_len: usize) -> Result<CriticSystem> {
        assemble_critic_system(self.feats, &self.p, &self.r, &self.mu, self.mdp.gamma(), t_len)
    }

    pub fn j(&self, start: &StartDist) -> Result<f64> {
        let start = start.resolve(&self.mu)?;
        Ok((1.0 - self.mdp.gamma()) * start.dot(&self.values()))
    }

    pub fn policy_gradient(&self, w: &Vector, start: &StartDist) -> Result<Vector> {
        let start = start.resolve(&self.mu)?;
        let d = match start_is_stationary(&start, &self.mu) {
            true => self.mu.clone(),
            false => discounted_occupancy(&self.p, &start, self.mdp.gamma()),
        };
        Ok(gradient_with_occupancy(
            self.mdp,
            self.feats,
            &self.policy,
            &self.pi,
            w,
            &d,
        ))
    }

    /// Policy gradient with the exact `V^π` in place of a critic.
    pub fn true_gradient(&self, start: &StartDist) -> Result<Vector> {
        let start = start.resolve(&self.mu)?;
        let d = match start_is_stationary(&start, &self.mu) {
            true => self.mu.clone(),
            false => discounted_occupancy(&self.p, &start, self.mdp.gamma()),
        };
        Ok(gradient_with_values(
            self.mdp,
            &self.policy,
            &self.pi,
            &self.values(),
            &d,
        ))
    }

    pub fn conditioning(&self, t_len: usize) -> Result<Conditioning> {
        feature_conditioning(self.feats, &self.mu, self.mdp.gamma(), t_len)
    }

    /// Full oracle record at this policy.
    pub fn report(&self, t_len: usize, r_w: f64, start: &StartDist) -> Result<InstanceOracle> {
        let system = self.critic_system(t_len)?;
        let exceeds = system.w_star.norm() > r_w;
        if exceeds {
            warn!(
                "optimal critic norm {} exceeds the projection radius {r_w}",
                system.w_star.norm()
            );
        }
        let cond = self.conditioning(t_len)?;
        let grad = self.policy_gradient(&system.w_star, start)?;
        Ok(InstanceOracle {
            v: self.policy.params().iter().cloned().collect(),
            t_len,
            mu: self.mu.iter().cloned().collect(),
            values: self.values().iter().cloned().collect(),
            w_star: system.w_star.iter().cloned().collect(),
            grad_j: grad.iter().cloned().collect(),
            j: self.j(start)?,
            lambda_min: cond.lambda_min,
            sigma: cond.sigma,
            w_star_exceeds_radius: exceeds,
        })
    }
}

// Under the stationary start the discounted occupancy is μ itself.
fn start_is_stationary(start: &Vector, mu: &Vector) -> bool {
    start.iter().zip(mu.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
}
