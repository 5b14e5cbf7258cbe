//! Finite MDPs, feature embeddings, the softmax-linear policy and frame
//! sampling.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::GeneratorParams;
use crate::linalg::{self, Matrix, Vector};
use crate::rng::categorical;

/// Tolerance for row sums of transition probabilities.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Slack allowed on `‖φ(s)‖ ≤ 1` and `‖ψ(s,a)‖ ≤ 1` for rounding of scaled features.
pub const FEATURE_NORM_TOL: f64 = 1e-12;
/// Relative singular-value floor for the full-column-rank test.
pub const RANK_TOL: f64 = 1e-10;

/// The quintuple (S, A, P, r, γ) with finite state and action sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    gamma: f64,
    r_max: f64,
}

impl FiniteMdp {
    /// Shape-checked constructor. Probabilistic properties are left to
    /// [`validate_instance`] so that malformed inputs get a precise report.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, gamma: f64, r_max: f64) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::DimensionMismatch("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::DimensionMismatch("no actions".into()));
        }
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "transition[{s}] has {} actions, expected {n_actions}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "transition[{s}][{a}] has length {}, expected {n_states}",
                        row.len()
                    )));
                }
            }
        }
        if reward.len() != n_states || reward.iter().any(|r| r.len() != n_actions) {
            return Err(Error::DimensionMismatch(format!(
                "reward table must be {n_states} x {n_actions}"
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            r_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Successor distribution `P[s][a][·]`.
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    pub fn transition(&self) -> &[Vec<Vec<f64>>] {
        &self.transition
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.reward
    }

    /// `P^π[s][s'] = Σ_a π(a|s) P[s][a][s']` for a policy table `pi[s][a]`.
    pub fn induced_chain(&self, pi: &Matrix) -> Matrix {
        let n = self.n_states;
        let mut p = Matrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = pi[(s, a)];
                if w == 0.0 {
                    continue;
                }
                for (sp, &q) in self.transition[s][a].iter().enumerate() {
                    p[(s, sp)] += w * q;
                }
            }
        }
        p
    }

    /// `r^π(s) = Σ_a π(a|s) r(s,a)`.
    pub fn induced_reward(&self, pi: &Matrix) -> Vector {
        Vector::from_iterator(
            self.n_states,
            (0..self.n_states).map(|s| (0..self.n_actions).map(|a| pi[(s, a)] * self.reward[s][a]).sum()),
        )
    }
}

/// Critic features `φ(s) ∈ R^{d_w}` and policy features `ψ(s,a) ∈ R^{d_v}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// Row `s` is `φ(s)`.
    critic: Matrix,
    /// Row `s * n_actions + a` is `ψ(s,a)`.
    policy: Matrix,
    n_actions: usize,
}

impl FeatureSet {
    pub fn new(critic: Matrix, policy: Matrix, n_actions: usize) -> Result<Self> {
        if critic.ncols() == 0 || policy.ncols() == 0 {
            return Err(Error::DimensionMismatch("feature dimension must be positive".into()));
        }
        if n_actions == 0 || policy.nrows() != critic.nrows() * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy features have {} rows, expected {} states x {n_actions} actions",
                policy.nrows(),
                critic.nrows()
            )));
        }
        Ok(Self {
            critic,
            policy,
            n_actions,
        })
    }

    /// Builds features from nested rows `critic[s]` and `policy[s][a]`.
    pub fn from_rows(critic: &[Vec<f64>], policy: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n = critic.len();
        if n == 0 || policy.len() != n {
            return Err(Error::DimensionMismatch("feature tables must cover every state".into()));
        }
        let d_w = critic[0].len();
        if critic.iter().any(|r| r.len() != d_w) {
            return Err(Error::DimensionMismatch("ragged critic features".into()));
        }
        let n_actions = policy[0].len();
        let d_v = policy[0].first().map_or(0, |r| r.len());
        if policy
            .iter()
            .any(|rows| rows.len() != n_actions || rows.iter().any(|r| r.len() != d_v))
        {
            return Err(Error::DimensionMismatch("ragged policy features".into()));
        }
        let critic = Matrix::from_fn(n, d_w, |s, j| critic[s][j]);
        let policy = Matrix::from_fn(n * n_actions, d_v, |i, j| policy[i / n_actions][i % n_actions][j]);
        Self::new(critic, policy, n_actions)
    }

    /// One-hot critic features (`Φ = I`) and tabular policy features.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let critic = Matrix::identity(n_states, n_states);
        let policy = Matrix::identity(n_states * n_actions, n_states * n_actions);
        Self {
            critic,
            policy,
            n_actions,
        }
    }

    pub fn n_states(&self) -> usize {
        self.critic.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn d_w(&self) -> usize {
        self.critic.ncols()
    }

    pub fn d_v(&self) -> usize {
        self.policy.ncols()
    }

    pub fn phi(&self, s: usize) -> Vector {
        self.critic.row(s).transpose()
    }

    pub fn psi(&self, s: usize, a: usize) -> Vector {
        self.policy.row(s * self.n_actions + a).transpose()
    }

    /// Critic feature matrix with rows `φ(s)`.
    pub fn critic_matrix(&self) -> &Matrix {
        &self.critic
    }

    pub fn policy_matrix(&self) -> &Matrix {
        &self.policy
    }

    /// `V_w(s) = φ(s)ᵀ w` for every state.
    pub fn values(&self, w: &Vector) -> Vector {
        &self.critic * w
    }
}

/// Softmax-linear policy `π_v(a|s) ∝ exp(ψ(s,a)ᵀ v)`.
#[derive(Debug, Clone)]
pub struct SoftmaxPolicy<'a> {
    v: Vector,
    feats: &'a FeatureSet,
}

/// Upper bound on `‖∇log π_v(a|s)‖` for features with `‖ψ‖ ≤ 1`.
pub const SCORE_BOUND: f64 = 2.0;
/// Lipschitz constant of `v ↦ π_v(a|s)` used by the analysis for `‖ψ‖ ≤ 1`.
pub const POLICY_LIPSCHITZ: f64 = 1.0;

impl<'a> SoftmaxPolicy<'a> {
    pub fn new(v: Vector, feats: &'a FeatureSet) -> Result<Self> {
        if v.len() != feats.d_v() {
            return Err(Error::DimensionMismatch(format!(
                "actor parameter has length {}, features have d_v = {}",
                v.len(),
                feats.d_v()
            )));
        }
        Ok(Self { v, feats })
    }

    pub fn params(&self) -> &Vector {
        &self.v
    }

    pub fn features(&self) -> &'a FeatureSet {
        self.feats
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        (0..self.feats.n_actions())
            .map(|a| {
                self.feats
                    .policy
                    .row(s * self.feats.n_actions + a)
                    .dot(&self.v.transpose())
            })
            .collect()
    }

    /// Action distribution `π_v(·|s)`.
    pub fn probabilities(&self, s: usize) -> Vec<f64> {
        let logits = self.logits(s);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let logits = self.logits(s);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[a] - lse
    }

    /// `∇_v log π_v(a|s) = ψ(s,a) − Σ_b π_v(b|s) ψ(s,b)`.
    pub fn score(&self, s: usize, a: usize) -> Vector {
        let probs = self.probabilities(s);
        let mut mean = Vector::zeros(self.feats.d_v());
        for (b, p) in probs.iter().enumerate() {
            mean.axpy(*p, &self.feats.psi(s, b), 1.0);
        }
        self.feats.psi(s, a) - mean
    }

    /// Full policy table with `table[(s, a)] = π_v(a|s)`.
    pub fn table(&self) -> Matrix {
        let n = self.feats.n_states();
        let na = self.feats.n_actions();
        let mut t = Matrix::zeros(n, na);
        for s in 0..n {
            for (a, p) in self.probabilities(s).into_iter().enumerate() {
                t[(s, a)] = p;
            }
        }
        t
    }
}

/// One fine-grain step `(s_t, a_t, r_t, s_{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A T-step window of contiguous observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    observations: Vec<Observation>,
}

impl Frame {
    /// Builds a frame from explicit observations, checking that they chain.
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::DomainError("a frame needs at least one observation".into()));
        }
        for (t, pair) in observations.windows(2).enumerate() {
            if pair[0].next_state != pair[1].state {
                return Err(Error::DomainError(format!(
                    "observation {t} ends in {} but observation {} starts in {}",
                    pair[0].next_state,
                    t + 1,
                    pair[1].state
                )));
            }
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// `s_{k,0}`.
    pub fn start_state(&self) -> usize {
        self.observations[0].state
    }

    /// `s_{k,T}`.
    pub fn end_state(&self) -> usize {
        self.observations[self.observations.len() - 1].next_state
    }
}

/// Rolls out `t_len` steps of `policy` from `start_state`.
///
/// Each step draws two uniforms from `rng`, first for the action and then
/// for the successor state, so the randomness consumed per frame is fixed.
pub fn sample_frame<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy<'_>,
    start_state: usize,
    t_len: usize,
    rng: &mut R,
) -> Result<Frame> {
    if t_len == 0 {
        return Err(Error::DomainError("frame length T must be at least 1".into()));
    }
    if start_state >= mdp.n_states() {
        return Err(Error::DomainError(format!("start state {start_state} out of range")));
    }
    let mut observations = Vec::with_capacity(t_len);
    let mut s = start_state;
    for _ in 0..t_len {
        let a = categorical(&policy.probabilities(s), rng.random::<f64>());
        let next = categorical(mdp.next_state_probs(s, a), rng.random::<f64>());
        observations.push(Observation {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
            next_state: next,
        });
        s = next;
    }
    Ok(Frame { observations })
}

/// Facts established by [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub d_w: usize,
    pub d_v: usize,
    pub max_row_deviation: f64,
    pub max_critic_feature_norm: f64,
    pub max_policy_feature_norm: f64,
    pub critic_min_singular_value: f64,
    pub uniform_policy_ergodic: bool,
}

/// Checks every structural assumption on an instance and fails with the first
/// violated property.
pub fn validate_instance(mdp: &FiniteMdp, feats: &FeatureSet) -> Result<ValidationReport> {
    if feats.n_states() != mdp.n_states() || feats.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "features cover {} states x {} actions, MDP has {} x {}",
            feats.n_states(),
            feats.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let mut max_row_deviation: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let row = mdp.next_state_probs(s, a);
            let sum: f64 = row.iter().sum();
            let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
            if !sum.is_finite() || (sum - 1.0).abs() > STOCHASTIC_TOL || min < 0.0 {
                return Err(Error::NonStochasticRow {
                    state: s,
                    action: a,
                    sum,
                    min,
                });
            }
            max_row_deviation = max_row_deviation.max((sum - 1.0).abs());
        }
    }
    if !(mdp.r_max().is_finite() && mdp.r_max() >= 0.0) {
        return Err(Error::DomainError(format!(
            "r_max = {} must be finite and nonnegative",
            mdp.r_max()
        )));
    }
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let r = mdp.reward(s, a);
            if !(r.abs() <= mdp.r_max()) {
                return Err(Error::RewardOutOfRange {
                    state: s,
                    action: a,
                    value: r,
                    r_max: mdp.r_max(),
                });
            }
        }
    }
    if !(mdp.gamma() > 0.0 && mdp.gamma() < 1.0) {
        return Err(Error::InvalidDiscount(mdp.gamma()));
    }
    let mut max_critic_feature_norm: f64 = 0.0;
    for s in 0..feats.n_states() {
        let norm = feats.phi(s).norm();
        if !(norm <= 1.0 + FEATURE_NORM_TOL) {
            return Err(Error::FeatureNormExceeded {
                kind: "critic",
                location: format!("state {s}"),
                norm,
            });
        }
        max_critic_feature_norm = max_critic_feature_norm.max(norm);
    }
    let mut max_policy_feature_norm: f64 = 0.0;
    for s in 0..feats.n_states() {
        for a in 0..feats.n_actions() {
            let norm = feats.psi(s, a).norm();
            if !(norm <= 1.0 + FEATURE_NORM_TOL) {
                return Err(Error::FeatureNormExceeded {
                    kind: "policy",
                    location: format!("state {s}, action {a}"),
                    norm,
                });
            }
            max_policy_feature_norm = max_policy_feature_norm.max(norm);
        }
    }
    if feats.d_w() > feats.n_states() {
        return Err(Error::RankDeficientFeatures(format!(
            "d_w = {} exceeds the number of states {}",
            feats.d_w(),
            feats.n_states()
        )));
    }
    let sv = feats.critic_matrix().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > RANK_TOL * smax.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficientFeatures(format!(
            "smallest singular value {smin:e} vs largest {smax:e}"
        )));
    }
    let uniform = Matrix::from_element(mdp.n_states(), mdp.n_actions(), 1.0 / mdp.n_actions() as f64);
    let chain = mdp.induced_chain(&uniform);
    if !linalg::is_primitive(&chain) {
        let why = if linalg::is_irreducible(&chain) {
            "periodic"
        } else {
            "reducible"
        };
        return Err(Error::NotErgodic(format!("chain under the uniform policy is {why}")));
    }
    Ok(ValidationReport {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        d_w: feats.d_w(),
        d_v: feats.d_v(),
        max_row_deviation,
        max_critic_feature_norm,
        max_policy_feature_norm,
        critic_min_singular_value: smin,
        uniform_policy_ergodic: true,
    })
}

/// An MDP together with its features, as stored in an instance file.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mdp: FiniteMdp,
    pub feats: FeatureSet,
    pub generator: Option<GeneratorParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    gamma: f64,
    #[serde(default)]
    r_max: Option<f64>,
    features: FeatureFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureFile {
    critic: Vec<Vec<f64>>,
    policy: Vec<Vec<Vec<f64>>>,
}

impl Instance {
    pub fn new(mdp: FiniteMdp, feats: FeatureSet) -> Self {
        Self {
            mdp,
            feats,
            generator: None,
        }
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_instance(&self.mdp, &self.feats)
    }

    pub fn to_json(&self) -> Result<String> {
        let feats = &self.feats;
        let file = InstanceFile {
            n_states: self.mdp.n_states(),
            n_actions: self.mdp.n_actions(),
            transition: self.mdp.transition.clone(),
            reward: self.mdp.reward.clone(),
            gamma: self.mdp.gamma(),
            r_max: Some(self.mdp.r_max()),
            features: FeatureFile {
                critic: (0..feats.n_states())
                    .map(|s| feats.phi(s).iter().cloned().collect())
                    .collect(),
                policy: (0..feats.n_states())
                    .map(|s| {
                        (0..feats.n_actions())
                            .map(|a| feats.psi(s, a).iter().cloned().collect())
                            .collect()
                    })
                    .collect(),
            },
            generator: self.generator.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses an instance file. Shapes are checked here; call
    /// [`Instance::validate`] for the probabilistic assumptions.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.transition.len() != file.n_states {
            return Err(Error::DimensionMismatch(format!(
                "n_states = {} but transition has {} rows",
                file.n_states,
                file.transition.len()
            )));
        }
        if file.transition.first().map_or(0, |r| r.len()) != file.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "n_actions = {} does not match the transition tensor",
                file.n_actions
            )));
        }
        let r_max = file
            .r_max
            .unwrap_or_else(|| file.reward.iter().flatten().fold(0.0_f64, |m, r| m.max(r.abs())));
        let mdp = FiniteMdp::new(file.transition, file.reward, file.gamma, r_max)?;
        let feats = FeatureSet::from_rows(&file.features.critic, &file.features.policy)?;
        Ok(Self {
            mdp,
            feats,
            generator: file.generator,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_state_half() -> (FiniteMdp, FeatureSet) {
        let mdp = FiniteMdp::new(
            vec![vec![vec![0.5, 0.5]; 2]; 2],
            vec![vec![1.0, 0.0], vec![0.0, -1.0]],
            0.9,
            1.0,
        )
        .unwrap();
        (mdp, FeatureSet::one_hot(2, 2))
    }

    #[test]
    fn doubly_stochastic_one_hot_is_valid() {
        let (mdp, feats) = two_state_half();
        let report = validate_instance(&mdp, &feats).unwrap();
        assert!(report.uniform_policy_ergodic);
        assert_eq!(report.d_w, 2);
    }

    #[test]
    fn oversized_feature_is_rejected() {
        let (mdp, _) = two_state_half();
        let feats = FeatureSet::from_rows(
            &[vec![2.0, 0.0], vec![0.0, 1.0]],
            &[vec![vec![1.0], vec![0.0]], vec![vec![0.0], vec![1.0]]],
        )
        .unwrap();
        assert!(matches!(
            validate_instance(&mdp, &feats),
            Err(Error::FeatureNormExceeded { kind: "critic", .. })
        ));
    }

    #[test]
    fn absorbing_states_are_not_ergodic() {
        let mdp = FiniteMdp::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![0.0]],
            0.9,
            1.0,
        )
        .unwrap();
        let feats = FeatureSet::one_hot(2, 1);
        assert!(matches!(validate_instance(&mdp, &feats), Err(Error::NotErgodic(_))));
    }

    #[test]
    fn non_stochastic_row_and_rank_deficiency() {
        let mdp = FiniteMdp::new(
            vec![vec![vec![0.6, 0.5]], vec![vec![0.5, 0.5]]],
            vec![vec![0.0], vec![0.0]],
            0.9,
            1.0,
        )
        .unwrap();
        let feats = FeatureSet::one_hot(2, 1);
        assert!(matches!(
            validate_instance(&mdp, &feats),
            Err(Error::NonStochasticRow {
                state: 0,
                action: 0,
                ..
            })
        ));

        let (mdp, _) = two_state_half();
        let dup = FeatureSet::from_rows(
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            &[vec![vec![1.0], vec![0.0]], vec![vec![0.0], vec![1.0]]],
        )
        .unwrap();
        assert!(matches!(
            validate_instance(&mdp, &dup),
            Err(Error::RankDeficientFeatures(_))
        ));
    }

    #[test]
    fn policy_examples() {
        let feats = FeatureSet::from_rows(&[vec![1.0]], &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap();
        let uniform = SoftmaxPolicy::new(Vector::zeros(2), &feats).unwrap();
        assert_eq!(uniform.probabilities(0), vec![0.5, 0.5]);
        let score = uniform.score(0, 0);
        assert_eq!(score.as_slice(), &[0.5, -0.5]);

        let tilted = SoftmaxPolicy::new(Vector::from_vec(vec![3f64.ln(), 0.0]), &feats).unwrap();
        let p = tilted.probabilities(0);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);

        let single = FeatureSet::from_rows(&[vec![1.0]], &[vec![vec![0.6, 0.8]]]).unwrap();
        let pol = SoftmaxPolicy::new(Vector::from_vec(vec![1.0, -2.0]), &single).unwrap();
        assert_eq!(pol.probabilities(0), vec![1.0]);
        assert_eq!(pol.score(0, 0).norm(), 0.0);
    }

    #[test]
    fn deterministic_chain_gives_unique_path() {
        // 0 -> 1 -> 2 -> 0 regardless of action
        let cyc = |s: usize| {
            let mut row = vec![0.0; 3];
            row[(s + 1) % 3] = 1.0;
            row
        };
        let mdp = FiniteMdp::new(
            (0..3).map(|s| vec![cyc(s), cyc(s)]).collect(),
            vec![vec![0.0, 1.0]; 3],
            0.5,
            1.0,
        )
        .unwrap();
        let feats = FeatureSet::one_hot(3, 2);
        let pol = SoftmaxPolicy::new(Vector::zeros(6), &feats).unwrap();
        for seed in 0..5 {
            let frame = sample_frame(&mdp, &pol, 1, 4, &mut rng::frame_rng(seed, 0)).unwrap();
            let states: Vec<usize> = frame.observations().iter().map(|o| o.state).collect();
            assert_eq!(states, vec![1, 2, 0, 1]);
            assert_eq!(frame.end_state(), 2);
        }
        let one = sample_frame(&mdp, &pol, 0, 1, &mut rng::frame_rng(0, 0)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.end_state(), 1);
    }

    #[test]
    fn instance_json_round_trip() {
        let (mdp, feats) = two_state_half();
        let inst = Instance::new(mdp, feats);
        let text = inst.to_json().unwrap();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
