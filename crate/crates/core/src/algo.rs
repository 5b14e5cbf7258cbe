//! The HB-A2C recursion.
//!
//! Per frame `k`, in this order:
//!
//! 1. roll out `O_k` (T steps) under `π_{v_k}` from `s_{k,0} = s_{k-1,T}`;
//! 2. semi-gradient `g = Φ_k w_k − b_k`;
//! 3. momentum `n_k = (1 − η₁) n_{k-1} + η₁ g`, then `w_{k+1} = Π_{R_w}[w_k − β n_k]`;
//! 4. policy gradient `H(v_k, w_k; O_k) = (1 − γ) Σ_t γ^t h(v_k, w_k; o_{k,t})`;
//! 5. actor ascent `v_{k+1} = v_k + α H`.
//!
//! The policy gradient in step 4 uses the pre-update critic `w_k`, matching
//! the argument of `H` in the actor recursion, even though the critic update
//! is performed first.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::mdp::{sample_frame, FeatureSet, FiniteMdp, Frame, Observation, SoftmaxPolicy, SCORE_BOUND};
use crate::rng::{self, categorical};
use rand::Rng;

/// `(v_k, w_k, n_{k-1}, k)`: actor, projected critic and momentum buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticState {
    pub v: Vector,
    pub w: Vector,
    pub n: Vector,
    pub k: usize,
}

/// Mixing envelope `(c₀, ρ)` used to enforce the minimum frame length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingBound {
    pub c0: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta1: f64,
    pub t_len: usize,
    pub r_w: f64,
    pub k_frames: usize,
    /// When set, `t_len` must be at least [`min_trajectory_length`].
    #[serde(default)]
    pub enforce_t: Option<MixingBound>,
}

impl HyperParams {
    pub fn validate(&self, gamma: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperParams(m));
        // zero stepsizes are accepted: frozen-actor / frozen-critic diagnostics
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be finite and nonnegative", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be finite and nonnegative", self.beta));
        }
        if !(self.eta1 > 0.0 && self.eta1 <= 1.0) {
            return bad(format!("eta1 = {} must lie in (0, 1]", self.eta1));
        }
        if self.t_len == 0 {
            return bad("T must be at least 1".into());
        }
        if !(self.r_w > 0.0 && self.r_w.is_finite()) {
            return bad(format!("R_w = {} must be positive", self.r_w));
        }
        if let Some(mix) = self.enforce_t {
            let t_min = min_trajectory_length(self.beta, gamma, mix.c0, mix.rho)
                .map_err(|e| Error::InvalidHyperParams(format!("cannot enforce T: {e}")))?;
            if self.t_len < t_min {
                return bad(format!(
                    "T = {} is below the minimum trajectory length {t_min}",
                    self.t_len
                ));
            }
        }
        Ok(())
    }
}

/// Stochastic semi-gradient `g(w; O) = φ₀(φ₀ − γ^T φ_T)ᵀ w − φ₀ Σ_t γ^t r_t`.
pub fn semi_gradient(feats: &FeatureSet, w: &Vector, frame: &Frame, gamma: f64) -> Vector {
    let t_len = frame.len();
    let phi0 = feats.phi(frame.start_state());
    let phi_t = feats.phi(frame.end_state());
    let gt = gamma.powi(t_len as i32);
    let mut ret = 0.0;
    let mut g = 1.0;
    for obs in frame.observations() {
        ret += g * obs.reward;
        g *= gamma;
    }
    let coeff = (&phi0 - &phi_t * gt).dot(w) - ret;
    phi0 * coeff
}

/// `n_k = (1 − η₁) n_{k-1} + η₁ g`.
pub fn momentum_step(n_prev: &Vector, g: &Vector, eta1: f64) -> Vector {
    n_prev * (1.0 - eta1) + g * eta1
}

/// `Π_{R_w}[w − β n]` with the Euclidean ball projection.
pub fn critic_step(w: &Vector, n: &Vector, beta: f64, r_w: f64) -> Vector {
    linalg::project_ball(w - n * beta, r_w)
}

/// TD-error-weighted score `[r + (γφ(s') − φ(s))ᵀ w] ∇log π_v(a|s)`.
pub fn advantage_score(policy: &SoftmaxPolicy<'_>, w: &Vector, obs: &Observation, gamma: f64) -> Vector {
    let feats = policy.features();
    let td = obs.reward + (feats.phi(obs.next_state) * gamma - feats.phi(obs.state)).dot(w);
    policy.score(obs.state, obs.action) * td
}

/// `H(v, w; O) = (1 − γ) Σ_{t<T} γ^t h(v, w; o_t)`.
pub fn policy_gradient_estimate(policy: &SoftmaxPolicy<'_>, w: &Vector, frame: &Frame, gamma: f64) -> Vector {
    let mut acc = Vector::zeros(policy.features().d_v());
    let mut g = 1.0;
    for obs in frame.observations() {
        acc.axpy(g, &advantage_score(policy, w, obs, gamma), 1.0);
        g *= gamma;
    }
    acc * (1.0 - gamma)
}

/// `v + α H`.
pub fn actor_step(v: &Vector, h: &Vector, alpha: f64) -> Vector {
    v + h * alpha
}

/// Smallest frame length satisfying
/// `T ≥ max{ log(β/c₀)/log ρ, log β/(2 log γ) }`, floored at 1.
///
/// A `1e-9` guard absorbs rounding when the bound is an exact integer.
pub fn min_trajectory_length(beta: f64, gamma: f64, c0: f64, rho: f64) -> Result<usize> {
    let open_unit = |x: f64| x > 0.0 && x < 1.0;
    if !open_unit(beta) {
        return Err(Error::DomainError(format!("beta = {beta} must lie in (0, 1)")));
    }
    if !open_unit(gamma) {
        return Err(Error::DomainError(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    if !open_unit(rho) {
        return Err(Error::DomainError(format!("rho = {rho} must lie in (0, 1)")));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::DomainError(format!("c0 = {c0} must be positive")));
    }
    let mixing = (beta / c0).ln() / rho.ln();
    let discount = beta.ln() / (2.0 * gamma.ln());
    let t = mixing.max(discount);
    Ok(((t - 1e-9).ceil().max(1.0)) as usize)
}

/// Bounds `R_g` and `R_h` for the run's `(γ, T, R_r, R_w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientBounds {
    pub r_g: f64,
    pub r_h: f64,
}

impl GradientBounds {
    pub fn new(gamma: f64, t_len: usize, r_r: f64, r_w: f64) -> Self {
        let gt = gamma.powi(t_len as i32);
        let c1 = (1.0 - gt) / (1.0 - gamma);
        Self {
            r_g: (1.0 + gt) * r_w + c1 * r_r,
            r_h: SCORE_BOUND * (r_r + (1.0 + gamma) * r_w),
        }
    }
}

/// How the critic consumes the semi-gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticRule {
    #[default]
    HeavyBall,
    /// `w_{k+1} = Π[w_k − β g_k]`, with the buffer set to `g_k` for logging.
    PlainSemiGradient,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Initial actor parameter; zero when absent.
    pub v0: Option<Vec<f64>>,
    /// Initial critic parameter; zero when absent.
    pub w0: Option<Vec<f64>>,
    /// Distribution of `s_{0,0}`; uniform when absent.
    pub initial_dist: Option<Vec<f64>>,
    pub critic_rule: CriticRule,
}

/// Oracle metrics for one frame, evaluated at the pre-update `(v_k, w_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub grad_norm_sq: f64,
    pub delta_norm_sq: f64,
    pub j: f64,
}

impl FrameMetrics {
    pub const MISSING: FrameMetrics = FrameMetrics {
        grad_norm_sq: f64::NAN,
        delta_norm_sq: f64::NAN,
        j: f64::NAN,
    };
}

/// Per-frame instrumentation of a run.
pub trait FrameHook {
    fn metrics(&mut self, k: usize, v: &Vector, w: &Vector) -> Result<FrameMetrics>;

    /// Replaces `w_k` before it is used, e.g. by the oracle critic `w*(v_k)`.
    fn critic_override(&mut self, _k: usize, _v: &Vector) -> Result<Option<Vector>> {
        Ok(None)
    }
}

/// Hook that records nothing.
pub struct NoOracle;

impl FrameHook for NoOracle {
    fn metrics(&mut self, _k: usize, _v: &Vector, _w: &Vector) -> Result<FrameMetrics> {
        Ok(FrameMetrics::MISSING)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub k: usize,
    pub grad_norm_sq: f64,
    pub delta_norm_sq: f64,
    pub j: f64,
    /// `‖w_k‖`
    pub w_norm: f64,
    /// `‖n_k‖`
    pub n_norm: f64,
    /// `‖v_{k+1} − v_k‖`
    pub v_drift: f64,
    /// `‖w_{k+1} − w_k‖`
    pub w_drift: f64,
}

pub const RUN_LOG_COLUMNS: [&str; 8] = [
    "k",
    "grad_norm_sq",
    "delta_norm_sq",
    "J",
    "w_norm",
    "n_norm",
    "v_drift",
    "w_drift",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub hp: HyperParams,
    pub records: Vec<FrameRecord>,
    pub final_state: ActorCriticState,
    /// Frames where a gradient exceeded `R_g` or `R_h` (release builds only;
    /// debug builds panic instead).
    pub bound_violations: usize,
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", RUN_LOG_COLUMNS.join(","))?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.k, r.grad_norm_sq, r.delta_norm_sq, r.j, r.w_norm, r.n_norm, r.v_drift, r.w_drift
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// Runs HB-A2C with default options and no oracle instrumentation.
pub fn run_hb_a2c(mdp: &FiniteMdp, feats: &FeatureSet, hp: &HyperParams, seed: u64) -> Result<RunLog> {
    run_with(mdp, feats, hp, &RunOptions::default(), seed, &mut NoOracle)
}

fn check_bound(what: &str, k: usize, value: f64, bound: f64) -> bool {
    if value <= bound * (1.0 + 1e-12) {
        return true;
    }
    if cfg!(debug_assertions) {
        panic!("frame {k}: {what} = {value} exceeds its bound {bound}");
    }
    warn!("frame {k}: {what} = {value} exceeds its bound {bound}");
    false
}

pub fn run_with<H: FrameHook + ?Sized>(
    mdp: &FiniteMdp,
    feats: &FeatureSet,
    hp: &HyperParams,
    opts: &RunOptions,
    seed: u64,
    hook: &mut H,
) -> Result<RunLog> {
    let gamma = mdp.gamma();
    hp.validate(gamma)?;
    let vec_or_zero = |x: &Option<Vec<f64>>, d: usize, name: &str| -> Result<Vector> {
        match x {
            None => Ok(Vector::zeros(d)),
            Some(v) if v.len() == d => Ok(Vector::from_column_slice(v)),
            Some(v) => Err(Error::InvalidHyperParams(format!(
                "{name} has length {}, expected {d}",
                v.len()
            ))),
        }
    };
    let mut v = vec_or_zero(&opts.v0, feats.d_v(), "v0")?;
    let mut w = vec_or_zero(&opts.w0, feats.d_w(), "w0")?;
    if w.norm() > hp.r_w {
        return Err(Error::InvalidHyperParams(format!(
            "initial critic norm {} exceeds R_w = {}",
            w.norm(),
            hp.r_w
        )));
    }
    let mut n = Vector::zeros(feats.d_w());
    let bounds = GradientBounds::new(gamma, hp.t_len, mdp.r_max(), hp.r_w);

    let mut state_now = match &opts.initial_dist {
        None => init_rng_state(mdp.n_states(), None, seed),
        Some(p) => {
            if p.len() != mdp.n_states() {
                return Err(Error::InvalidHyperParams(
                    "initial distribution has the wrong length".into(),
                ));
            }
            init_rng_state(mdp.n_states(), Some(p), seed)
        }
    };

    let mut records = Vec::with_capacity(hp.k_frames);
    let mut violations = 0;
    for k in 0..hp.k_frames {
        let policy = SoftmaxPolicy::new(v.clone(), feats)?;
        let frame = sample_frame(mdp, &policy, state_now, hp.t_len, &mut rng::frame_rng(seed, k))?;
        state_now = frame.end_state();

        if let Some(replacement) = hook.critic_override(k, &v)? {
            w = replacement;
        }
        let metrics = hook.metrics(k, &v, &w)?;
        let in_ball = w.norm() <= hp.r_w;

        let g = semi_gradient(feats, &w, &frame, gamma);
        if in_ball && !check_bound("‖g‖", k, g.norm(), bounds.r_g) {
            violations += 1;
        }
        n = match opts.critic_rule {
            CriticRule::HeavyBall => momentum_step(&n, &g, hp.eta1),
            CriticRule::PlainSemiGradient => g,
        };
        let w_next = critic_step(&w, &n, hp.beta, hp.r_w);

        let h = policy_gradient_estimate(&policy, &w, &frame, gamma);
        if in_ball && !check_bound("‖H‖", k, h.norm(), bounds.r_h) {
            violations += 1;
        }
        let v_next = actor_step(&v, &h, hp.alpha);

        records.push(FrameRecord {
            k,
            grad_norm_sq: metrics.grad_norm_sq,
            delta_norm_sq: metrics.delta_norm_sq,
            j: metrics.j,
            w_norm: w.norm(),
            n_norm: n.norm(),
            v_drift: (&v_next - &v).norm(),
            w_drift: (&w_next - &w).norm(),
        });
        v = v_next;
        w = w_next;
    }
    Ok(RunLog {
        seed,
        hp: hp.clone(),
        records,
        final_state: ActorCriticState {
            v,
            w,
            n,
            k: hp.k_frames,
        },
        bound_violations: violations,
    })
}

fn init_rng_state(n_states: usize, dist: Option<&Vec<f64>>, seed: u64) -> usize {
    let u = rng::init_rng(seed).random::<f64>();
    match dist {
        Some(p) => categorical(p, u),
        None => ((u * n_states as f64) as usize).min(n_states - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_feats() -> FeatureSet {
        FeatureSet::one_hot(2, 2)
    }

    fn obs(state: usize, action: usize, reward: f64, next_state: usize) -> Observation {
        Observation {
            state,
            action,
            reward,
            next_state,
        }
    }

    #[test]
    fn semi_gradient_hand_example() {
        let feats = two_state_feats();
        let frame = Frame::new(vec![obs(0, 0, 1.0, 1)]).unwrap();
        let g = semi_gradient(&feats, &Vector::from_vec(vec![1.0, 1.0]), &frame, 0.9);
        assert!((g[0] + 0.9).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        // w = 0 leaves only the discounted return
        let frame = Frame::new(vec![obs(1, 0, 0.5, 0), obs(0, 1, -1.0, 0)]).unwrap();
        let g = semi_gradient(&feats, &Vector::zeros(2), &frame, 0.5);
        assert_eq!(g.as_slice(), &[0.0, -(0.5 - 0.5)]);
    }

    #[test]
    fn momentum_examples() {
        let g = Vector::from_vec(vec![2.0]);
        assert_eq!(momentum_step(&Vector::from_vec(vec![7.0]), &g, 1.0), g);
        assert_eq!(momentum_step(&Vector::zeros(1), &g, 0.5).as_slice(), &[1.0]);
    }

    #[test]
    fn critic_step_examples() {
        let w = critic_step(&Vector::from_vec(vec![0.5]), &Vector::from_vec(vec![1.0]), 0.1, 1.0);
        assert!((w[0] - 0.4).abs() < 1e-15);
        let w = critic_step(&Vector::from_vec(vec![0.95]), &Vector::from_vec(vec![-1.0]), 0.1, 1.0);
        assert_eq!(w.as_slice(), &[1.0]);
        let w0 = Vector::from_vec(vec![0.3, -0.2]);
        assert_eq!(critic_step(&w0, &Vector::zeros(2), 0.7, 1.0), w0);
    }

    #[test]
    fn actor_step_examples() {
        let v = Vector::from_vec(vec![0.0]);
        let h = Vector::from_vec(vec![2.0]);
        assert!((actor_step(&v, &h, 0.1)[0] - 0.2).abs() < 1e-15);
        assert_eq!(actor_step(&v, &h, 0.0), v);
        assert_eq!(actor_step(&v, &Vector::zeros(1), 0.3), v);
    }

    #[test]
    fn zero_td_error_and_single_action_give_zero_scores() {
        let feats = two_state_feats();
        let pol = SoftmaxPolicy::new(Vector::from_vec(vec![0.2, -0.1, 0.4, 0.0]), &feats).unwrap();
        let h = advantage_score(&pol, &Vector::zeros(2), &obs(0, 1, 0.0, 1), 0.9);
        assert_eq!(h.norm(), 0.0);

        let single = FeatureSet::one_hot(2, 1);
        let pol = SoftmaxPolicy::new(Vector::from_vec(vec![0.3, 0.1]), &single).unwrap();
        let h = advantage_score(&pol, &Vector::from_vec(vec![1.0, -1.0]), &obs(0, 0, 1.0, 1), 0.9);
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn single_step_policy_gradient() {
        let feats = two_state_feats();
        let pol = SoftmaxPolicy::new(Vector::from_vec(vec![0.2, -0.1, 0.4, 0.0]), &feats).unwrap();
        let o = obs(1, 0, 0.7, 0);
        let w = Vector::from_vec(vec![0.5, -0.3]);
        let frame = Frame::new(vec![o]).unwrap();
        let expected = advantage_score(&pol, &w, &o, 0.8) * (1.0 - 0.8);
        assert_eq!(policy_gradient_estimate(&pol, &w, &frame, 0.8), expected);
    }

    #[test]
    fn min_trajectory_length_examples() {
        assert_eq!(min_trajectory_length(0.01, 0.9, 1e-6, 0.01).unwrap(), 22);
        assert_eq!(min_trajectory_length(1.0 - 1e-9, 0.9, 1.0, 0.5).unwrap(), 1);
        // mixing branch: ln 0.25 / ln 0.5 = 2
        assert_eq!(min_trajectory_length(0.25, 0.1, 1.0, 0.5).unwrap(), 2);
        // discount branch dominates: ln 0.25 / (2 ln 0.9) = 6.58
        assert_eq!(min_trajectory_length(0.25, 0.9, 1.0, 0.5).unwrap(), 7);
        assert!(matches!(
            min_trajectory_length(0.0, 0.9, 1.0, 0.5),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            min_trajectory_length(0.5, 1.0, 1.0, 0.5),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            min_trajectory_length(0.5, 0.9, 1.0, 1.0),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            min_trajectory_length(0.5, 0.9, 0.0, 0.5),
            Err(Error::DomainError(_))
        ));
    }
}
