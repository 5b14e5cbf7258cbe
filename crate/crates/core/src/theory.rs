//! Executable checks of the analysis inequalities, plus estimators for
//! constants that are only known to exist.
//!
//! Checks with closed-form right-hand sides are *strict*: any violation is a
//! bug. Estimators (`c₂`, `L`, `L′_π`) report what the instance requires and
//! are never compared against invented values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algo::{self, GradientBounds, RunLog};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::mdp::{sample_frame, FeatureSet, FiniteMdp, SoftmaxPolicy, POLICY_LIPSCHITZ, SCORE_BOUND};
use crate::oracle::{self, ConstantsInput, PolicyOracle, StartDist, TheoreticalConstants};
use crate::rng;

/// Slack allowed on the strong-monotonicity inequality.
pub const MONOTONICITY_TOL: f64 = 1e-10;
/// TV values at or below this are treated as exact zeros by the envelope fit.
pub const ZERO_TV: f64 = 1e-13;
/// Step of the central differences used for Jacobians.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest `bound − value` seen (negative when violated); `+∞` when no
    /// trial was evaluated.
    pub worst_margin: f64,
    pub passed: bool,
}

impl BoundCheckResult {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            passed: true,
        }
    }

    /// Records one trial whose inequality holds iff `margin ≥ -tol`.
    pub fn record(&mut self, margin: f64, tol: f64) {
        self.trials += 1;
        self.worst_margin = self.worst_margin.min(margin);
        if !(margin >= -tol) {
            self.violations += 1;
        }
        self.passed = self.violations == 0;
    }

    /// Adds an evaluation to the current trial without bumping the count.
    fn record_more(&mut self, margin: f64, tol: f64) {
        self.worst_margin = self.worst_margin.min(margin);
        if !(margin >= -tol) {
            self.violations += 1;
        }
        self.passed = self.violations == 0;
    }
}

/// An instance plus the run geometry the bounds depend on.
#[derive(Debug, Clone, Copy)]
pub struct CheckInstance<'a> {
    pub mdp: &'a FiniteMdp,
    pub feats: &'a FeatureSet,
    pub t_len: usize,
    pub r_w: f64,
    /// Scale of the Gaussian used to draw random actor parameters.
    pub v_scale: f64,
    pub seed: u64,
}

impl<'a> CheckInstance<'a> {
    pub fn new(mdp: &'a FiniteMdp, feats: &'a FeatureSet, t_len: usize) -> Self {
        Self {
            mdp,
            feats,
            t_len,
            r_w: oracle::default_radius(mdp),
            v_scale: 1.0,
            seed: 0,
        }
    }

    pub fn bounds(&self) -> GradientBounds {
        GradientBounds::new(self.mdp.gamma(), self.t_len, self.mdp.r_max(), self.r_w)
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        // each check gets its own stream so they can run in any order
        rng::stream(self.seed, salt)
    }

    fn random_v(&self, rng: &mut ChaCha8Rng) -> Vector {
        gaussian(self.feats.d_v(), rng) * self.v_scale
    }
}

fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

fn unit(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let g = gaussian(d, rng);
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Uniform point in the ball of radius `r`; every fourth draw lies on the
/// sphere itself so the boundary is exercised.
fn in_ball(d: usize, r: f64, i: usize, rng: &mut ChaCha8Rng) -> Vector {
    let dir = unit(d, rng);
    let radius = if i % 4 == 3 {
        r
    } else {
        r * rng.random::<f64>().powf(1.0 / d as f64)
    };
    dir * radius
}

/// `‖g(w;O)‖ ≤ R_g` and `‖H(v,w;O)‖ ≤ R_h` over random `(v, w, O)`, with zero
/// tolerance.
pub fn check_gradient_bounds(inst: &CheckInstance<'_>, trials: usize) -> Result<BoundCheckResult> {
    let mut res = BoundCheckResult::new("gradient_bounds");
    let bounds = inst.bounds();
    let gamma = inst.mdp.gamma();
    let mut rng = inst.rng(1);
    for i in 0..trials {
        let v = inst.random_v(&mut rng);
        let w = in_ball(inst.feats.d_w(), inst.r_w, i, &mut rng);
        let policy = SoftmaxPolicy::new(v, inst.feats)?;
        let start = rng.random_range(0..inst.mdp.n_states());
        let frame = sample_frame(inst.mdp, &policy, start, inst.t_len, &mut rng)?;
        let g = algo::semi_gradient(inst.feats, &w, &frame, gamma);
        let h = algo::policy_gradient_estimate(&policy, &w, &frame, gamma);
        res.record(bounds.r_g - g.norm(), 0.0);
        res.record_more(bounds.r_h - h.norm(), 0.0);
    }
    Ok(res)
}

/// `‖H(v,w;O) − H(v,w′;O)‖ ≤ (1+γ) R_π ‖w − w′‖` and the same for each
/// advantage score `h`.
pub fn check_policy_gradient_lipschitz(inst: &CheckInstance<'_>, trials: usize) -> Result<BoundCheckResult> {
    let mut res = BoundCheckResult::new("policy_gradient_critic_lipschitz");
    let gamma = inst.mdp.gamma();
    let lip = (1.0 + gamma) * SCORE_BOUND;
    let mut rng = inst.rng(2);
    for i in 0..trials {
        let policy = SoftmaxPolicy::new(inst.random_v(&mut rng), inst.feats)?;
        let w = in_ball(inst.feats.d_w(), inst.r_w, i, &mut rng);
        let w2 = in_ball(inst.feats.d_w(), inst.r_w, i + 1, &mut rng);
        let start = rng.random_range(0..inst.mdp.n_states());
        let frame = sample_frame(inst.mdp, &policy, start, inst.t_len, &mut rng)?;
        let dw = (&w - &w2).norm();
        let dh = (algo::policy_gradient_estimate(&policy, &w, &frame, gamma)
            - algo::policy_gradient_estimate(&policy, &w2, &frame, gamma))
        .norm();
        res.record(lip * dw - dh, 1e-12 * lip * dw);
        let o = &frame.observations()[0];
        let dho = (algo::advantage_score(&policy, &w, o, gamma) - algo::advantage_score(&policy, &w2, o, gamma)).norm();
        res.record_more(lip * dw - dho, 1e-12 * lip * dw);
    }
    Ok(res)
}

/// Strong monotonicity `⟨w − w*, Φ̄(w − w*)⟩ ≥ σ‖w − w*‖²` at the policy `v`.
pub fn check_strong_monotonicity(inst: &CheckInstance<'_>, v: &Vector, trials: usize) -> Result<BoundCheckResult> {
    let mut res = BoundCheckResult::new("strong_monotonicity");
    let po = PolicyOracle::new(inst.mdp, inst.feats, v)?;
    let system = po.critic_system(inst.t_len)?;
    let sigma = po.conditioning(inst.t_len)?.sigma;
    let mut rng = inst.rng(3);
    for i in 0..trials {
        let w = in_ball(inst.feats.d_w(), inst.r_w, i, &mut rng);
        res.record(
            monotonicity_slack(&system.phi_bar, &system.w_star, &w, sigma),
            MONOTONICITY_TOL,
        );
    }
    Ok(res)
}

/// `⟨w − w*, Φ̄(w − w*)⟩ − σ‖w − w*‖²`.
pub fn monotonicity_slack(phi_bar: &Matrix, w_star: &Vector, w: &Vector, sigma: f64) -> f64 {
    let x = w - w_star;
    x.dot(&(phi_bar * &x)) - sigma * x.norm_squared()
}

/// TV-to-stationarity curve and its geometric envelope `c₀ρ^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    /// `max_{s₀} ‖δ_{s₀}(P^π)^t − μ‖₁` for `t = 0..=t_max`.
    pub tv_curve: Vec<f64>,
    /// Envelope amplitude; `None` when `t_max = 0`.
    pub c0: Option<f64>,
    /// Envelope rate; `None` when `t_max = 0`.
    pub rho: Option<f64>,
    /// Mean log-gap between envelope and the positive TV values.
    pub fit_residual: f64,
    /// Second largest eigenvalue modulus of `P^π`, the reference rate.
    pub second_eigenvalue_modulus: f64,
}

impl MixingEstimate {
    pub fn bound(&self) -> Option<algo::MixingBound> {
        Some(algo::MixingBound {
            c0: self.c0?,
            rho: self.rho?,
        })
    }

    /// `c₀ρ^t ≥ TV_t` for every recorded `t` (zeros below [`ZERO_TV`] excluded).
    pub fn envelope_dominates(&self) -> bool {
        match (self.c0, self.rho) {
            (Some(c0), Some(rho)) => self
                .tv_curve
                .iter()
                .enumerate()
                .all(|(t, &tv)| tv <= ZERO_TV || c0 * rho.powi(t as i32) >= tv),
            _ => true,
        }
    }
}

pub fn estimate_mixing(mdp: &FiniteMdp, policy: &SoftmaxPolicy<'_>, t_max: usize) -> Result<MixingEstimate> {
    estimate_mixing_chain(&mdp.induced_chain(&policy.table()), t_max)
}

/// Exact TV curve for every start state, then the tightest log-domain upper
/// envelope: among the edges of the upper convex hull of `(t, ln TV_t)`, the
/// one with the smallest total log-gap.
pub fn estimate_mixing_chain(p: &Matrix, t_max: usize) -> Result<MixingEstimate> {
    let mu = oracle::stationary_of_chain(p)?;
    let n = p.nrows();
    let mut power = Matrix::identity(n, n);
    let mut tv_curve = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            power = &power * p;
        }
        let worst = (0..n)
            .map(|s| (0..n).map(|j| (power[(s, j)] - mu[j]).abs()).sum::<f64>())
            .fold(0.0_f64, f64::max);
        tv_curve.push(worst);
    }
    let moduli = linalg::eigenvalue_moduli(p);
    let slem = moduli.get(1).copied().unwrap_or(0.0);
    if t_max == 0 {
        return Ok(MixingEstimate {
            tv_curve,
            c0: None,
            rho: None,
            fit_residual: 0.0,
            second_eigenvalue_modulus: slem,
        });
    }
    let (c0, rho, residual) = fit_envelope(&tv_curve);
    Ok(MixingEstimate {
        tv_curve,
        c0: Some(c0),
        rho: Some(rho),
        fit_residual: residual,
        second_eigenvalue_modulus: slem,
    })
}

/// Returns `(c₀, ρ, mean log gap)`.
fn fit_envelope(tv: &[f64]) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = tv
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > ZERO_TV)
        .map(|(t, &x)| (t as f64, x.ln()))
        .collect();
    let rho = match pts.len() {
        0 => return (ZERO_TV, 1e-12, 0.0),
        1 => {
            let (t0, y0) = pts[0];
            // everything after the single positive point is numerically zero
            let _ = (t0, y0);
            1e-12
        }
        _ => {
            let hull = upper_hull(&pts);
            let mut best = (f64::INFINITY, 0.0);
            for edge in hull.windows(2) {
                let (a, b) = (edge[0], edge[1]);
                let slope = (b.1 - a.1) / (b.0 - a.0);
                let intercept = a.1 - slope * a.0;
                let gap: f64 = pts.iter().map(|&(t, y)| intercept + slope * t - y).sum();
                if gap < best.0 {
                    best = (gap, slope);
                }
            }
            best.1.exp().clamp(1e-12, 1.0 - 1e-12)
        }
    };
    // amplitude: the smallest c₀ dominating every point at this ρ, padded by
    // one part in 1e12 so rounding in c₀ρ^t cannot undercut a touching point
    let c0 = pts
        .iter()
        .map(|&(t, y)| (y - t * rho.ln()).exp())
        .fold(0.0_f64, f64::max)
        * (1.0 + 1e-12);
    let residual = pts.iter().map(|&(t, y)| c0.ln() + t * rho.ln() - y).sum::<f64>() / pts.len() as f64;
    (c0, rho, residual)
}

fn upper_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Empirical Lipschitz ratios of the optimal critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticLipschitzReport {
    pub result: BoundCheckResult,
    pub l_star_emp: f64,
    pub g_star_emp: f64,
    /// Closed forms evaluated at the smallest σ seen over all sampled points.
    pub l_star: f64,
    pub g_star: f64,
    pub sigma_min: f64,
    pub c2: f64,
}

/// Samples pairs `(v, v′ = v + perturbation·u)`, evaluates the exact `w*` at
/// both and a central-difference Jacobian at `v`, and compares the ratios with
/// the closed-form `L*(c₂)` and `G*`.
pub fn check_optimal_critic_lipschitz(
    inst: &CheckInstance<'_>,
    trials: usize,
    perturbation: f64,
    c2: f64,
) -> Result<CriticLipschitzReport> {
    let mut rng = inst.rng(4);
    let mut ratios = Vec::with_capacity(trials);
    let mut jac_norms = Vec::with_capacity(trials);
    let mut lambda_min = f64::INFINITY;
    let d_v = inst.feats.d_v();
    for _ in 0..trials {
        let v = inst.random_v(&mut rng);
        let dv = unit(d_v, &mut rng) * perturbation;
        let v2 = &v + &dv;
        let (w1, l1) = w_star_and_lambda(inst, &v)?;
        let (w2, l2) = w_star_and_lambda(inst, &v2)?;
        lambda_min = lambda_min.min(l1).min(l2);
        let dist = dv.norm();
        ratios.push((dist > 0.0).then(|| (&w1 - &w2).norm() / dist));
        let mut jac = Matrix::zeros(inst.feats.d_w(), d_v);
        for j in 0..d_v {
            let mut plus = v.clone();
            let mut minus = v.clone();
            plus[j] += FD_STEP;
            minus[j] -= FD_STEP;
            let (wp, lp) = w_star_and_lambda(inst, &plus)?;
            let (wm, lm) = w_star_and_lambda(inst, &minus)?;
            lambda_min = lambda_min.min(lp).min(lm);
            jac.set_column(j, &((wp - wm) / (2.0 * FD_STEP)));
        }
        jac_norms.push(jac.singular_values().max());
    }
    let sigma_min = (1.0 - inst.mdp.gamma().powi(inst.t_len as i32)) * lambda_min;
    let consts = oracle::constants(ConstantsInput {
        gamma: inst.mdp.gamma(),
        t_len: inst.t_len,
        r_r: inst.mdp.r_max(),
        r_w: inst.r_w,
        n_actions: inst.mdp.n_actions(),
        eta1: 1.0,
        sigma: sigma_min,
        c2,
    });
    let mut result = BoundCheckResult::new("optimal_critic_lipschitz");
    for (ratio, jac) in ratios.iter().zip(&jac_norms) {
        result.record(consts.g_star - jac, 0.0);
        if let Some(r) = ratio {
            result.record_more(consts.l_star - r, 0.0);
        }
    }
    Ok(CriticLipschitzReport {
        result,
        l_star_emp: ratios.iter().flatten().cloned().fold(0.0, f64::max),
        g_star_emp: jac_norms.iter().cloned().fold(0.0, f64::max),
        l_star: consts.l_star,
        g_star: consts.g_star,
        sigma_min,
        c2,
    })
}

fn w_star_and_lambda(inst: &CheckInstance<'_>, v: &Vector) -> Result<(Vector, f64)> {
    let po = PolicyOracle::new(inst.mdp, inst.feats, v)?;
    let w = po.critic_system(inst.t_len)?.w_star;
    Ok((w, po.conditioning(inst.t_len)?.lambda_min))
}

/// Empirical smoothness constants of the policy class and of `∇J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    /// `L_π ≤ 1` as a strict check.
    pub result: BoundCheckResult,
    pub l_pi_emp: f64,
    pub l_pi_prime_emp: f64,
    /// Reported only; the smoothness constant of `J` has no closed form.
    pub l_emp: f64,
}

pub fn check_policy_smoothness(inst: &CheckInstance<'_>, trials: usize, perturbation: f64) -> Result<SmoothnessReport> {
    let mut rng = inst.rng(5);
    let mut result = BoundCheckResult::new("policy_lipschitz");
    let (mut l_pi, mut l_prime, mut l_grad) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (n, na) = (inst.mdp.n_states(), inst.mdp.n_actions());
    for _ in 0..trials {
        let v = inst.random_v(&mut rng);
        let dv = unit(inst.feats.d_v(), &mut rng) * perturbation * rng.random::<f64>();
        let dist = dv.norm();
        if dist == 0.0 {
            continue;
        }
        let v2 = &v + &dv;
        let p1 = PolicyOracle::new(inst.mdp, inst.feats, &v)?;
        let p2 = PolicyOracle::new(inst.mdp, inst.feats, &v2)?;
        let (t1, t2) = (p1.policy_table(), p2.policy_table());
        let mut worst_prob: f64 = 0.0;
        let mut worst_score: f64 = 0.0;
        for s in 0..n {
            for a in 0..na {
                worst_prob = worst_prob.max((t1[(s, a)] - t2[(s, a)]).abs());
                worst_score = worst_score.max((p1.policy().score(s, a) - p2.policy().score(s, a)).norm());
            }
        }
        result.record(POLICY_LIPSCHITZ * dist - worst_prob, 0.0);
        l_pi = l_pi.max(worst_prob / dist);
        l_prime = l_prime.max(worst_score / dist);
        let g1 = p1.policy_gradient(&p1.critic_system(inst.t_len)?.w_star, &StartDist::Stationary)?;
        let g2 = p2.policy_gradient(&p2.critic_system(inst.t_len)?.w_star, &StartDist::Stationary)?;
        l_grad = l_grad.max((g1 - g2).norm() / dist);
    }
    Ok(SmoothnessReport {
        result,
        l_pi_emp: l_pi,
        l_pi_prime_emp: l_prime,
        l_emp: l_grad,
    })
}

/// `‖μ_v⊗π_v − μ_{v′}⊗π_{v′}‖₁`.
pub fn joint_tv(a: &PolicyOracle<'_>, b: &PolicyOracle<'_>) -> f64 {
    let (ta, tb) = (a.policy_table(), b.policy_table());
    let (ma, mb) = (a.mu(), b.mu());
    let mut tv = 0.0;
    for s in 0..ta.nrows() {
        for act in 0..ta.ncols() {
            tv += (ma[s] * ta[(s, act)] - mb[s] * tb[(s, act)]).abs();
        }
    }
    tv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvJointReport {
    pub result: BoundCheckResult,
    /// Smallest `c₂ ≥ 0` consistent with every sampled pair.
    pub c2_estimate: f64,
    /// Running maximum after each trial.
    pub running: Vec<f64>,
}

/// Estimates the perturbation constant `c₂` from sampled pairs.
///
/// Each pair requires
/// `c₂ ≥ ‖μ_v⊗π_v − μ_{v′}⊗π_{v′}‖/(|A| L_π ‖v − v′‖) − 1` (joint bound) and
/// `c₂ ≥ ‖μ_v − μ_{v′}‖/(|A| L_π ‖v − v′‖)` (the stationary-distribution step
/// the joint bound is built from); the estimate is the running maximum of
/// both. The strict part re-checks the joint inequality with the final
/// estimate.
pub fn check_tv_joint_lipschitz(inst: &CheckInstance<'_>, trials: usize, perturbation: f64) -> Result<TvJointReport> {
    let mut rng = inst.rng(6);
    let scale = inst.mdp.n_actions() as f64 * POLICY_LIPSCHITZ;
    let mut c2: f64 = 0.0;
    let mut running = Vec::with_capacity(trials);
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let v = inst.random_v(&mut rng);
        let dv = unit(inst.feats.d_v(), &mut rng) * perturbation * rng.random::<f64>();
        let dist = dv.norm();
        if dist > 0.0 {
            let p1 = PolicyOracle::new(inst.mdp, inst.feats, &v)?;
            let p2 = PolicyOracle::new(inst.mdp, inst.feats, &(&v + &dv))?;
            let tv = joint_tv(&p1, &p2);
            let mu_tv = linalg::tv_distance(p1.mu().as_slice(), p2.mu().as_slice());
            c2 = c2.max(tv / (scale * dist) - 1.0).max(mu_tv / (scale * dist));
            samples.push((tv, dist));
        }
        running.push(c2);
    }
    let mut result = BoundCheckResult::new("joint_tv_lipschitz");
    for (tv, dist) in samples {
        result.record((1.0 + c2) * scale * dist - tv, 1e-12 * tv);
    }
    Ok(TvJointReport {
        result,
        c2_estimate: c2,
        running,
    })
}

/// `‖n_k‖ ≤ R_g`, `‖w_{k+1} − w_k‖ ≤ R_g β` and `‖v_{k+1} − v_k‖ ≤ R_h α` on
/// every logged frame.
pub fn check_drift_bounds(log: &RunLog, bounds: &GradientBounds) -> BoundCheckResult {
    let mut res = BoundCheckResult::new("drift_bounds");
    for r in &log.records {
        res.record(bounds.r_g - r.n_norm, 0.0);
        res.record_more(bounds.r_g * log.hp.beta - r.w_drift, 0.0);
        res.record_more(bounds.r_h * log.hp.alpha - r.v_drift, 0.0);
    }
    res
}

/// One-frame drift of the gradient bias with respect to the critic:
/// `‖ζ(v,w_k;O) − ζ(v,w_{k-1};O)‖ ≤ 8 R_g β` where `w_k` is one projected
/// momentum step away from `w_{k-1}` and `ζ(v,w;O) = g(w;O) − E_μ[g(w;Ō)]`.
pub fn check_bias_drift(inst: &CheckInstance<'_>, beta: f64, trials: usize) -> Result<BoundCheckResult> {
    let mut res = BoundCheckResult::new("bias_drift");
    let bounds = inst.bounds();
    let gamma = inst.mdp.gamma();
    let mut rng = inst.rng(7);
    for i in 0..trials {
        let v = inst.random_v(&mut rng);
        let po = PolicyOracle::new(inst.mdp, inst.feats, &v)?;
        let system = po.critic_system(inst.t_len)?;
        let w_prev = in_ball(inst.feats.d_w(), inst.r_w, i, &mut rng);
        let n = in_ball(inst.feats.d_w(), bounds.r_g, i + 1, &mut rng);
        let w = algo::critic_step(&w_prev, &n, beta, inst.r_w);
        let start = rng.random_range(0..inst.mdp.n_states());
        let frame = sample_frame(inst.mdp, po.policy(), start, inst.t_len, &mut rng)?;
        let zeta = |w: &Vector| algo::semi_gradient(inst.feats, w, &frame, gamma) - system.mean_semi_gradient(w);
        let drift = (zeta(&w) - zeta(&w_prev)).norm();
        res.record(8.0 * bounds.r_g * beta - drift, 0.0);
    }
    Ok(res)
}

/// Result of the conditional-bias check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBiasReport {
    pub result: BoundCheckResult,
    /// Largest `‖E[ζ | F]‖ / (RHS)` seen.
    pub worst_ratio: f64,
}

/// Conditional mean of frame-start law and T-step semi-gradient bias.
///
/// Given a frozen `(s_{k-1,0}, v_{k-1}, v_k)` the next frame starts from
/// `ν = δ_{s}(P_{k-1})^T` and then follows `π_k`, so `E[g(w;O_k) | F]` is the
/// critic system assembled with weights `ν` instead of `μ_k`. The bias is
/// compared with `(c₂ + 2T)|A| L_π R_g ‖v_k − v_{k-1}‖ + R_g β`.
pub fn conditional_bias(
    inst: &CheckInstance<'_>,
    start: usize,
    v_prev: &Vector,
    v_now: &Vector,
    w_prev: &Vector,
) -> Result<Vector> {
    let prev = PolicyOracle::new(inst.mdp, inst.feats, v_prev)?;
    let now = PolicyOracle::new(inst.mdp, inst.feats, v_now)?;
    let mut nu = Vector::zeros(inst.mdp.n_states());
    nu[start] = 1.0;
    for _ in 0..inst.t_len {
        nu = prev.chain().transpose() * nu;
    }
    let pi = now.policy_table();
    let r = inst.mdp.induced_reward(pi);
    let gamma = inst.mdp.gamma();
    let conditional = oracle::critic_moments(inst.feats, now.chain(), &r, &nu, gamma, inst.t_len);
    let stationary = now.critic_system(inst.t_len)?;
    Ok((&conditional.0 * w_prev - &conditional.1) - stationary.mean_semi_gradient(w_prev))
}

pub fn check_conditional_bias(
    inst: &CheckInstance<'_>,
    beta: f64,
    alpha: f64,
    c2: f64,
    trials: usize,
) -> Result<ConditionalBiasReport> {
    let mut res = BoundCheckResult::new("conditional_bias");
    let bounds = inst.bounds();
    let mut rng = inst.rng(8);
    let na = inst.mdp.n_actions() as f64;
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let v_prev = inst.random_v(&mut rng);
        // the actor moves at most R_h α per frame
        let v_now = &v_prev + unit(inst.feats.d_v(), &mut rng) * (bounds.r_h * alpha * rng.random::<f64>());
        let w_prev = in_ball(inst.feats.d_w(), inst.r_w, i, &mut rng);
        let start = rng.random_range(0..inst.mdp.n_states());
        let bias = conditional_bias(inst, start, &v_prev, &v_now, &w_prev)?.norm();
        let rhs = (c2 + 2.0 * inst.t_len as f64) * na * POLICY_LIPSCHITZ * bounds.r_g * (&v_now - &v_prev).norm()
            + bounds.r_g * beta;
        worst = worst.max(bias / rhs);
        res.record(rhs - bias, 0.0);
    }
    Ok(ConditionalBiasReport {
        result: res,
        worst_ratio: worst,
    })
}

/// Everything `verify` runs on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub trials: usize,
    pub t_len: usize,
    pub r_w: f64,
    /// Closed-form checks; any violation fails verification.
    pub strict: Vec<BoundCheckResult>,
    /// Checks whose right-hand side uses an estimated constant.
    pub informational: Vec<BoundCheckResult>,
    pub mixing: MixingEstimate,
    pub c2_estimate: f64,
    pub critic_lipschitz: CriticLipschitzReport,
    pub smoothness: SmoothnessReport,
    pub conditional_bias_worst_ratio: f64,
    pub constants: TheoreticalConstants,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub t_len: Option<usize>,
    pub seed: u64,
    pub eta1: f64,
    pub mixing_horizon: usize,
    pub drift_frames: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            t_len: None,
            seed: 0,
            eta1: 0.5,
            mixing_horizon: 200,
            drift_frames: 1000,
        }
    }
}

/// Runs every check and estimator on an instance. The frame length defaults
/// to [`algo::min_trajectory_length`] for `β = 0.1` at the uniform policy.
pub fn verify(mdp: &FiniteMdp, feats: &FeatureSet, opts: &VerifyOptions) -> Result<VerificationReport> {
    crate::mdp::validate_instance(mdp, feats)?;
    let v0 = Vector::zeros(feats.d_v());
    let policy0 = SoftmaxPolicy::new(v0.clone(), feats)?;
    let mixing = estimate_mixing(mdp, &policy0, opts.mixing_horizon)?;
    let beta = 0.1;
    let t_len = match opts.t_len {
        Some(t) => t,
        None => {
            let b = mixing
                .bound()
                .ok_or_else(|| Error::DomainError("mixing horizon must be positive".into()))?;
            algo::min_trajectory_length(beta, mdp.gamma(), b.c0, b.rho)?
        }
    };
    let mut inst = CheckInstance::new(mdp, feats, t_len);
    inst.seed = opts.seed;
    let trials = opts.trials;
    let perturbation = 0.1;

    let tv = check_tv_joint_lipschitz(&inst, trials, perturbation)?;
    let c2 = tv.c2_estimate;
    let critic_lip = check_optimal_critic_lipschitz(&inst, trials.min(200), perturbation, c2)?;
    let smooth = check_policy_smoothness(&inst, trials, perturbation)?;

    let po0 = PolicyOracle::new(mdp, feats, &v0)?;
    let sigma0 = po0.conditioning(t_len)?.sigma;
    let consts = oracle::constants(ConstantsInput {
        gamma: mdp.gamma(),
        t_len,
        r_r: mdp.r_max(),
        r_w: inst.r_w,
        n_actions: mdp.n_actions(),
        eta1: opts.eta1,
        sigma: sigma0,
        c2,
    });
    let alpha = 0.01;
    let hp = algo::HyperParams {
        alpha,
        beta,
        eta1: opts.eta1,
        t_len,
        r_w: inst.r_w,
        k_frames: opts.drift_frames,
        enforce_t: None,
    };
    let run = algo::run_hb_a2c(mdp, feats, &hp, opts.seed)?;

    let mut strict = vec![
        check_gradient_bounds(&inst, trials)?,
        check_strong_monotonicity(&inst, &v0, trials)?,
        check_policy_gradient_lipschitz(&inst, trials)?,
        check_drift_bounds(&run, &inst.bounds()),
        check_bias_drift(&inst, beta, trials)?,
        smooth.result.clone(),
    ];
    let mut mixing_check = BoundCheckResult::new("mixing_envelope");
    if mixing.c0.is_some() {
        mixing_check.record(if mixing.envelope_dominates() { 0.0 } else { -1.0 }, 0.0);
    }
    strict.push(mixing_check);

    let cond = check_conditional_bias(&inst, beta, alpha, c2, trials.min(200))?;
    let informational = vec![tv.result.clone(), critic_lip.result.clone(), cond.result.clone()];
    let passed = strict.iter().all(|c| c.passed);
    Ok(VerificationReport {
        trials,
        t_len,
        r_w: inst.r_w,
        strict,
        informational,
        mixing,
        c2_estimate: c2,
        critic_lipschitz: critic_lip,
        smoothness: smooth,
        conditional_bias_worst_ratio: cond.worst_ratio,
        constants: consts,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_check_passes_vacuously() {
        let mdp = FiniteMdp::new(vec![vec![vec![0.5, 0.5]; 2]; 2], vec![vec![1.0, 0.0]; 2], 0.9, 1.0).unwrap();
        let feats = FeatureSet::one_hot(2, 2);
        let inst = CheckInstance::new(&mdp, &feats, 3);
        let r = check_gradient_bounds(&inst, 0).unwrap();
        assert!(r.passed);
        assert_eq!(r.trials, 0);
    }

    #[test]
    fn identical_rows_mix_in_one_step() {
        let p = Matrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, 0.3]);
        let est = estimate_mixing_chain(&p, 10).unwrap();
        assert!(est.tv_curve[1..].iter().all(|&x| x < 1e-15));
        assert!(est.rho.unwrap() < 1e-6);
        assert!(est.envelope_dominates());
    }

    #[test]
    fn zero_horizon_has_no_fit() {
        let p = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let est = estimate_mixing_chain(&p, 0).unwrap();
        assert_eq!(est.tv_curve.len(), 1);
        assert!(est.c0.is_none() && est.rho.is_none());
    }

    #[test]
    fn upper_hull_drops_interior_points() {
        let hull = upper_hull(&[(0.0, 0.0), (1.0, -3.0), (2.0, -2.0), (3.0, -4.0)]);
        assert_eq!(hull, vec![(0.0, 0.0), (2.0, -2.0), (3.0, -4.0)]);
    }
}
