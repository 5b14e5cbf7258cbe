//! Seeded multi-run driver with oracle instrumentation, the `β = c₅α`
//! stepsize coupling, and log-log rate fits of the stationarity metric
//! `(1/K) Σ_k [‖∇J(v_k)‖² + ‖w_k − w*(v_k)‖²]`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algo::{self, CriticRule, FrameHook, FrameMetrics, HyperParams, MixingBound, RunLog, RunOptions};
use crate::error::{Error, Result};
use crate::generate::{generate, GeneratorParams};
use crate::linalg::Vector;
use crate::mdp::{FeatureSet, FiniteMdp, Instance, SoftmaxPolicy};
use crate::oracle::{self, ConstantsInput, PolicyOracle, StartDist, TheoreticalConstants};
use crate::theory;

/// Default coefficient of `α = a₀/√K`.
pub const DEFAULT_A0: f64 = 0.1;
pub const SUMMARY_COLUMNS: [&str; 5] = ["K", "eta1", "mean_metric", "stderr_metric", "slope_contrib"];
pub const SWEEP_COLUMNS: [&str; 6] = [
    "eta1",
    "K",
    "mean_metric",
    "mean_final_delta",
    "baseline_final_delta",
    "initialization_term",
];
/// Instance path understood by [`load_instance`] without touching the disk.
pub const BUILTIN_REFERENCE: &str = "builtin:reference";
pub const BUILTIN_TWO_STATE: &str = "builtin:two_state";
/// Search cap of the automatic frame length.
pub const MAX_AUTO_T: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum AlphaRule {
    #[serde(rename = "theta_inv_sqrt_K")]
    ThetaInvSqrtK { a0: f64 },
    #[serde(rename = "explicit")]
    Explicit { alpha: f64 },
}

impl Default for AlphaRule {
    fn default() -> Self {
        AlphaRule::ThetaInvSqrtK { a0: DEFAULT_A0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule")]
pub enum BetaRule {
    #[default]
    #[serde(rename = "c5_coupled")]
    C5Coupled,
    #[serde(rename = "explicit")]
    Explicit { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule")]
pub enum TRule {
    #[default]
    #[serde(rename = "auto")]
    Auto,
    #[serde(rename = "explicit")]
    Explicit { t: usize },
}

fn default_eta1_grid() -> Vec<f64> {
    vec![0.5]
}

fn default_decimation() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_mixing_horizon() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance_path: String,
    #[serde(rename = "K_grid")]
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub alpha_rule: AlphaRule,
    #[serde(default)]
    pub beta_rule: BetaRule,
    #[serde(default = "default_eta1_grid")]
    pub eta1_grid: Vec<f64>,
    #[serde(rename = "T_rule", default)]
    pub t_rule: TRule,
    /// Start distribution of `J` and `∇J` in the logged metrics.
    #[serde(default)]
    pub start_dist: StartDist,
    /// Oracle metrics are evaluated on frames with `k % decimation == 0`.
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    #[serde(rename = "enforce_T", default = "default_true")]
    pub enforce_t: bool,
    /// Projection radius; `R_r/(1 − γ)` when absent.
    #[serde(default)]
    pub r_w: Option<f64>,
    /// Perturbation constant for the reported constants; `c₀/(1 − ρ)` when
    /// absent. `c₅` does not depend on it.
    #[serde(default)]
    pub c2: Option<f64>,
    /// Replace `w_k` by `w*(v_k)` every frame.
    #[serde(default)]
    pub oracle_critic: bool,
    #[serde(default = "default_mixing_horizon")]
    pub mixing_horizon: usize,
}

impl ExperimentConfig {
    pub fn new(instance_path: impl Into<String>, k_grid: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            instance_path: instance_path.into(),
            k_grid,
            seeds,
            alpha_rule: AlphaRule::default(),
            beta_rule: BetaRule::default(),
            eta1_grid: default_eta1_grid(),
            t_rule: TRule::default(),
            start_dist: StartDist::default(),
            decimation: 1,
            enforce_t: true,
            r_w: None,
            c2: None,
            oracle_critic: false,
            mixing_horizon: default_mixing_horizon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k_grid.is_empty() {
            return bad("K_grid is empty".into());
        }
        if self.k_grid[0] == 0 || self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "K_grid {:?} must be positive and strictly increasing",
                self.k_grid
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return bad(format!("seeds {:?} are not distinct", self.seeds));
        }
        if self.eta1_grid.is_empty() || self.eta1_grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return bad(format!(
                "eta1_grid {:?} must be nonempty and inside (0, 1]",
                self.eta1_grid
            ));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match self.alpha_rule {
            AlphaRule::ThetaInvSqrtK { a0 } if !positive(a0) => return bad(format!("a0 = {a0} must be positive")),
            AlphaRule::Explicit { alpha } if !positive(alpha) => {
                return bad(format!("alpha = {alpha} must be positive"))
            }
            _ => {}
        }
        if let BetaRule::Explicit { beta } = self.beta_rule {
            if !positive(beta) {
                return bad(format!("beta = {beta} must be positive"));
            }
        }
        if let TRule::Explicit { t } = self.t_rule {
            if t == 0 {
                return bad("T must be at least 1".into());
            }
        }
        if self.decimation == 0 {
            return bad("decimation must be at least 1".into());
        }
        if let Some(r) = self.r_w {
            if !positive(r) {
                return bad(format!("R_w = {r} must be positive"));
            }
        }
        if let Some(c2) = self.c2 {
            if !(c2 >= 0.0 && c2.is_finite()) {
                return bad(format!("c2 = {c2} must be nonnegative"));
            }
        }
        if self.mixing_horizon == 0 {
            return bad("mixing_horizon must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The 5-state reference instance used by the rate experiments.
pub fn reference_params() -> GeneratorParams {
    GeneratorParams::new(5, 2, 1, 3, 0.5, 0.2, 3)
}

pub fn reference_instance() -> Result<Instance> {
    generate(&reference_params())
}

/// Two states, one action, `P = [[1 − p, p], [q, 1 − q]]`, one-hot features.
/// The chain's second eigenvalue is `1 − p − q`.
pub fn two_state_instance(p: f64, q: f64, gamma: f64) -> Result<Instance> {
    let mdp = FiniteMdp::new(
        vec![vec![vec![1.0 - p, p]], vec![vec![q, 1.0 - q]]],
        vec![vec![1.0], vec![0.0]],
        gamma,
        1.0,
    )?;
    let feats = FeatureSet::one_hot(2, 1);
    crate::mdp::validate_instance(&mdp, &feats)?;
    Ok(Instance::new(mdp, feats))
}

/// Loads an instance file, or one of the builtin instances.
pub fn load_instance(path: &str) -> Result<Instance> {
    match path {
        BUILTIN_REFERENCE => reference_instance(),
        BUILTIN_TWO_STATE => two_state_instance(0.1, 0.2, 0.9),
        _ => {
            let inst = Instance::load(path)?;
            inst.validate()?;
            Ok(inst)
        }
    }
}

/// Stepsizes and frame length used for every run at one `(K, η₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    #[serde(rename = "K")]
    pub k: usize,
    pub eta1: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub c5: f64,
    pub initialization_term: f64,
}

/// Instance-level quantities evaluated at the initial actor `v₀ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialOracle {
    pub c0: f64,
    pub rho: f64,
    pub lambda_min: f64,
    pub c2: f64,
    pub r_w: f64,
}

pub fn initial_oracle(inst: &Instance, cfg: &ExperimentConfig) -> Result<InitialOracle> {
    let v0 = Vector::zeros(inst.feats.d_v());
    let policy = SoftmaxPolicy::new(v0.clone(), &inst.feats)?;
    let mix = theory::estimate_mixing(&inst.mdp, &policy, cfg.mixing_horizon)?;
    let bound = mix.bound().expect("a positive mixing horizon always yields a fit");
    let po = PolicyOracle::new(&inst.mdp, &inst.feats, &v0)?;
    let lambda_min = po.conditioning(1)?.lambda_min;
    Ok(InitialOracle {
        c0: bound.c0,
        rho: bound.rho,
        lambda_min,
        c2: cfg.c2.unwrap_or_else(|| oracle::heuristic_c2(bound.c0, bound.rho)),
        r_w: cfg.r_w.unwrap_or_else(|| oracle::default_radius(&inst.mdp)),
    })
}

fn constants_at(inst: &Instance, init: &InitialOracle, eta1: f64, t_len: usize) -> TheoreticalConstants {
    let gamma = inst.mdp.gamma();
    oracle::constants(ConstantsInput {
        gamma,
        t_len,
        r_r: inst.mdp.r_max(),
        r_w: init.r_w,
        n_actions: inst.mdp.n_actions(),
        eta1,
        sigma: (1.0 - gamma.powi(t_len as i32)) * init.lambda_min,
        c2: init.c2,
    })
}

/// Resolves `(α, β, T)` for one grid point.
///
/// Under `c5_coupled` with `T = auto`, `β` depends on `T` through `c₅` and `T`
/// depends on `β`; the smallest `T` with `c₅(T)α < 1` and
/// `T ≥ T_min(c₅(T)α)` is used.
pub fn plan_entry(
    inst: &Instance,
    cfg: &ExperimentConfig,
    init: &InitialOracle,
    k: usize,
    eta1: f64,
) -> Result<PlanEntry> {
    let alpha = match cfg.alpha_rule {
        AlphaRule::ThetaInvSqrtK { a0 } => a0 / (k as f64).sqrt(),
        AlphaRule::Explicit { alpha } => alpha,
    };
    let gamma = inst.mdp.gamma();
    let beta_for = |t: usize| match cfg.beta_rule {
        BetaRule::C5Coupled => constants_at(inst, init, eta1, t).c5 * alpha,
        BetaRule::Explicit { beta } => beta,
    };
    let t_min = |beta: f64| {
        algo::min_trajectory_length(beta, gamma, init.c0, init.rho)
            .map_err(|e| Error::InvalidConfig(format!("K = {k}: cannot size T for beta = {beta}: {e}")))
    };
    let t_len = match cfg.t_rule {
        TRule::Explicit { t } => t,
        TRule::Auto => {
            // smallest self-consistent frame length: short frames shrink σ
            // and inflate c₅, so the coupled β itself depends on T
            let mut found = None;
            for t in 1..=MAX_AUTO_T {
                let beta = beta_for(t);
                if beta < 1.0 && t >= t_min(beta)? {
                    found = Some(t);
                    break;
                }
                if matches!(cfg.beta_rule, BetaRule::Explicit { .. }) {
                    found = Some(t_min(beta)?);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "K = {k}: no frame length up to {MAX_AUTO_T} keeps beta below 1"
                ))
            })?
        }
    };
    let consts = constants_at(inst, init, eta1, t_len);
    Ok(PlanEntry {
        k,
        eta1,
        alpha,
        beta: beta_for(t_len),
        t_len,
        c5: consts.c5,
        initialization_term: consts.initialization_term(k),
    })
}

/// Hook filling the oracle columns on decimated frames.
pub struct OracleHook<'a> {
    mdp: &'a FiniteMdp,
    feats: &'a FeatureSet,
    t_len: usize,
    start: StartDist,
    decimation: usize,
    oracle_critic: bool,
}

impl<'a> OracleHook<'a> {
    pub fn new(mdp: &'a FiniteMdp, feats: &'a FeatureSet, t_len: usize, start: StartDist, decimation: usize) -> Self {
        Self {
            mdp,
            feats,
            t_len,
            start,
            decimation: decimation.max(1),
            oracle_critic: false,
        }
    }

    pub fn with_oracle_critic(mut self, on: bool) -> Self {
        self.oracle_critic = on;
        self
    }
}

impl FrameHook for OracleHook<'_> {
    fn metrics(&mut self, k: usize, v: &Vector, w: &Vector) -> Result<FrameMetrics> {
        if !k.is_multiple_of(self.decimation) {
            return Ok(FrameMetrics::MISSING);
        }
        let po = PolicyOracle::new(self.mdp, self.feats, v)?;
        let w_star = po.critic_system(self.t_len)?.w_star;
        Ok(FrameMetrics {
            grad_norm_sq: po.true_gradient(&self.start)?.norm_squared(),
            delta_norm_sq: (w - w_star).norm_squared(),
            j: po.j(&self.start)?,
        })
    }

    fn critic_override(&mut self, _k: usize, v: &Vector) -> Result<Option<Vector>> {
        if !self.oracle_critic {
            return Ok(None);
        }
        let po = PolicyOracle::new(self.mdp, self.feats, v)?;
        Ok(Some(po.critic_system(self.t_len)?.w_star))
    }
}

/// Aggregates of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "K")]
    pub k: usize,
    pub eta1: f64,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "T")]
    pub t_len: usize,
    /// Mean of `grad_norm_sq + delta_norm_sq` over the decimated frames.
    pub metric: f64,
    pub initial_j: f64,
    pub final_j: f64,
    pub final_delta: f64,
}

/// Mean of the stationarity metric over the frames where it was evaluated.
pub fn run_metric(log: &RunLog) -> f64 {
    metric_of(log.records.iter().map(|r| (r.grad_norm_sq, r.delta_norm_sq)))
}

fn metric_of(rows: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (g, d) in rows {
        if g.is_nan() || d.is_nan() {
            continue;
        }
        sum += g + d;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn last_logged(log: &RunLog, field: impl Fn(&algo::FrameRecord) -> f64) -> f64 {
    log.records
        .iter()
        .rev()
        .map(&field)
        .find(|x| !x.is_nan())
        .unwrap_or(f64::NAN)
}

fn first_logged(log: &RunLog, field: impl Fn(&algo::FrameRecord) -> f64) -> f64 {
    log.records.iter().map(&field).find(|x| !x.is_nan()).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub eta1: f64,
    pub mean_metric: f64,
    pub stderr_metric: f64,
    /// This grid point's additive share of the fitted slope,
    /// `(x_i − x̄)(y_i − ȳ) / Σ(x − x̄)²` in log-log coordinates.
    pub slope_contrib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub per_k_averages: Vec<f64>,
    #[serde(rename = "K_grid")]
    pub k_grid: Vec<usize>,
}

/// Least-squares line through `(ln K, ln avg)`.
pub fn fit_rate(per_k_averages: &[f64], k_grid: &[usize]) -> Result<RateFit> {
    if per_k_averages.len() != k_grid.len() {
        return Err(Error::DegenerateFit(format!(
            "{} averages for {} grid points",
            per_k_averages.len(),
            k_grid.len()
        )));
    }
    if k_grid.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 grid points, got {}",
            k_grid.len()
        )));
    }
    if let Some(bad) = per_k_averages.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::DegenerateFit(format!("average {bad} is not positive")));
    }
    let xs: Vec<f64> = k_grid.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = per_k_averages.iter().map(|a| a.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys)?;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        per_k_averages: per_k_averages.to_vec(),
        k_grid: k_grid.to_vec(),
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all grid points coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    Ok((slope, y_mean - slope * x_mean))
}

fn slope_contributions(k_grid: &[usize], means: &[f64]) -> Vec<f64> {
    if k_grid.len() < 2 || means.iter().any(|&m| !(m > 0.0)) {
        return vec![f64::NAN; k_grid.len()];
    }
    let xs: Vec<f64> = k_grid.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    xs.iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean) / sxx)
        .collect()
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates `(K, η₁, metric)` triples into summary rows sorted by `η₁`
/// then `K`. Means are plain sums in input order divided by the count.
pub fn summarize(per_run: &[(usize, f64, f64)]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, usize), (f64, Vec<f64>)> = BTreeMap::new();
    for &(k, eta1, metric) in per_run {
        groups
            .entry((eta1.to_bits(), k))
            .or_insert_with(|| (eta1, Vec::new()))
            .1
            .push(metric);
    }
    let mut by_eta: BTreeMap<u64, Vec<SummaryRow>> = BTreeMap::new();
    for ((eta_bits, k), (eta1, metrics)) in groups {
        let (mean, stderr) = mean_and_stderr(&metrics);
        by_eta.entry(eta_bits).or_default().push(SummaryRow {
            k,
            eta1,
            mean_metric: mean,
            stderr_metric: stderr,
            slope_contrib: f64::NAN,
        });
    }
    let mut rows = Vec::new();
    for (_, mut group) in by_eta {
        group.sort_by_key(|r| r.k);
        let ks: Vec<usize> = group.iter().map(|r| r.k).collect();
        let means: Vec<f64> = group.iter().map(|r| r.mean_metric).collect();
        for (row, c) in group.iter_mut().zip(slope_contributions(&ks, &means)) {
            row.slope_contrib = c;
        }
        rows.extend(group);
    }
    rows.sort_by(|a, b| a.eta1.total_cmp(&b.eta1).then(a.k.cmp(&b.k)));
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k, r.eta1, r.mean_metric, r.stderr_metric, r.slope_contrib
        ));
    }
    out
}

/// Per-η₁ rate fits over the summary; `None` when the grid is too short or
/// an average is not positive.
pub fn fits_by_eta(rows: &[SummaryRow]) -> Vec<(f64, Option<RateFit>)> {
    let mut by_eta: BTreeMap<u64, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_eta.entry(r.eta1.to_bits()).or_default().push(r);
    }
    let mut out: Vec<(f64, Option<RateFit>)> = by_eta
        .into_values()
        .map(|group| {
            let ks: Vec<usize> = group.iter().map(|r| r.k).collect();
            let means: Vec<f64> = group.iter().map(|r| r.mean_metric).collect();
            (group[0].eta1, fit_rate(&means, &ks).ok())
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn run_file_name(k: usize, eta1: f64, seed: u64) -> String {
    format!("run_K{k}_eta{eta1}_seed{seed}.csv")
}

/// Inverse of [`run_file_name`].
pub fn parse_run_file_name(name: &str) -> Option<(usize, f64, u64)> {
    let rest = name.strip_prefix("run_K")?.strip_suffix(".csv")?;
    let (k, rest) = rest.split_once("_eta")?;
    let (eta, seed) = rest.split_once("_seed")?;
    Some((k.parse().ok()?, eta.parse().ok()?, seed.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub eta1: f64,
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub initial: InitialOracle,
    pub plan: Vec<PlanEntry>,
    pub runs: Vec<RunSummary>,
    pub logs: Vec<RunLog>,
    pub summary: Vec<SummaryRow>,
    pub fits: Vec<FitRecord>,
}

impl ExperimentOutput {
    /// Fit for one `η₁`, if the grid allowed one.
    pub fn fit(&self, eta1: f64) -> Option<&RateFit> {
        self.fits
            .iter()
            .find(|f| f.eta1.to_bits() == eta1.to_bits())
            .and_then(|f| f.fit.as_ref())
    }

    /// Per-K seed averages for one `η₁`, in grid order.
    pub fn per_k_averages(&self, eta1: f64) -> Vec<f64> {
        self.summary
            .iter()
            .filter(|r| r.eta1.to_bits() == eta1.to_bits())
            .map(|r| r.mean_metric)
            .collect()
    }
}

struct Job {
    entry: PlanEntry,
    seed: u64,
}

/// Runs every `(K, seed, η₁)` of the grid.
///
/// With `out_dir` set, the effective config, the plan, one CSV per run (in
/// `runs/`), `summary.csv` and `rate_fit.json` are written; run files are
/// written as runs finish so completed work survives a later failure.
pub fn run_experiment(cfg: &ExperimentConfig, inst: &Instance, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, inst, out_dir, CriticRule::HeavyBall)
}

fn run_experiment_with(
    cfg: &ExperimentConfig,
    inst: &Instance,
    out_dir: Option<&Path>,
    critic_rule: CriticRule,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    crate::mdp::validate_instance(&inst.mdp, &inst.feats)?;
    let init = initial_oracle(inst, cfg)?;
    let mut plan = Vec::new();
    for &eta1 in &cfg.eta1_grid {
        for &k in &cfg.k_grid {
            plan.push(plan_entry(inst, cfg, &init, k, eta1)?);
        }
    }
    let runs_dir = match out_dir {
        Some(dir) => {
            let runs = dir.join("runs");
            fs::create_dir_all(&runs)?;
            fs::write(dir.join("config.json"), cfg.to_json()?)?;
            fs::write(dir.join("plan.json"), serde_json::to_string_pretty(&plan)?)?;
            Some(runs)
        }
        None => None,
    };
    let jobs: Vec<Job> = plan
        .iter()
        .flat_map(|&entry| cfg.seeds.iter().map(move |&seed| Job { entry, seed }))
        .collect();
    let mixing = MixingBound {
        c0: init.c0,
        rho: init.rho,
    };
    let results: Vec<Result<(RunSummary, RunLog)>> = jobs
        .par_iter()
        .map(|job| {
            let e = job.entry;
            let hp = HyperParams {
                alpha: e.alpha,
                beta: e.beta,
                eta1: e.eta1,
                t_len: e.t_len,
                r_w: init.r_w,
                k_frames: e.k,
                enforce_t: cfg.enforce_t.then_some(mixing),
            };
            let mut hook = OracleHook::new(&inst.mdp, &inst.feats, e.t_len, cfg.start_dist.clone(), cfg.decimation)
                .with_oracle_critic(cfg.oracle_critic);
            let opts = RunOptions {
                critic_rule,
                ..RunOptions::default()
            };
            let log = algo::run_with(&inst.mdp, &inst.feats, &hp, &opts, job.seed, &mut hook)?;
            if let Some(dir) = &runs_dir {
                let mut file = fs::File::create(dir.join(run_file_name(e.k, e.eta1, job.seed)))?;
                log.write_csv(&mut file)?;
            }
            let summary = RunSummary {
                k: e.k,
                eta1: e.eta1,
                seed: job.seed,
                alpha: e.alpha,
                beta: e.beta,
                t_len: e.t_len,
                metric: run_metric(&log),
                initial_j: first_logged(&log, |r| r.j),
                final_j: last_logged(&log, |r| r.j),
                final_delta: last_logged(&log, |r| r.delta_norm_sq),
            };
            info!(
                "K = {}, eta1 = {}, seed = {}: metric {}",
                e.k, e.eta1, job.seed, summary.metric
            );
            Ok((summary, log))
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut logs = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok((s, l)) => {
                runs.push(s);
                logs.push(l);
            }
            Err(e) => {
                warn!("run failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    let triples: Vec<(usize, f64, f64)> = runs.iter().map(|r| (r.k, r.eta1, r.metric)).collect();
    let summary = summarize(&triples);
    let fits: Vec<FitRecord> = fits_by_eta(&summary)
        .into_iter()
        .map(|(eta1, fit)| FitRecord { eta1, fit })
        .collect();
    if let Some(dir) = out_dir {
        fs::write(dir.join("summary.csv"), summary_csv(&summary))?;
        fs::write(dir.join("rate_fit.json"), serde_json::to_string_pretty(&fits)?)?;
        fs::write(dir.join("runs.json"), serde_json::to_string_pretty(&runs)?)?;
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        initial: init,
        plan,
        runs,
        logs,
        summary,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta1: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_metric: f64,
    pub mean_final_delta: f64,
    /// Same seeds and stepsizes with the momentum-free critic recursion.
    pub baseline_final_delta: f64,
    /// `2(1 − η₁) R_w R_g c₅ / (η₁ K)`.
    pub initialization_term: f64,
}

/// Compares momentum factors under identical seeds and instances.
pub fn momentum_sweep(cfg: &ExperimentConfig, inst: &Instance, out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    if cfg.eta1_grid.len() < 2 {
        return Err(Error::InvalidConfig(
            "a momentum sweep needs at least two eta1 values".into(),
        ));
    }
    let main = run_experiment(cfg, inst, out_dir)?;
    let baseline = run_experiment_with(cfg, inst, None, CriticRule::PlainSemiGradient)?;
    let mean_final = |runs: &[RunSummary], k: usize, eta1: f64| {
        let v: Vec<f64> = runs
            .iter()
            .filter(|r| r.k == k && r.eta1.to_bits() == eta1.to_bits())
            .map(|r| r.final_delta)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut rows = Vec::new();
    for entry in &main.plan {
        let metric = main
            .summary
            .iter()
            .find(|r| r.k == entry.k && r.eta1.to_bits() == entry.eta1.to_bits())
            .map(|r| r.mean_metric)
            .unwrap_or(f64::NAN);
        rows.push(SweepRow {
            eta1: entry.eta1,
            k: entry.k,
            mean_metric: metric,
            mean_final_delta: mean_final(&main.runs, entry.k, entry.eta1),
            baseline_final_delta: mean_final(&baseline.runs, entry.k, entry.eta1),
            initialization_term: entry.initialization_term,
        });
    }
    if let Some(dir) = out_dir {
        let mut out = SWEEP_COLUMNS.join(",");
        out.push('\n');
        for r in &rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.eta1, r.k, r.mean_metric, r.mean_final_delta, r.baseline_final_delta, r.initialization_term
            ));
        }
        fs::write(dir.join("sweep.csv"), out)?;
    }
    Ok(rows)
}

/// Per-run metrics recomputed from the raw CSVs of a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub runs: Vec<(usize, f64, u64, f64)>,
    pub summary: Vec<SummaryRow>,
}

/// Re-reads every `run_K*_eta*_seed*.csv` under `dir` (or `dir/runs`) and
/// rebuilds the summary from the logged oracle columns.
pub fn audit_dir(dir: &Path) -> Result<Audit> {
    let runs_dir = if dir.join("runs").is_dir() {
        dir.join("runs")
    } else {
        dir.to_path_buf()
    };
    let mut files: Vec<(PathBuf, (usize, f64, u64))> = Vec::new();
    for entry in fs::read_dir(&runs_dir)? {
        let path = entry?.path();
        if let Some(meta) = path.file_name().and_then(|n| n.to_str()).and_then(parse_run_file_name) {
            files.push((path, meta));
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no run CSV files in {}",
            runs_dir.display()
        )));
    }
    // same order as the experiment's job list: eta1, K, then seed as listed
    // in the config when present, numeric otherwise
    let seed_order: Option<Vec<u64>> = ExperimentConfig::load(dir.join("config.json")).ok().map(|c| c.seeds);
    let rank = |seed: u64| {
        seed_order
            .as_ref()
            .and_then(|s| s.iter().position(|&x| x == seed))
            .unwrap_or(usize::MAX)
    };
    files.sort_by(|a, b| {
        let (ka, ea, sa) = a.1;
        let (kb, eb, sb) = b.1;
        ea.total_cmp(&eb)
            .then(ka.cmp(&kb))
            .then(rank(sa).cmp(&rank(sb)))
            .then(sa.cmp(&sb))
    });
    let mut runs = Vec::with_capacity(files.len());
    for (path, (k, eta1, seed)) in &files {
        let metric = read_run_metric(path)?;
        runs.push((*k, *eta1, *seed, metric));
    }
    let triples: Vec<(usize, f64, f64)> = runs.iter().map(|&(k, e, _, m)| (k, e, m)).collect();
    Ok(Audit {
        summary: summarize(&triples),
        runs,
    })
}

fn read_run_metric(path: &Path) -> Result<f64> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(format!("{name} (in {})", path.display())))
    };
    let (gi, di) = (column("grad_norm_sq")?, column("delta_norm_sq")?);
    column("k")?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        };
        rows.push((parse(gi)?, parse(di)?));
    }
    Ok(metric_of(rows.into_iter()))
}

/// Largest absolute difference between two summaries over matching rows;
/// `None` when the rows do not line up.
pub fn summary_difference(a: &[SummaryRow], b: &[SummaryRow]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.k != y.k || x.eta1.to_bits() != y.eta1.to_bits() {
            return None;
        }
        for (p, q) in [(x.mean_metric, y.mean_metric), (x.stderr_metric, y.stderr_metric)] {
            worst = worst.max((p - q).abs());
        }
    }
    Some(worst)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    for col in SUMMARY_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(format!("{col} (in {})", path.display())));
        }
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Static log-log scatter of the per-K averages with the fitted line.
pub fn rate_plot_svg(fits: &[FitRecord]) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let points: Vec<(f64, f64)> = fits
        .iter()
        .filter_map(|f| f.fit.as_ref())
        .flat_map(|f| {
            f.k_grid
                .iter()
                .zip(&f.per_k_averages)
                .map(|(&k, &a)| ((k as f64).log10(), a.log10()))
        })
        .collect();
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if points.is_empty() {
        svg.push_str("<text x=\"20\" y=\"40\">no fit available</text>\n</svg>\n");
        return svg;
    }
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad
    ));
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 K</text>\n",
        w / 2.0,
        h - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 metric</text>\n",
        h / 2.0,
        h / 2.0
    ));
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    for (i, f) in fits.iter().enumerate() {
        let Some(fit) = &f.fit else { continue };
        let color = colors[i % colors.len()];
        for (&k, &a) in fit.k_grid.iter().zip(&fit.per_k_averages) {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n",
                sx((k as f64).log10()),
                sy(a.log10())
            ));
        }
        // fitted in natural logs; the slope is unchanged in log10
        let line = |lx: f64| (fit.intercept / std::f64::consts::LN_10) + fit.slope * lx;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\"/>\n",
            sx(x0),
            sy(line(x0)),
            sx(x1),
            sy(line(x1))
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">eta1 = {}: slope {:.3}, r2 {:.3}</text>\n",
            pad + 10.0,
            pad + 16.0 * (i as f64 + 1.0),
            f.eta1,
            fit.slope,
            fit.r_squared
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    }
}

/// Everything `report` derives from a run directory.
#[derive(Debug, Clone)]
pub struct Report {
    pub audit: Audit,
    pub fits: Vec<FitRecord>,
    /// Difference to the directory's own `summary.csv`, when present.
    pub summary_difference: Option<f64>,
}

pub fn report(run_dir: &Path, out_dir: Option<&Path>, svg: bool) -> Result<Report> {
    if !run_dir.is_dir() {
        return Err(Error::InvalidConfig(format!(
            "{} is not a directory",
            run_dir.display()
        )));
    }
    let audit = audit_dir(run_dir)?;
    let fits: Vec<FitRecord> = fits_by_eta(&audit.summary)
        .into_iter()
        .map(|(eta1, fit)| FitRecord { eta1, fit })
        .collect();
    if fits.iter().all(|f| f.fit.is_none()) {
        // surface the reason of the first failure
        let ks: Vec<usize> = audit
            .summary
            .iter()
            .filter(|r| r.eta1 == fits[0].eta1)
            .map(|r| r.k)
            .collect();
        let means: Vec<f64> = audit
            .summary
            .iter()
            .filter(|r| r.eta1 == fits[0].eta1)
            .map(|r| r.mean_metric)
            .collect();
        fit_rate(&means, &ks)?;
    }
    let own = run_dir.join("summary.csv");
    let summary_difference = if own.is_file() {
        summary_difference(&audit.summary, &read_summary_csv(&own)?)
    } else {
        None
    };
    if let Some(out) = out_dir {
        fs::create_dir_all(out)?;
        fs::write(out.join("audit_summary.csv"), summary_csv(&audit.summary))?;
        fs::write(out.join("audit_rate_fit.json"), serde_json::to_string_pretty(&fits)?)?;
        if svg {
            fs::write(out.join("rate_fit.svg"), rate_plot_svg(&fits))?;
        }
    }
    Ok(Report {
        audit,
        fits,
        summary_difference,
    })
}
