use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use hba2c_core::algo;
use hba2c_core::experiment::{self, ExperimentConfig};
use hba2c_core::generate::{generate, GeneratorParams};
use hba2c_core::linalg::Vector;
use hba2c_core::mdp::{validate_instance, SoftmaxPolicy};
use hba2c_core::oracle::PolicyOracle;
use hba2c_core::theory::{self, VerifyOptions};
use hba2c_core::Error;

#[derive(Parser, Debug)]
#[command(name = "hba2c", version, about = "Heavy-ball actor-critic on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// JSON config file; flags and --set override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (gen-mdp) or directory (other subcommands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of available processors.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override a config key, e.g. `--set gamma=0.95` or `--set alpha_rule.a0=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long = "no-enforce-T", global = true)]
    no_enforce_t: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random instance file.
    GenMdp {
        #[arg(long)]
        n_states: Option<usize>,
        #[arg(long)]
        n_actions: Option<usize>,
        #[arg(long)]
        d_w: Option<usize>,
        #[arg(long)]
        d_v: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        /// Indicator critic features and tabular policy features.
        #[arg(long)]
        one_hot: bool,
    },
    /// Run an experiment grid.
    Run,
    /// Run every bound check and estimator on one instance.
    Verify {
        #[arg(long)]
        instance: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare momentum factors under identical seeds.
    Sweep,
    /// Recompute aggregates and rate fits from a run directory.
    Report {
        run_dir: PathBuf,
        /// Also write a log-log SVG plot.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    instance_path: String,
    trials: usize,
    seed: u64,
    #[serde(rename = "T")]
    t_len: Option<usize>,
    eta1: f64,
    mixing_horizon: usize,
    drift_frames: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let d = VerifyOptions::default();
        Self {
            instance_path: experiment::BUILTIN_TWO_STATE.into(),
            trials: d.trials,
            seed: d.seed,
            t_len: d.t_len,
            eta1: d.eta1,
            mixing_horizon: d.mixing_horizon,
            drift_frames: d.drift_frames,
        }
    }
}

fn default_generator() -> GeneratorParams {
    GeneratorParams::new(5, 2, 3, 4, 0.9, 1.0, 0)
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(inner) if inner.is_validation() => Failure::Validation(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Failure::Runtime(anyhow!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::GenMdp {
            n_states,
            n_actions,
            d_w,
            d_v,
            gamma,
            r_max,
            one_hot,
        } => {
            let mut params: GeneratorParams = effective_config(&cli.global, default_generator())?;
            let set = |slot: &mut usize, v: &Option<usize>| {
                if let Some(v) = v {
                    *slot = *v;
                }
            };
            set(&mut params.n_states, n_states);
            set(&mut params.n_actions, n_actions);
            set(&mut params.d_w, d_w);
            set(&mut params.d_v, d_v);
            if let Some(g) = gamma {
                params.gamma = *g;
            }
            if let Some(r) = r_max {
                params.r_max = *r;
            }
            if let Some(s) = cli.global.seed {
                params.seed = s;
            }
            if *one_hot {
                params = GeneratorParams::one_hot(
                    params.n_states,
                    params.n_actions,
                    params.gamma,
                    params.r_max,
                    params.seed,
                );
            }
            gen_mdp(&params, cli.global.out.as_deref())
        }
        Command::Run => {
            let cfg = experiment_config(&cli.global)?;
            let out = out_dir(&cli.global)?;
            let inst = experiment::load_instance(&cfg.instance_path)?;
            let res = experiment::run_experiment(&cfg, &inst, Some(&out))?;
            for row in &res.summary {
                println!(
                    "K = {:>6}  eta1 = {:<5}  mean = {:.6e}  stderr = {:.3e}",
                    row.k, row.eta1, row.mean_metric, row.stderr_metric
                );
            }
            for f in &res.fits {
                match &f.fit {
                    Some(fit) => println!("eta1 = {}: slope {:.4}, r2 {:.4}", f.eta1, fit.slope, fit.r_squared),
                    None => println!("eta1 = {}: no rate fit (needs at least 3 positive grid points)", f.eta1),
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Verify { instance, trials } => {
            let mut cfg: VerifyConfig = effective_config(&cli.global, VerifyConfig::default())?;
            if let Some(i) = instance {
                cfg.instance_path = i.clone();
            }
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            verify(&cfg, cli.global.out.as_deref())
        }
        Command::Sweep => {
            let cfg = experiment_config(&cli.global)?;
            let out = out_dir(&cli.global)?;
            let inst = experiment::load_instance(&cfg.instance_path)?;
            let rows = experiment::momentum_sweep(&cfg, &inst, Some(&out))?;
            for r in rows {
                println!(
                    "eta1 = {:<5} K = {:>6}  metric {:.4e}  final delta {:.4e}  baseline {:.4e}  O(1/K) term {:.4e}",
                    r.eta1, r.k, r.mean_metric, r.mean_final_delta, r.baseline_final_delta, r.initialization_term
                );
            }
            Ok(())
        }
        Command::Report { run_dir, svg } => {
            let out = cli.global.out.clone().unwrap_or_else(|| run_dir.clone());
            let rep = experiment::report(run_dir, Some(&out), *svg)?;
            for f in &rep.fits {
                match &f.fit {
                    Some(fit) => println!(
                        "eta1 = {}: slope {:.4}, intercept {:.4}, r2 {:.4}",
                        f.eta1, fit.slope, fit.intercept, fit.r_squared
                    ),
                    None => println!("eta1 = {}: no rate fit", f.eta1),
                }
            }
            match rep.summary_difference {
                Some(d) if d > 1e-12 => {
                    return Err(Failure::Validation(anyhow!(
                        "recomputed summary differs from {} by {d:e}",
                        run_dir.join("summary.csv").display()
                    )))
                }
                Some(d) => println!("audit: matches the stored summary (max difference {d:e})"),
                None => {}
            }
            Ok(())
        }
    }
}

fn out_dir(global: &Global) -> Result<PathBuf, Failure> {
    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn experiment_config(global: &Global) -> Result<ExperimentConfig, Failure> {
    let base = ExperimentConfig::new(experiment::BUILTIN_REFERENCE, vec![100, 1000, 10000], (0..10).collect());
    let mut cfg: ExperimentConfig = effective_config(global, base)?;
    if let Some(s) = global.seed {
        cfg.seeds = vec![s];
    }
    if global.no_enforce_t {
        cfg.enforce_t = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Defaults, then the config file, then `--set` overrides. Every key must
/// already exist in the defaults so typos are rejected before any work.
fn effective_config<T: Serialize + DeserializeOwned>(global: &Global, defaults: T) -> Result<T, Failure> {
    let mut value = serde_json::to_value(&defaults).map_err(|e| Failure::Runtime(e.into()))?;
    if let Some(path) = &global.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| Failure::Validation(anyhow!("{}: {e}", path.display())))?;
        let Value::Object(map) = file else {
            return Err(Failure::Validation(anyhow!("{} is not a JSON object", path.display())));
        };
        for (k, v) in map {
            if value.get(&k).is_none() {
                return Err(Failure::Validation(anyhow!(
                    "unknown config key `{k}` in {}",
                    path.display()
                )));
            }
            value[&k] = v;
        }
    }
    for item in &global.overrides {
        apply_override(&mut value, item).map_err(Failure::Validation)?;
    }
    serde_json::from_value(value).map_err(|e| Failure::Validation(anyhow!("invalid configuration: {e}")))
}

fn apply_override(value: &mut Value, item: &str) -> anyhow::Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
    let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    for part in key.split('.') {
        slot = match slot.get_mut(part) {
            Some(s) => s,
            None => bail!("unknown config key `{key}`"),
        };
    }
    *slot = parsed;
    Ok(())
}

fn gen_mdp(params: &GeneratorParams, out: Option<&Path>) -> Result<(), Failure> {
    let inst = generate(params)?;
    let report = validate_instance(&inst.mdp, &inst.feats)?;
    let v0 = Vector::zeros(inst.feats.d_v());
    let po = PolicyOracle::new(&inst.mdp, &inst.feats, &v0)?;
    let mix = theory::estimate_mixing(&inst.mdp, &SoftmaxPolicy::new(v0.clone(), &inst.feats)?, 200)?;
    let bound = mix.bound().expect("positive horizon");
    let t_len = algo::min_trajectory_length(0.1, inst.mdp.gamma(), bound.c0, bound.rho)?;
    let cond = po.conditioning(t_len)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("instance.json"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    inst.save(&path)?;
    let cfg_path = path.with_extension("gen.json");
    fs::write(
        &cfg_path,
        serde_json::to_string_pretty(params).map_err(|e| Failure::Runtime(e.into()))?,
    )
    .with_context(|| format!("writing {}", cfg_path.display()))?;
    println!("wrote {}", path.display());
    println!("ergodic under the uniform policy: {}", report.uniform_policy_ergodic);
    println!("lambda_min = {:.6e}", cond.lambda_min);
    println!("sigma (T = {t_len}) = {:.6e}", cond.sigma);
    println!("mixing envelope: c0 = {:.4}, rho = {:.4}", bound.c0, bound.rho);
    Ok(())
}

fn verify(cfg: &VerifyConfig, out: Option<&Path>) -> Result<(), Failure> {
    let inst = experiment::load_instance(&cfg.instance_path)?;
    if cfg.trials == 0 {
        warn!("trials = 0: every sampled check passes vacuously");
    }
    let opts = VerifyOptions {
        trials: cfg.trials,
        t_len: cfg.t_len,
        seed: cfg.seed,
        eta1: cfg.eta1,
        mixing_horizon: cfg.mixing_horizon,
        drift_frames: cfg.drift_frames,
    };
    let rep = theory::verify(&inst.mdp, &inst.feats, &opts)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("verify"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let json = |v: serde_json::Result<String>| v.map_err(|e| Failure::Runtime(e.into()));
    fs::write(out.join("verification.json"), json(serde_json::to_string_pretty(&rep))?)
        .context("writing the report")?;
    fs::write(out.join("config.json"), json(serde_json::to_string_pretty(cfg))?)
        .context("writing the effective config")?;
    for c in rep.strict.iter().chain(&rep.informational) {
        println!(
            "{:<34} trials {:>7}  violations {:>5}  worst margin {:+.3e}  {}",
            c.name,
            c.trials,
            c.violations,
            c.worst_margin,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    println!("c2 estimate {:.4e}, T = {}", rep.c2_estimate, rep.t_len);
    info!("report written to {}", out.display());
    if !rep.passed {
        return Err(Failure::Validation(anyhow!("a strict check failed")));
    }
    Ok(())
}
