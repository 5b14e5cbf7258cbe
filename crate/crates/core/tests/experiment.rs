mod common;

use hba2c_core::experiment::{self, AlphaRule, BetaRule, ExperimentConfig, TRule};
use hba2c_core::generate::{generate, GeneratorParams};
use hba2c_core::oracle::StartDist;
use std::fs;

fn explicit(path: &str, k: usize, seeds: Vec<u64>, alpha: f64, t: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(path, vec![k], seeds);
    cfg.alpha_rule = AlphaRule::Explicit { alpha };
    cfg.beta_rule = BetaRule::Explicit { beta: 0.1 };
    cfg.t_rule = TRule::Explicit { t };
    cfg.enforce_t = false;
    cfg
}

#[test]
fn oracle_critic_ascends_the_objective() {
    let inst = generate(&GeneratorParams::new(5, 3, 5, 4, 0.8, 1.0, 9)).unwrap();
    let mut cfg = explicit("inline", 300, (0..12).collect(), 0.5, 8);
    cfg.oracle_critic = true;
    cfg.start_dist = StartDist::Uniform;
    cfg.decimation = 1;
    let res = experiment::run_experiment(&cfg, &inst, None).unwrap();
    let gains: Vec<f64> = res.runs.iter().map(|r| r.final_j - r.initial_j).collect();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    assert!(mean > 0.0, "gains {gains:?}");
    assert!(res.runs.iter().all(|r| r.final_delta < 1e-20));
}

#[test]
fn same_seeds_give_identical_output_files() {
    let inst = experiment::load_instance(experiment::BUILTIN_REFERENCE).unwrap();
    let cfg = explicit(experiment::BUILTIN_REFERENCE, 50, vec![4, 1], 0.05, 3);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        experiment::run_experiment(&cfg, &inst, Some(d.path())).unwrap();
    }
    for f in [
        "summary.csv",
        "runs.json",
        "runs/run_K50_eta0.5_seed4.csv",
        "runs/run_K50_eta0.5_seed1.csv",
    ] {
        assert_eq!(
            fs::read(dirs[0].path().join(f)).unwrap(),
            fs::read(dirs[1].path().join(f)).unwrap(),
            "{f}"
        );
    }
    let a = fs::read(dirs[0].path().join("runs/run_K50_eta0.5_seed4.csv")).unwrap();
    let b = fs::read(dirs[0].path().join("runs/run_K50_eta0.5_seed1.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn audit_matches_the_run_it_reads() {
    let inst = experiment::load_instance(experiment::BUILTIN_REFERENCE).unwrap();
    let mut cfg = explicit(experiment::BUILTIN_REFERENCE, 20, vec![3, 0, 2], 0.05, 3);
    cfg.k_grid = vec![20, 40, 80];
    cfg.eta1_grid = vec![0.3, 0.9];
    let dir = tempfile::tempdir().unwrap();
    let res = experiment::run_experiment(&cfg, &inst, Some(dir.path())).unwrap();
    let audit = experiment::audit_dir(dir.path()).unwrap();
    assert_eq!(experiment::summary_difference(&res.summary, &audit.summary), Some(0.0));
    assert_eq!(res.fits.len(), 2);
}
