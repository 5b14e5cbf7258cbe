//! The nine acceptance criteria. Each test prints one PASS/FAIL line; run
//! with `--nocapture` to see them.

mod common;

use common::*;
use hba2c_core::algo::{self, CriticRule, HyperParams, RunOptions};
use hba2c_core::experiment::{self, AlphaRule, ExperimentConfig};
use hba2c_core::linalg::{Matrix, Vector};
use hba2c_core::mdp::{sample_frame, SoftmaxPolicy};
use hba2c_core::oracle::{self, PolicyOracle, StartDist};
use hba2c_core::rng;
use hba2c_core::theory::{self, CheckInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn criterion_1_gradient_bounds() {
    let mut total = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for i in 0..20 {
        let inst = random_instance(i);
        let t_len = [1, 3, 10, 25][i as usize % 4];
        let mut check = CheckInstance::new(&inst.mdp, &inst.feats, t_len);
        check.seed = i;
        check.v_scale = [0.5, 1.0, 3.0][i as usize % 3];
        let r = theory::check_gradient_bounds(&check, 5000).unwrap();
        total += r.trials;
        violations += r.violations;
        worst = worst.min(r.worst_margin);
    }
    let pass = total >= 100_000 && violations == 0 && worst >= 0.0;
    verdict(
        1,
        "gradient bounds",
        pass,
        format!("{total} triples, {violations} violations, worst slack {worst:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_strong_monotonicity() {
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for i in 0..20 {
        let inst = random_instance(i);
        let mut check = CheckInstance::new(&inst.mdp, &inst.feats, [1, 5, 20][i as usize % 3]);
        check.seed = i;
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let v = gaussian(inst.feats.d_v(), &mut rng);
        let r = theory::check_strong_monotonicity(&check, &v, 1000).unwrap();
        violations += r.violations;
        worst = worst.min(r.worst_margin);
    }

    // one-hot tightness: along e_i with i = argmin μ the slack is
    // μ_i γ^T (1 − (P^T)_ii), which vanishes as γ^T → 0
    let inst = random_one_hot(0);
    let gamma = inst.mdp.gamma();
    let t_len = (1e-7_f64.ln() / gamma.ln()).ceil() as usize;
    let v = Vector::zeros(inst.feats.d_v());
    let po = PolicyOracle::new(&inst.mdp, &inst.feats, &v).unwrap();
    let system = po.critic_system(t_len).unwrap();
    let sigma = po.conditioning(t_len).unwrap().sigma;
    let mu = po.mu();
    let i = mu.imin();
    let mut x = Vector::zeros(mu.len());
    x[i] = 1.0;
    let slack = theory::monotonicity_slack(&system.phi_bar, &system.w_star, &(&system.w_star + &x), sigma);
    let mut p_t = Matrix::identity(mu.len(), mu.len());
    for _ in 0..t_len {
        p_t = &p_t * po.chain();
    }
    let closed = mu[i] * gamma.powi(t_len as i32) * (1.0 - p_t[(i, i)]);
    let pass = violations == 0 && worst >= -1e-10 && (-1e-10..=1e-6).contains(&slack) && (slack - closed).abs() < 1e-12;
    verdict(
        2,
        "strong monotonicity",
        pass,
        format!("{violations} violations, worst slack {worst:e}, tight slack {slack:e} (closed form {closed:e})"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_drift_bounds() {
    let inst = experiment::reference_instance().unwrap();
    let mix = theory::estimate_mixing(
        &inst.mdp,
        &SoftmaxPolicy::new(Vector::zeros(inst.feats.d_v()), &inst.feats).unwrap(),
        200,
    )
    .unwrap();
    let beta = 0.1;
    let b = mix.bound().unwrap();
    let t_len = algo::min_trajectory_length(beta, inst.mdp.gamma(), b.c0, b.rho).unwrap();
    let hp = HyperParams {
        alpha: 0.05,
        beta,
        eta1: 0.3,
        t_len,
        r_w: oracle::default_radius(&inst.mdp),
        k_frames: 1000,
        enforce_t: Some(b),
    };
    let log = algo::run_hb_a2c(&inst.mdp, &inst.feats, &hp, 11).unwrap();
    let bounds = algo::GradientBounds::new(inst.mdp.gamma(), t_len, inst.mdp.r_max(), hp.r_w);
    let r = theory::check_drift_bounds(&log, &bounds);
    let pass = r.passed && log.records.len() == 1000 && log.bound_violations == 0;
    verdict(
        3,
        "drift bounds",
        pass,
        format!(
            "{} frames, {} violations, worst margin {:e}",
            log.records.len(),
            r.violations,
            r.worst_margin
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_gradient_matches_finite_differences() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let inst = random_instance(100 + i);
        let feats = with_one_hot_critic(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let v = gaussian(feats.d_v(), &mut rng);
        let po = PolicyOracle::new(&inst.mdp, &feats, &v).unwrap();
        let w_star = po.critic_system(5).unwrap().w_star;
        let grad = po.policy_gradient(&w_star, &StartDist::Uniform).unwrap();
        let j = |v: &Vector| {
            PolicyOracle::new(&inst.mdp, &feats, v)
                .unwrap()
                .j(&StartDist::Uniform)
                .unwrap()
        };
        for _ in 0..5 {
            let u = unit(feats.d_v(), &mut rng);
            let fd = (j(&(&v + &u * h)) - j(&(&v - &u * h))) / (2.0 * h);
            worst = worst.max((grad.dot(&u) - fd).abs() / grad.norm());
        }
    }
    let pass = worst <= 1e-4;
    verdict(
        4,
        "oracle gradient consistency",
        pass,
        format!("worst relative error {worst:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_one_hot_critic_is_complete() {
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let inst = random_one_hot(10 + i);
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let v = gaussian(inst.feats.d_v(), &mut rng);
        let po = PolicyOracle::new(&inst.mdp, &inst.feats, &v).unwrap();
        let values = po.values();
        for t_len in [1, 5, 20] {
            let w = po.critic_system(t_len).unwrap().w_star;
            worst = worst.max((w - &values).amax());
        }
    }
    let pass = worst <= 1e-9;
    verdict(
        5,
        "optimal-critic completeness",
        pass,
        format!("max |w* − V| = {worst:e}"),
    );
    assert!(pass);
}

fn canonical_bits(v: &Vector) -> Vec<u64> {
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

#[test]
fn criterion_6_unit_momentum_is_momentum_free() {
    let inst = random_instance(3);
    let (mdp, feats) = (&inst.mdp, &inst.feats);
    let hp = HyperParams {
        alpha: 0.05,
        beta: 0.2,
        eta1: 1.0,
        t_len: 4,
        r_w: oracle::default_radius(mdp),
        k_frames: 1000,
        enforce_t: None,
    };
    let seed = 99;
    let momentum = algo::run_hb_a2c(mdp, feats, &hp, seed).unwrap();
    let plain_opts = RunOptions {
        critic_rule: CriticRule::PlainSemiGradient,
        ..RunOptions::default()
    };
    let plain = algo::run_with(mdp, feats, &hp, &plain_opts, seed, &mut algo::NoOracle).unwrap();

    // the recursion written out by hand with the same random streams
    let gamma = mdp.gamma();
    let mut v = Vector::zeros(feats.d_v());
    let mut w = Vector::zeros(feats.d_w());
    let mut g_last = Vector::zeros(feats.d_w());
    let u: f64 = rng::init_rng(seed).random();
    let mut state = ((u * mdp.n_states() as f64) as usize).min(mdp.n_states() - 1);
    let mut drift_bits = Vec::new();
    for k in 0..hp.k_frames {
        let policy = SoftmaxPolicy::new(v.clone(), feats).unwrap();
        let frame = sample_frame(mdp, &policy, state, hp.t_len, &mut rng::frame_rng(seed, k)).unwrap();
        state = frame.end_state();
        let g = algo::semi_gradient(feats, &w, &frame, gamma);
        let w_next = algo::critic_step(&w, &g, hp.beta, hp.r_w);
        let h = algo::policy_gradient_estimate(&policy, &w, &frame, gamma);
        let v_next = &v + &h * hp.alpha;
        drift_bits.push(((&v_next - &v).norm().to_bits(), (&w_next - &w).norm().to_bits()));
        v = v_next;
        w = w_next;
        g_last = g;
    }

    let same_csv = momentum.to_csv_string() == plain.to_csv_string();
    let same_drifts = momentum
        .records
        .iter()
        .zip(&drift_bits)
        .all(|(r, &(dv, dw))| r.v_drift.to_bits() == dv && r.w_drift.to_bits() == dw);
    let fs = &momentum.final_state;
    let same_state = canonical_bits(&fs.v) == canonical_bits(&v)
        && canonical_bits(&fs.w) == canonical_bits(&w)
        && canonical_bits(&fs.n) == canonical_bits(&g_last)
        && canonical_bits(&plain.final_state.v) == canonical_bits(&v);
    let pass = same_csv && same_drifts && same_state;
    verdict(
        6,
        "momentum-free equivalence",
        pass,
        format!("csv equal {same_csv}, drifts equal {same_drifts}, states equal {same_state}"),
    );
    assert!(pass);
}

pub fn reference_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        experiment::BUILTIN_REFERENCE,
        vec![100, 1000, 10_000],
        (0..10).collect(),
    );
    cfg.alpha_rule = AlphaRule::ThetaInvSqrtK { a0: 0.05 };
    cfg.decimation = 10;
    cfg
}

#[test]
fn criterion_7_rate_check() {
    let cfg = reference_config();
    let inst = experiment::load_instance(&cfg.instance_path).unwrap();
    let out = experiment::run_experiment(&cfg, &inst, None).unwrap();
    let fit = out.fit(0.5).expect("three grid points give a fit");
    let coupled = out
        .plan
        .iter()
        .all(|e| (e.beta - e.c5 * e.alpha).abs() <= 1e-12 * e.beta);
    let averages = out.per_k_averages(0.5);
    let monotone = averages.windows(2).all(|w| w[1] <= w[0]);
    let pass = fit.slope <= -0.35 && fit.r_squared >= 0.9 && coupled;
    verdict(
        7,
        "rate check",
        pass,
        format!(
            "slope {:.4}, r2 {:.4}, averages {:?}, nonincreasing {monotone}",
            fit.slope, fit.r_squared, averages
        ),
    );
    assert!(pass);
    assert!(monotone);
}

#[test]
fn criterion_8_lipschitz_ladder() {
    let instances = [
        experiment::reference_instance().unwrap(),
        random_instance(7),
        random_instance(12),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let mut check = CheckInstance::new(&inst.mdp, &inst.feats, 5);
        check.seed = i as u64;
        let smooth = theory::check_policy_smoothness(&check, 1000, 0.5).unwrap();
        let tv = theory::check_tv_joint_lipschitz(&check, 1000, 0.5).unwrap();
        let lip = theory::check_optimal_critic_lipschitz(&check, 1000, 0.1, tv.c2_estimate).unwrap();
        let ok =
            smooth.l_pi_emp <= 1.0 && lip.l_star_emp <= lip.l_star && lip.g_star_emp <= lip.g_star && lip.result.passed;
        pass &= ok;
        detail.push(format!(
            "L_pi {:.3} <= 1, L* {:.3e} <= {:.3e}, G* {:.3e} <= {:.3e}",
            smooth.l_pi_emp, lip.l_star_emp, lip.l_star, lip.g_star_emp, lip.g_star
        ));
    }
    verdict(8, "Lipschitz ladder", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_9_mixing_envelope() {
    let mut shipped = vec![
        experiment::reference_instance().unwrap(),
        experiment::two_state_instance(0.1, 0.2, 0.9).unwrap(),
    ];
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instances");
    for entry in std::fs::read_dir(&dir).expect("instances directory ships with the repository") {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") && !path.to_string_lossy().ends_with(".gen.json") {
            shipped.push(experiment::load_instance(path.to_str().unwrap()).unwrap());
        }
    }
    let mut dominates = true;
    for inst in &shipped {
        let policy = SoftmaxPolicy::new(Vector::zeros(inst.feats.d_v()), &inst.feats).unwrap();
        let est = theory::estimate_mixing(&inst.mdp, &policy, 100).unwrap();
        dominates &= est.envelope_dominates();
    }
    let mut worst_gap: f64 = 0.0;
    for (p, q) in [
        (0.1, 0.2),
        (0.3, 0.3),
        (0.05, 0.02),
        (0.6, 0.7),
        (0.9, 0.8),
        (0.45, 0.1),
    ] {
        let inst = experiment::two_state_instance(p, q, 0.9).unwrap();
        let policy = SoftmaxPolicy::new(Vector::zeros(inst.feats.d_v()), &inst.feats).unwrap();
        let est = theory::estimate_mixing(&inst.mdp, &policy, 60).unwrap();
        dominates &= est.envelope_dominates();
        let gap = (est.rho.unwrap() - est.second_eigenvalue_modulus).abs();
        worst_gap = worst_gap.max(gap);
        assert!((est.second_eigenvalue_modulus - (1.0 - p - q).abs()).abs() < 1e-12);
    }
    let pass = dominates && worst_gap <= 0.05;
    verdict(
        9,
        "mixing envelope",
        pass,
        format!(
            "{} shipped instances dominated: {dominates}, worst |rho − |lambda_2|| = {worst_gap:e}",
            shipped.len()
        ),
    );
    assert!(pass);
}
