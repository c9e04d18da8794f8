//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctsrl::agent::{AgentNets, GroupTag, Mode, NetworkSizes};
use ctsrl::algo::clipped_surrogate;
use ctsrl::algo::UpdateReport;
use ctsrl::config::RunConfig;
use ctsrl::envs::{
    compute_reward, EnvProfile, FootState, RewardConfig, RewardInputs, RewardTerm, SmoothnessForm, TerrainKind,
};
use ctsrl::eval::{self, Controller, DeployedPolicy, EvalOptions, SampledPolicy};
use ctsrl::gradcheck;
use ctsrl::metrics::MetricsRow;
use ctsrl::rollout::compute_gae;
use ctsrl::train::{run_training, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn pointmass_config(n_envs: usize, iterations: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, n_envs, iterations, history: 5, latent_dim: 8, checkpoint_interval: 0, ..RunConfig::default() };
    cfg.env.profile = EnvProfile::CtxPointmass;
    cfg.env.curriculum.max_lin = 1.0;
    cfg.env.curriculum.max_yaw = 1.0;
    cfg.networks = NetworkSizes { encoder: vec![32], policy: vec![32, 32], critic: vec![32, 32], estimator: vec![32] };
    cfg
}

fn walker_config(iterations: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, n_envs: 128, iterations, history: 5, latent_dim: 8, checkpoint_interval: 0, ..RunConfig::default() };
    cfg.env.profile = EnvProfile::TerrainWalker;
    cfg.env.terrain_kinds = vec![TerrainKind::Flat, TerrainKind::RoughSlope];
    cfg.env.push_interval_steps = 100;
    cfg.env.push_max_delta = 1.5;
    cfg.networks = NetworkSizes { encoder: vec![64, 32], policy: vec![64, 64], critic: vec![64, 64], estimator: vec![32] };
    cfg
}

struct Run {
    trainer: Trainer,
    rows: Vec<MetricsRow>,
    reports: Vec<UpdateReport>,
    seconds: f64,
}

fn train(cfg: RunConfig) -> Run {
    let start = Instant::now();
    let iterations = cfg.iterations;
    let mut trainer = Trainer::new(cfg).expect("valid config");
    let mut rows = Vec::with_capacity(iterations);
    let mut reports = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (row, report) = trainer.step().expect("training step");
        rows.push(row);
        reports.push(report);
    }
    Run { trainer, rows, reports, seconds: start.elapsed().as_secs_f64() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// 1
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run(100, 0).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    let pass = report.passed() && secs < 30.0;
    let mut detail = format!("100 random networks, {} failing, routing failures {}, {secs:.1} s", report.fd_failures.len(), report.routing_failures.len());
    if let Some(f) = report.fd_failures.first() {
        detail.push_str(&format!("; first: {f}"));
    }
    outcome(pass, detail)
}

/// A_t = sum_k (gamma lambda)^(k-t) prod_{j<k} (1 - d_j) delta_k, evaluated directly.
fn gae_brute_force(r: &[f64], v: &[f64], d: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |k: usize| if k + 1 < n { v[k + 1] } else { bootstrap };
    let delta: Vec<f64> = (0..n).map(|k| r[k] + if d[k] { 0.0 } else { gamma * next_v(k) } - v[k]).collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for k in t..n {
                let alive = (t..k).all(|j| !d[j]);
                if !alive {
                    break;
                }
                sum += (gamma * lambda).powi((k - t) as i32) * delta[k];
            }
            sum
        })
        .collect()
}

// 2
fn gae_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=128);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.05)).collect();
        let bootstrap = rng.gen_range(-5.0..5.0);
        let gamma = rng.gen_range(0.8..1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let (adv, _) = compute_gae(&r, &v, &d, bootstrap, gamma, lambda);
        let oracle = gae_brute_force(&r, &v, &d, bootstrap, gamma, lambda);
        for (a, o) in adv.iter().zip(&oracle) {
            worst = worst.max((a - o).abs());
        }
    }
    outcome(worst <= 1e-10, format!("1000 sequences, max |recursive - double sum| = {worst:.2e}"))
}

// 3
fn ppo_clip_oracle(run: &Run) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let r: f64 = rng.gen_range(0.0..3.0);
        let a: f64 = rng.gen_range(-5.0..5.0);
        let eps: f64 = rng.gen_range(0.01..0.5);
        let direct = (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a);
        worst = worst.max((clipped_surrogate(r, a, eps) - direct).abs());
    }
    let ratio_dev = run.reports.iter().map(|r| r.first_ratio_deviation).fold(0.0, f64::max);
    let grad_dev = run.reports.iter().map(|r| r.first_clip_grad_deviation).fold(0.0, f64::max);
    outcome(
        worst <= 1e-12 && ratio_dev <= 1e-9 && grad_dev <= 1e-8,
        format!(
            "formula max error {worst:.2e}; over {} iterations first-minibatch max |r-1| = {ratio_dev:.2e}, max |g_clip - g_unclip| = {grad_dev:.2e}",
            run.reports.len()
        ),
    )
}

// 4
fn gradient_routing() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..3 {
        failures.extend(gradcheck::check_routing(seed).expect("routing check runs"));
    }
    let detail = if failures.is_empty() { "3 seeds, parameters unchanged where required".to_string() } else { failures.join("; ") };
    outcome(failures.is_empty(), detail)
}

// 5
fn normalization_invariant(run: &Run) -> Outcome {
    let audit = run.trainer.latent_audit;
    let policy = DeployedPolicy { nets: &run.trainer.nets, group: GroupTag::Student };
    let settings = run.trainer.cfg.settings();
    let opts = EvalOptions { n_envs: 8, ..EvalOptions::default() };
    let rows = eval::export_latents(&policy, &settings, &[TerrainKind::Flat], 2000, &opts).expect("latents export");
    let eval_err = rows.iter().map(|r| (r.z.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs()).fold(0.0, f64::max);
    let count = audit.count + rows.len();
    let worst = audit.max_norm_error.max(eval_err);
    outcome(count >= 100_000 && worst <= 1e-6, format!("{count} latents checked, max | ||z|| - 1 | = {worst:.2e}"))
}

// 6
fn toy_convergence(run: &Run) -> Outcome {
    let teacher: Vec<f64> = run.rows.iter().map(|r| r.tracking_reward_teacher.unwrap_or(f64::NAN)).collect();
    let student: Vec<f64> = run.rows.iter().map(|r| r.tracking_reward_student.unwrap_or(f64::NAN)).collect();
    // first iteration whose trailing 10-iteration mean reaches 0.8
    let reached = (9..teacher.len()).find(|&i| mean(&teacher[i - 9..=i]) >= 0.8);
    let tail = 50.min(teacher.len());
    let final_t = mean(&teacher[teacher.len() - tail..]);
    let final_s = mean(&student[student.len() - tail..]);
    let minutes = run.seconds / 60.0;
    let pass = reached.map_or(false, |i| i < 500) && final_s >= 0.9 * final_t && minutes < 20.0;
    outcome(
        pass,
        format!(
            "teacher reached 0.8 at iteration {}; final tracking teacher {final_t:.3}, student {final_s:.3} ({:.1}% gap); {minutes:.1} min",
            reached.map_or("never".into(), |i| i.to_string()),
            100.0 * (final_t - final_s) / final_t
        ),
    )
}

// 7
fn ablation_ordering() -> Outcome {
    let modes = [Mode::Oracle, Mode::Concurrent, Mode::TwoStage, Mode::Baseline, Mode::EstimatorNet];
    let opts = EvalOptions { n_envs: 16, episodes: 2, seed: 7, ..EvalOptions::default() };
    let mut errors = Vec::new();
    for mode in modes {
        let mut per_seed = Vec::new();
        for seed in 0..3 {
            let mut cfg = pointmass_config(64, 400, seed);
            cfg.algo.mode = mode;
            let run = train(cfg);
            let policy = DeployedPolicy { nets: &run.trainer.nets, group: mode.deployed_group() };
            let res = eval::eval_tracking(&policy, &run.trainer.cfg.settings(), &[TerrainKind::Flat], &opts).expect("tracking eval");
            per_seed.push(res[0].error.mean);
        }
        errors.push(mean(&per_seed));
    }
    let [oracle, ours, two_stage, baseline, estimator] = [errors[0], errors[1], errors[2], errors[3], errors[4]];
    let pass = oracle <= ours && ours <= 1.1 * two_stage && two_stage <= baseline && two_stage <= estimator;
    outcome(
        pass,
        format!(
            "mean tracking error over 3 seeds: oracle {oracle:.4}, ours {ours:.4}, two_stage {two_stage:.4}, baseline {baseline:.4}, estimator_net {estimator:.4}"
        ),
    )
}

// 8
fn reconstruction_learning(run: &Run) -> Outcome {
    let rec = |range: std::ops::RangeInclusive<usize>| median(run.rows[range].iter().map(|r| r.rec_loss).collect());
    let early = rec(0..=50);
    let late = rec(150..=200);
    outcome(late <= 0.5 * early, format!("median rec loss iterations 0-50 {early:.4}, 150-200 {late:.4} (ratio {:.3})", late / early))
}

// 9
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut files = Vec::new();
    for workers in [1usize, 2, 4] {
        let mut cfg = pointmass_config(64, 10, 11);
        cfg.workers = workers;
        let out = dir.path().join(format!("w{workers}"));
        run_training(&cfg, &out).expect("training");
        files.push(std::fs::read(out.join("metrics.csv")).expect("metrics file"));
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("10 iterations with 1, 2 and 4 workers: metrics.csv {}", if same { "bitwise identical" } else { "differs" }))
}

fn deployed(nets: &AgentNets) -> DeployedPolicy<'_> {
    DeployedPolicy { nets, group: GroupTag::Student }
}

// 10
fn push_survival() -> Outcome {
    let cfg = walker_config(400, 0);
    let untrained = Trainer::new(cfg.clone()).expect("config").nets;
    let run = train(cfg.clone());
    let settings = cfg.settings();
    let delta = 0.5 * cfg.env.curriculum.max_lin;
    let kinds = [TerrainKind::Flat, TerrainKind::RoughSlope];
    let opts = EvalOptions { seed: 5, level: 0, ..EvalOptions::default() };
    let rate = |policy: &dyn Controller| {
        let res = eval::eval_push_survival(policy, &settings, &kinds, delta, 128, &opts).expect("push eval");
        let survived: usize = res.iter().map(|r| r.survived).sum();
        let trials: usize = res.iter().map(|r| r.trials).sum();
        (100.0 * survived as f64 / trials as f64, res)
    };
    let (trained, tr) = rate(&deployed(&run.trainer.nets));
    // the untrained baseline acts randomly: it samples its initial action distribution
    let (fresh, fr) = rate(&SampledPolicy(deployed(&untrained)));
    // reported only: the untrained mean action, which mostly stands still
    let (still, _) = rate(&deployed(&untrained));
    let per = |res: &[eval::SurvivalResult]| res.iter().map(|r| format!("{} {:.1}%", r.terrain.name(), r.percent())).collect::<Vec<_>>().join(", ");
    outcome(
        trained - fresh >= 20.0,
        format!(
            "push {delta} m/s: trained {trained:.1}% ({}), untrained random {fresh:.1}% ({}), gain {:.1} points; untrained mean action {still:.1}%",
            per(&tr),
            per(&fr),
            trained - fresh
        ),
    )
}

// 11
fn reward_terms() -> Outcome {
    let jv = [0.5, -1.0, 2.0];
    let ja = [10.0, -20.0, 5.0];
    let jt = [3.0, -4.0, 1.0];
    let a = [0.2, -0.1, 0.4];
    let a1 = [0.1, 0.3, -0.2];
    let a2 = [-0.3, 0.2, 0.1];
    let feet = [
        FootState { position: [0.10, 0.05, 0.02], height: 0.02, velocity: [0.3, -0.4, 0.1], contact_force: [0.0, 0.0, 0.0] },
        FootState { position: [0.15, -0.02, 0.0], height: 0.0, velocity: [1.0, 0.0, 0.0], contact_force: [3.0, 4.0, 12.0] },
    ];
    let phases = [0.3, 0.8];
    let inp = RewardInputs {
        command: [0.5, -0.2, 0.3],
        base_lin_velocity: [0.4, 0.1, -0.05],
        base_ang_velocity: [0.2, -0.1, 0.5],
        projected_gravity: [0.1, -0.2, -0.97],
        base_height: 0.35,
        joint_velocities: &jv,
        joint_accelerations: &ja,
        joint_torques: &jt,
        action: &a,
        prev_action: &a1,
        prev_prev_action: &a2,
        n_collision: 2,
        n_joint_limit: 1,
        feet: &feet,
        feet_phase: &phases,
    };
    let mut cfg = RewardConfig::biped();
    let dt = 0.02;
    let h_des = cfg.desired_height;

    // hand evaluation of each row
    let fd: f64 = 0.1 - (0.05f64 * 0.05 + 0.07 * 0.07).sqrt();
    let expected = [
        (RewardTerm::LinTracking, (-4.0f64 * (0.01 + 0.09)).exp()),
        (RewardTerm::AngTracking, (-4.0f64 * 0.04).exp()),
        (RewardTerm::LinVelZ, 0.0025),
        (RewardTerm::AngVelXy, 0.04 + 0.01),
        (RewardTerm::JointAccel, 100.0 + 400.0 + 25.0),
        (RewardTerm::JointPower, 1.5 + 4.0 + 2.0),
        (RewardTerm::JointTorque, 9.0 + 16.0 + 1.0),
        (RewardTerm::BaseHeight, (h_des - 0.35) * (h_des - 0.35)),
        (RewardTerm::ActionRate, 0.01 + 0.16 + 0.36),
        // printed form: a_t - 2 a_{t-1} - a_{t-2}
        (RewardTerm::ActionSmoothness, 0.3f64.powi(2) + (-0.9f64).powi(2) + 0.7f64.powi(2)),
        (RewardTerm::Collision, 2.0),
        (RewardTerm::JointLimit, 1.0),
        (RewardTerm::FeetRegulation, 0.25 * (-0.02 / (0.025 * h_des)).exp() + 1.0),
        (RewardTerm::OrientationXy, 0.05f64.sqrt()),
        (RewardTerm::FeetDistance, fd.max(0.0)),
        // foot 0 in stance (phase 0.3 < 0.5) contributes nothing; foot 1 swings with |f| = 13
        (RewardTerm::FeetContactForce, 1.0 - (-0.04f64 * 13.0).exp()),
        // foot 0 in stance with |v_xy| = 0.5; foot 1 swings
        (RewardTerm::FeetVelocity, 1.0 - (-4.0f64 * 0.5).exp()),
    ];
    let got = compute_reward(&inp, &cfg, dt);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for &(term, want) in &expected {
        let err = (got.term(term) - want).abs();
        worst = worst.max(err);
        if err > 1e-10 {
            bad.push(format!("{} got {} want {want}", term.name(), got.term(term)));
        }
    }
    let total: f64 = dt * expected.iter().map(|&(t, v)| cfg.weight(t) * v).sum::<f64>();
    let total_err = (got.total - total).abs();
    if total_err > 1e-10 {
        bad.push(format!("total got {} want {total}", got.total));
    }
    cfg.smoothness_form = SmoothnessForm::SecondDifference;
    let conventional = compute_reward(&inp, &cfg, dt).term(RewardTerm::ActionSmoothness);
    let want = (-0.3f64).powi(2) + (-0.5f64).powi(2) + 0.9f64.powi(2);
    if (conventional - want).abs() > 1e-10 {
        bad.push(format!("second-difference smoothness got {conventional} want {want}"));
    }
    let covered = expected.len() == RewardTerm::ALL.len();
    if !covered {
        bad.push("not every term is covered".into());
    }
    let detail = if bad.is_empty() {
        format!("{} terms, total and both smoothness forms; max error {:.2e}", expected.len(), worst.max(total_err))
    } else {
        bad.join("; ")
    };
    outcome(bad.is_empty(), detail)
}

fn main() {
    // only run when the harness is invoked without a list request
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &'static str, o: Outcome| {
        println!("criterion {id:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    record(1, "gradient correctness", gradient_correctness());
    record(2, "GAE oracle", gae_oracle());
    record(4, "gradient routing", gradient_routing());
    record(9, "determinism", determinism());
    record(11, "reward terms", reward_terms());

    let mut cfg = pointmass_config(256, 1000, 0);
    cfg.algo.verify_on_policy = true;
    let main_run = train(cfg);
    record(3, "PPO-clip oracle", ppo_clip_oracle(&main_run));
    record(5, "latent normalization", normalization_invariant(&main_run));
    record(6, "toy convergence", toy_convergence(&main_run));
    record(8, "reconstruction learning", reconstruction_learning(&main_run));
    drop(main_run);

    record(7, "ablation ordering", ablation_ordering());
    record(10, "push survival", push_survival());

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
