//! Post-training measurement: tracking error, push survival, latent export
//! and learning-curve aggregation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{AgentInputs, AgentNets, GroupTag};
use crate::envs::{env_seed, CommandRange, EnvSettings, LocomotionEnv, TerrainKind, Termination};
use crate::error::{Error, Result};
use crate::metrics::{column, read_metrics};
use crate::nn::DiagGaussian;

/// Something that maps an environment's current observation to an action.
/// Stochastic controllers draw from `rng`, which is owned by the rollout.
pub trait Controller: Sync {
    fn act(&self, env: &LocomotionEnv, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// The deployable policy: mean action with the group's encoder.
pub struct DeployedPolicy<'a> {
    pub nets: &'a AgentNets,
    pub group: GroupTag,
}

impl DeployedPolicy<'_> {
    pub fn latent(&self, env: &LocomotionEnv) -> Result<Vec<f64>> {
        self.nets.encode(self.group, &AgentInputs::from_env(env))
    }
}

impl Controller for DeployedPolicy<'_> {
    fn act(&self, env: &LocomotionEnv, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let inputs = AgentInputs::from_env(env);
        let z = self.nets.encode(self.group, &inputs)?;
        let est = self.nets.estimate(&inputs)?;
        self.nets.policy.forward(&AgentNets::policy_input(&inputs.obs, &z, &est))
    }
}

/// Samples from the full action distribution instead of taking the mean.
pub struct SampledPolicy<'a>(pub DeployedPolicy<'a>);

impl Controller for SampledPolicy<'_> {
    fn act(&self, env: &LocomotionEnv, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mean = self.0.act(env, rng)?;
        Ok(DiagGaussian::new(&mean, self.0.nets.policy.log_std()).sample(rng))
    }
}

/// Always outputs zeros.
pub struct ZeroPolicy {
    pub action_dim: usize,
}

impl Controller for ZeroPolicy {
    fn act(&self, _env: &LocomotionEnv, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.action_dim])
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub n_envs: usize,
    pub episodes: usize,
    /// 0 keeps the configured episode length
    pub episode_steps: usize,
    pub level: u32,
    /// command bound; commands are uniform in `[-bound, bound]`
    pub command_bound: f64,
    /// overrides sampled commands for the whole episode
    pub fixed_command: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_envs: 16, episodes: 2, episode_steps: 0, level: 0, command_bound: 1.0, fixed_command: None, seed: 0 }
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate { count: 0, mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { count: n, mean, std }
}

fn eval_settings(base: &EnvSettings, opts: &EvalOptions) -> Arc<EnvSettings> {
    let mut s = base.clone();
    s.env.curriculum.enabled = false;
    s.env.curriculum.initial_lin = opts.command_bound;
    s.env.curriculum.initial_yaw = opts.command_bound;
    s.env.push_interval_steps = 0;
    if opts.episode_steps > 0 {
        s.env.episode_steps = opts.episode_steps;
    }
    if opts.fixed_command.is_some() {
        s.env.command_resample_steps = 0;
    }
    Arc::new(s)
}

fn kind_salt(kind: TerrainKind) -> u64 {
    TerrainKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64 * 0x1000_0000_0001
}

fn make_env(settings: &Arc<EnvSettings>, kind: TerrainKind, seed: u64, opts: &EvalOptions) -> Result<LocomotionEnv> {
    let range = CommandRange { lin: opts.command_bound, yaw: opts.command_bound };
    let mut env = LocomotionEnv::new(settings.clone(), kind, seed, range)?;
    env.set_level(opts.level);
    env.reset(range)?;
    if let Some(c) = opts.fixed_command {
        env.set_command(c);
    }
    Ok(env)
}

fn restart(env: &mut LocomotionEnv, opts: &EvalOptions) -> Result<()> {
    let range = CommandRange { lin: opts.command_bound, yaw: opts.command_bound };
    env.reset(range)?;
    if let Some(c) = opts.fixed_command {
        env.set_command(c);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingResult {
    pub terrain: TerrainKind,
    /// over episodes
    pub error: Aggregate,
}

/// Mean `||v_cmd_xy - v_xy||` per terrain kind, averaged over the steps of
/// each episode, with deterministic actions.
pub fn eval_tracking(
    controller: &dyn Controller,
    settings: &EnvSettings,
    kinds: &[TerrainKind],
    opts: &EvalOptions,
) -> Result<Vec<TrackingResult>> {
    let settings = eval_settings(settings, opts);
    let range = CommandRange { lin: opts.command_bound, yaw: opts.command_bound };
    kinds
        .iter()
        .map(|&kind| {
            let per_env: Vec<Vec<f64>> = (0..opts.n_envs)
                .into_par_iter()
                .map(|j| {
                    let seed = env_seed(opts.seed ^ kind_salt(kind), j);
                    let mut env = make_env(&settings, kind, seed, opts)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAC7);
                    let mut episode_errors = Vec::with_capacity(opts.episodes);
                    for e in 0..opts.episodes {
                        if e > 0 {
                            restart(&mut env, opts)?;
                        }
                        let (mut sum, mut steps) = (0.0, 0usize);
                        loop {
                            let action = controller.act(&env, &mut rng)?;
                            let out = env.step(&action, range)?;
                            let v = env.snapshot().base_lin_velocity;
                            let c = env.command();
                            sum += (c[0] - v[0]).hypot(c[1] - v[1]);
                            steps += 1;
                            if out.termination.is_done() {
                                break;
                            }
                        }
                        episode_errors.push(sum / steps as f64);
                    }
                    Ok(episode_errors)
                })
                .collect::<Result<_>>()?;
            let all: Vec<f64> = per_env.concat();
            Ok(TrackingResult { terrain: kind, error: aggregate(&all) })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalResult {
    pub terrain: TerrainKind,
    pub push_delta: f64,
    pub trials: usize,
    pub survived: usize,
}

impl SurvivalResult {
    pub fn percent(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            100.0 * self.survived as f64 / self.trials as f64
        }
    }
}

/// Push-survival rate. Each trial runs one episode; at a uniformly drawn step
/// in the middle half a velocity change of `push_delta` is applied in a random
/// planar direction (along the heading for the planar walker). A trial
/// survives when the episode reaches its time limit.
pub fn eval_push_survival(
    controller: &dyn Controller,
    settings: &EnvSettings,
    kinds: &[TerrainKind],
    push_delta: f64,
    n_trials: usize,
    opts: &EvalOptions,
) -> Result<Vec<SurvivalResult>> {
    if !(push_delta >= 0.0) {
        return Err(Error::Config("push_delta must be >= 0".into()));
    }
    let settings = eval_settings(settings, opts);
    let range = CommandRange { lin: opts.command_bound, yaw: opts.command_bound };
    let horizon = settings.env.episode_steps;
    kinds
        .iter()
        .map(|&kind| {
            let survived: Vec<bool> = (0..n_trials)
                .into_par_iter()
                .map(|j| {
                    let seed = env_seed(opts.seed ^ kind_salt(kind) ^ 0xB0B, j);
                    let mut env = make_env(&settings, kind, seed, opts)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let push_at = rng.gen_range(horizon / 4..(3 * horizon / 4).max(horizon / 4 + 1));
                    let delta = if env.active_command()[1] {
                        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                        [push_delta * angle.cos(), push_delta * angle.sin()]
                    } else {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        [sign * push_delta, 0.0]
                    };
                    loop {
                        if env.step_count() == push_at && push_delta > 0.0 {
                            env.apply_push(delta);
                        }
                        let action = controller.act(&env, &mut rng)?;
                        let out = env.step(&action, range)?;
                        match out.termination {
                            Termination::Running => {}
                            Termination::TimeOut => return Ok(true),
                            Termination::FallOver => return Ok(false),
                        }
                    }
                })
                .collect::<Result<_>>()?;
            Ok(SurvivalResult {
                terrain: kind,
                push_delta,
                trials: n_trials,
                survived: survived.iter().filter(|&&s| s).count(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub terrain: TerrainKind,
    pub z: Vec<f64>,
}

/// Runs the deployed policy on each terrain and records `n_samples` latents per terrain.
pub fn export_latents(
    policy: &DeployedPolicy<'_>,
    settings: &EnvSettings,
    kinds: &[TerrainKind],
    n_samples: usize,
    opts: &EvalOptions,
) -> Result<Vec<LatentRow>> {
    let settings = eval_settings(settings, opts);
    let range = CommandRange { lin: opts.command_bound, yaw: opts.command_bound };
    let n_envs = opts.n_envs.max(1);
    let mut rows = Vec::with_capacity(kinds.len() * n_samples);
    for &kind in kinds {
        let per_env: Vec<Vec<LatentRow>> = (0..n_envs)
            .into_par_iter()
            .map(|j| {
                let quota = n_samples / n_envs + usize::from(j < n_samples % n_envs);
                let seed = env_seed(opts.seed ^ kind_salt(kind) ^ 0x1A7, j);
                let mut env = make_env(&settings, kind, seed, opts)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::with_capacity(quota);
                while out.len() < quota {
                    let z = policy.latent(&env)?;
                    out.push(LatentRow { terrain: kind, z });
                    let action = policy.act(&env, &mut rng)?;
                    if env.step(&action, range)?.termination.is_done() {
                        restart(&mut env, opts)?;
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        rows.extend(per_env.into_iter().flatten());
    }
    Ok(rows)
}

pub fn write_tracking_csv(path: &Path, results: &[TrackingResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["terrain", "mean_error", "std", "episodes"])?;
    for r in results {
        w.write_record([r.terrain.name().to_string(), format!("{:e}", r.error.mean), format!("{:e}", r.error.std), r.error.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_survival_csv(path: &Path, results: &[SurvivalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["terrain", "push_delta", "trials", "survived", "survival_percent"])?;
    for r in results {
        w.write_record([
            r.terrain.name().to_string(),
            format!("{:e}", r.push_delta),
            r.trials.to_string(),
            r.survived.to_string(),
            format!("{:.3}", r.percent()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_latents_csv(path: &Path, rows: &[LatentRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = rows.first().map_or(0, |r| r.z.len());
    let mut header = vec!["terrain".to_string()];
    header.extend((0..dim).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.terrain.name().to_string()];
        rec.extend(r.z.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One training run to aggregate: its label, seed and metrics file.
#[derive(Clone, Debug)]
pub struct CurveSource {
    pub mode: String,
    pub seed: u64,
    pub metrics: std::path::PathBuf,
}

/// Writes `curves.csv`: per run and iteration the mean terrain level and the
/// tracking reward of the deployed group (student when present).
pub fn write_curves_csv(path: &Path, sources: &[CurveSource]) -> Result<BTreeMap<String, Vec<Aggregate>>> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["mode", "seed", "iteration", "terrain_level", "tracking_reward"])?;
    let mut per_mode: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for src in sources {
        let (header, rows) = read_metrics(&src.metrics)?;
        let level = column(&header, &rows, "terrain_level");
        let student = column(&header, &rows, "tracking_reward_student");
        let teacher = column(&header, &rows, "tracking_reward_teacher");
        let mut curve = Vec::with_capacity(rows.len());
        for i in 0..rows.len() {
            let tracking = student[i].or(teacher[i]).unwrap_or(f64::NAN);
            curve.push(tracking);
            out.write_record([
                src.mode.clone(),
                src.seed.to_string(),
                i.to_string(),
                format!("{:e}", level[i].unwrap_or(f64::NAN)),
                format!("{tracking:e}"),
            ])?;
        }
        per_mode.entry(src.mode.clone()).or_default().push(curve);
    }
    out.flush()?;
    // per-iteration aggregate over seeds
    Ok(per_mode
        .into_iter()
        .map(|(mode, curves)| {
            let len = curves.iter().map(Vec::len).min().unwrap_or(0);
            let agg = (0..len).map(|i| aggregate(&curves.iter().map(|c| c[i]).collect::<Vec<_>>())).collect();
            (mode, agg)
        })
        .collect())
}

/// Plain-text summary table.
pub fn print_table<W: Write>(mut w: W, title: &str, rows: &[(String, String)]) -> Result<()> {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(8);
    writeln!(w, "{title}")?;
    for (k, v) in rows {
        writeln!(w, "  {k:<width$}  {v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_values() {
        let a = aggregate(&[1.0, 2.0, 3.0]);
        assert_eq!(a.count, 3);
        assert_eq!(a.mean, 2.0);
        assert_eq!(a.std, 1.0);
        assert_eq!(aggregate(&[4.0]).std, 0.0);
    }
}
