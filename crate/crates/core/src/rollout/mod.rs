//! Trajectory collection for the teacher and student groups, and GAE.

mod gae;

pub use gae::{compute_gae, normalize_subset};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{AgentInputs, AgentNets, Decision, GroupTag};
use crate::envs::{EpisodeSummary, RewardTerm, Termination, VecEnv};
use crate::error::{Error, Result};

/// Transitions from one collection round, stored environment-major:
/// row `env * steps + t`.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub privileged_dim: usize,
    pub history_dim: usize,
    pub latent_dim: usize,
    pub estimate_dim: usize,
    pub action_dim: usize,
    /// velocity (3) followed by foot heights
    pub target_dim: usize,
    pub obs: Vec<f64>,
    pub privileged: Vec<f64>,
    pub history: Vec<f64>,
    pub latents: Vec<f64>,
    pub estimates: Vec<f64>,
    pub estimate_targets: Vec<f64>,
    pub actions: Vec<f64>,
    pub action_means: Vec<f64>,
    /// behaviour log-std (state independent)
    pub behavior_log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// includes the time-limit bootstrap on TimeOut rows
    pub rewards: Vec<f64>,
    /// environment reward without the bootstrap term
    pub env_rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub timeouts: Vec<bool>,
    pub groups: Vec<GroupTag>,
    pub lin_tracking: Vec<f64>,
    /// value of the state after the last step, per env
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episodes: Vec<(GroupTag, EpisodeSummary)>,
    pub invalid_episodes: usize,
}

macro_rules! row_slice {
    ($name:ident, $field:ident, $dim:ident) => {
        pub fn $name(&self, row: usize) -> &[f64] {
            &self.$field[row * self.$dim..(row + 1) * self.$dim]
        }
    };
}

impl RolloutBatch {
    row_slice!(obs_row, obs, obs_dim);
    row_slice!(privileged_row, privileged, privileged_dim);
    row_slice!(history_row, history, history_dim);
    row_slice!(latent_row, latents, latent_dim);
    row_slice!(estimate_row, estimates, estimate_dim);
    row_slice!(target_row, estimate_targets, target_dim);
    row_slice!(action_row, actions, action_dim);
    row_slice!(mean_row, action_means, action_dim);

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rows_of(&self, group: GroupTag) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.groups[r] == group).collect()
    }

    /// Per-env GAE followed by optional per-group advantage normalization.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64, normalize: bool) {
        let n = self.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        let steps = self.steps;
        let results: Vec<(Vec<f64>, Vec<f64>)> = (0..self.n_envs)
            .into_par_iter()
            .map(|e| {
                let r = e * steps..(e + 1) * steps;
                compute_gae(
                    &self.rewards[r.clone()],
                    &self.values[r.clone()],
                    &self.dones[r],
                    self.bootstrap[e],
                    gamma,
                    lambda,
                )
            })
            .collect();
        for (e, (adv, ret)) in results.into_iter().enumerate() {
            self.advantages[e * steps..(e + 1) * steps].copy_from_slice(&adv);
            self.returns[e * steps..(e + 1) * steps].copy_from_slice(&ret);
        }
        if normalize {
            for group in [GroupTag::Teacher, GroupTag::Student] {
                let rows = self.rows_of(group);
                normalize_subset(&mut self.advantages, &rows);
            }
        }
    }

    /// Mean per-step reward and mean lin-tracking term of a group.
    pub fn group_means(&self, group: GroupTag) -> Option<(f64, f64)> {
        let rows = self.rows_of(group);
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let reward = rows.iter().map(|&r| self.env_rewards[r]).sum::<f64>() / n;
        let tracking = rows.iter().map(|&r| self.lin_tracking[r]).sum::<f64>() / n;
        Some((reward, tracking))
    }

    /// Largest deviation of any stored latent norm from 1.
    pub fn max_latent_norm_error(&self) -> f64 {
        self.latents
            .chunks_exact(self.latent_dim.max(1))
            .map(|z| (z.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-environment action-sampling streams, independent of the physics streams.
pub fn policy_rngs(seed: u64, n_envs: usize) -> Vec<ChaCha8Rng> {
    (0..n_envs)
        .map(|i| ChaCha8Rng::seed_from_u64(crate::envs::env_seed(seed ^ 0x5EED_0F_AC7105, i)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CollectOptions {
    pub steps: usize,
    pub gamma: f64,
    /// act with the distribution mean
    pub deterministic: bool,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self { steps: 24, gamma: 0.99, deterministic: false }
    }
}

fn check_decision(env: usize, d: &Decision) -> Result<()> {
    if d.latent.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { network: "encoder".into(), detail: format!("latent of env {env}") });
    }
    if d.action.iter().chain(&d.mean).any(|v| !v.is_finite()) || !d.log_prob.is_finite() {
        return Err(Error::NonFinite { network: "policy".into(), detail: format!("action of env {env}") });
    }
    if !d.value.is_finite() {
        return Err(Error::NonFinite { network: "critic".into(), detail: format!("value of env {env}") });
    }
    Ok(())
}

/// Runs `opts.steps` lockstep steps. Environments reset on termination;
/// TimeOut rows get `gamma * V(s_T, z_T)` folded into their reward, FallOver
/// rows bootstrap with zero.
pub fn collect_rollouts(
    nets: &AgentNets,
    envs: &mut VecEnv,
    groups: &[GroupTag],
    rngs: &mut [ChaCha8Rng],
    opts: &CollectOptions,
) -> Result<RolloutBatch> {
    let n = envs.len();
    if groups.len() != n || rngs.len() != n {
        return Err(Error::Dimension { context: "rollout groups/rngs".into(), expected: n, got: groups.len().min(rngs.len()) });
    }
    let steps = opts.steps;
    let dims = envs.dims();
    let mut b = RolloutBatch {
        n_envs: n,
        steps,
        obs_dim: dims.proprio,
        privileged_dim: dims.privileged,
        history_dim: dims.history_input(),
        latent_dim: nets.latent_dim,
        estimate_dim: nets.estimate_dim(),
        action_dim: dims.action,
        target_dim: 3 + dims.n_feet,
        behavior_log_std: nets.policy.log_std().to_vec(),
        ..Default::default()
    };
    let rows = n * steps;
    b.rewards = vec![0.0; rows];
    b.env_rewards = vec![0.0; rows];
    b.log_probs = vec![0.0; rows];
    b.values = vec![0.0; rows];
    b.dones = vec![false; rows];
    b.timeouts = vec![false; rows];
    b.lin_tracking = vec![0.0; rows];
    b.groups = (0..rows).map(|r| groups[r / steps]).collect();
    b.obs = vec![0.0; rows * b.obs_dim];
    b.privileged = vec![0.0; rows * b.privileged_dim];
    b.history = vec![0.0; rows * b.history_dim];
    b.latents = vec![0.0; rows * b.latent_dim];
    b.estimates = vec![0.0; rows * b.estimate_dim];
    b.estimate_targets = vec![0.0; rows * b.target_dim];
    b.actions = vec![0.0; rows * b.action_dim];
    b.action_means = vec![0.0; rows * b.action_dim];

    for t in 0..steps {
        let decisions: Vec<Decision> = envs
            .envs()
            .par_iter()
            .zip(rngs.par_iter_mut())
            .zip(groups.par_iter())
            .enumerate()
            .map(|(i, ((env, rng), &g))| {
                let d = nets.decide(g, AgentInputs::from_env(env), rng, opts.deterministic)?;
                check_decision(i, &d)?;
                Ok(d)
            })
            .collect::<Result<_>>()?;
        let targets: Vec<Vec<f64>> = envs
            .envs()
            .iter()
            .map(|env| {
                let s = env.state();
                s.base_lin_velocity.iter().chain(&s.foot_heights).copied().collect()
            })
            .collect();
        let actions: Vec<Vec<f64>> = decisions.iter().map(|d| d.action.clone()).collect();
        let outcomes = envs.step(&actions)?;

        for (i, (d, out)) in decisions.into_iter().zip(outcomes).enumerate() {
            let r = i * steps + t;
            let mut reward = out.reward;
            if out.termination == Termination::TimeOut {
                reward += opts.gamma * nets.state_value(groups[i], envs.env(i))?;
            }
            b.rewards[r] = reward;
            b.env_rewards[r] = out.reward;
            b.log_probs[r] = d.log_prob;
            b.values[r] = d.value;
            b.dones[r] = out.termination.is_done();
            b.timeouts[r] = out.termination == Termination::TimeOut;
            b.lin_tracking[r] = out.breakdown.term(RewardTerm::LinTracking);
            copy_row(&mut b.obs, r, &d.inputs.obs);
            copy_row(&mut b.privileged, r, &d.inputs.privileged);
            copy_row(&mut b.history, r, &d.inputs.history);
            copy_row(&mut b.latents, r, &d.latent);
            copy_row(&mut b.estimates, r, &d.estimate);
            copy_row(&mut b.estimate_targets, r, &targets[i]);
            copy_row(&mut b.actions, r, &d.action);
            copy_row(&mut b.action_means, r, &d.mean);
            if out.invalid {
                b.invalid_episodes += 1;
            }
            if out.termination.is_done() {
                let summary = envs.finish_episode(i)?;
                b.episodes.push((groups[i], summary));
            }
        }
    }
    b.bootstrap = envs
        .envs()
        .par_iter()
        .zip(groups.par_iter())
        .map(|(env, &g)| nets.state_value(g, env))
        .collect::<Result<_>>()?;
    envs.end_iteration();
    Ok(b)
}

fn copy_row(dst: &mut [f64], row: usize, src: &[f64]) {
    let d = src.len();
    dst[row * d..(row + 1) * d].copy_from_slice(src);
}
