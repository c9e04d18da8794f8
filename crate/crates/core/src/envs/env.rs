use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::body::{Body, Snapshot};
use super::curriculum::{curriculum_update, sample_command, CommandRange, CurriculumConfig, CurriculumOutcome, EpisodeSummary};
use super::obs::{ObsHistory, PrivilegedState, ProprioObs};
use super::pointmass::{PointMass, PointMassParams};
use super::randomization::{DomainRandomization, RandomizationSample};
use super::reward::{compute_reward, foot_phases, RewardBreakdown, RewardConfig, RewardInputs, RewardTerm, RobotProfile};
use super::terrain::{generate_terrain, TerrainKind, TerrainProfile};
use super::walker::{Walker, WalkerParams};
use crate::error::{Error, Result};

/// Control period, s (50 Hz).
pub const CONTROL_DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvProfile {
    #[serde(rename = "ctx-pointmass")]
    CtxPointmass,
    #[serde(rename = "terrain-walker")]
    TerrainWalker,
}

impl EnvProfile {
    pub fn name(self) -> &'static str {
        match self {
            EnvProfile::CtxPointmass => "ctx-pointmass",
            EnvProfile::TerrainWalker => "terrain-walker",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub profile: EnvProfile,
    pub robot: RobotProfile,
    /// assigned round-robin over environment instances
    pub terrain_kinds: Vec<TerrainKind>,
    pub max_level: u32,
    pub episode_steps: usize,
    pub command_resample_steps: usize,
    /// K in q_ref = q_nominal + K a (hip joints; leg length uses 0.4 K metres)
    pub action_scale: f64,
    pub acceleration_noise: f64,
    /// random pushes during training; 0 disables
    pub push_interval_steps: usize,
    /// maximum push magnitude, m/s
    pub push_max_delta: f64,
    pub curriculum: CurriculumConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            profile: EnvProfile::CtxPointmass,
            robot: RobotProfile::Quadruped,
            terrain_kinds: vec![TerrainKind::Flat],
            max_level: 9,
            episode_steps: 1000,
            command_resample_steps: 250,
            action_scale: 0.25,
            acceleration_noise: 0.05,
            push_interval_steps: 0,
            push_max_delta: 0.5,
            curriculum: CurriculumConfig::default(),
        }
    }
}

/// Everything an environment instance needs; shared read-only across instances.
#[derive(Clone, Debug)]
pub struct EnvSettings {
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub randomization: DomainRandomization,
    /// history length H
    pub history: usize,
}

impl EnvSettings {
    pub fn validate(&self) -> Result<()> {
        if self.env.terrain_kinds.is_empty() {
            return Err(Error::Config("env.terrain_kinds must not be empty".into()));
        }
        if self.env.episode_steps == 0 {
            return Err(Error::Config("env.episode_steps must be >= 1".into()));
        }
        if self.env.curriculum.initial_lin < 0.0 || self.env.curriculum.initial_yaw < 0.0 {
            return Err(Error::Config("command ranges must be non-negative".into()));
        }
        Ok(())
    }

    fn make_body(&self) -> Box<dyn Body> {
        match self.env.profile {
            EnvProfile::CtxPointmass => Box::new(PointMass::new(PointMassParams {
                acceleration_noise: self.env.acceleration_noise,
                desired_height: self.reward.desired_height,
                ..Default::default()
            })),
            EnvProfile::TerrainWalker => Box::new(Walker::new(WalkerParams::for_robot(
                self.env.robot,
                self.reward.desired_height,
                self.env.action_scale,
            ))),
        }
    }

    /// The only terrain the point mass ever sees is flat, with a single level.
    pub fn effective_max_level(&self) -> u32 {
        match self.env.profile {
            EnvProfile::CtxPointmass => 0,
            EnvProfile::TerrainWalker => self.env.max_level,
        }
    }
}

/// Dimensions of the flattened network inputs of one environment profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvDims {
    pub proprio: usize,
    pub privileged: usize,
    pub action: usize,
    pub n_feet: usize,
    pub history: usize,
}

impl EnvDims {
    pub fn history_input(&self) -> usize {
        self.proprio * (self.history + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Running,
    FallOver,
    TimeOut,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::Running
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub termination: Termination,
    /// dynamics produced a non-finite value; the episode was cut short
    pub invalid: bool,
}

#[derive(Clone, Debug, Default)]
struct EpisodeStats {
    steps: usize,
    lin_tracking_sum: f64,
    commanded_distance: f64,
    traveled_distance: f64,
}

/// One locomotion environment: body, terrain, command, history and rewards.
pub struct LocomotionEnv {
    settings: Arc<EnvSettings>,
    body: Box<dyn Body>,
    terrain_kind: TerrainKind,
    terrain_seed: u64,
    level: u32,
    terrain: TerrainProfile,
    rng: ChaCha8Rng,
    command: [f64; 3],
    actions: [Vec<f64>; 2],
    step_count: usize,
    sample: RandomizationSample,
    history: ObsHistory,
    state: PrivilegedState,
    snapshot: Snapshot,
    stats: EpisodeStats,
    last_fell: bool,
}

impl Clone for LocomotionEnv {
    fn clone(&self) -> Self {
        Self {
            settings: self.settings.clone(),
            body: self.body.clone_box(),
            terrain_kind: self.terrain_kind,
            terrain_seed: self.terrain_seed,
            level: self.level,
            terrain: self.terrain.clone(),
            rng: self.rng.clone(),
            command: self.command,
            actions: self.actions.clone(),
            step_count: self.step_count,
            sample: self.sample.clone(),
            history: self.history.clone(),
            state: self.state.clone(),
            snapshot: self.snapshot.clone(),
            stats: self.stats.clone(),
            last_fell: self.last_fell,
        }
    }
}

impl LocomotionEnv {
    /// Builds and resets an environment. `seed` drives terrain, randomization,
    /// commands and sensor noise for this instance only.
    pub fn new(settings: Arc<EnvSettings>, terrain_kind: TerrainKind, seed: u64, range: CommandRange) -> Result<Self> {
        settings.validate()?;
        let kind = match settings.env.profile {
            EnvProfile::CtxPointmass => TerrainKind::Flat,
            EnvProfile::TerrainWalker => terrain_kind,
        };
        let level = settings.env.curriculum_initial_level().min(settings.effective_max_level());
        let terrain = generate_terrain(kind, level, settings.effective_max_level(), seed)?;
        let body = settings.make_body();
        let action_dim = body.action_dim();
        let placeholder = ProprioObs {
            angular_velocity: vec![],
            projected_gravity: vec![],
            joint_positions: vec![],
            joint_velocities: vec![],
            command: [0.0; 3],
            previous_action: vec![],
            acceleration: vec![],
        };
        let history = ObsHistory::new(settings.history, &placeholder);
        let mut env = Self {
            body,
            terrain_kind: kind,
            terrain_seed: seed,
            level,
            terrain,
            rng: ChaCha8Rng::seed_from_u64(seed),
            command: [0.0; 3],
            actions: [vec![0.0; action_dim], vec![0.0; action_dim]],
            step_count: 0,
            sample: RandomizationSample::nominal(),
            history,
            state: empty_state(placeholder),
            snapshot: Snapshot::default(),
            stats: EpisodeStats::default(),
            last_fell: false,
            settings,
        };
        env.reset(range)?;
        Ok(env)
    }

    pub fn dims(&self) -> EnvDims {
        EnvDims {
            proprio: self.state.proprio.dim(),
            privileged: self.state.dim(),
            action: self.body.action_dim(),
            n_feet: self.body.n_feet(),
            history: self.settings.history,
        }
    }

    /// Regenerates the terrain for the current level, draws randomization and
    /// a command, and places the robot at its nominal stand.
    pub fn reset(&mut self, range: CommandRange) -> Result<&PrivilegedState> {
        let mut terrain = generate_terrain(
            self.terrain_kind,
            self.level,
            self.settings.effective_max_level(),
            self.terrain_seed,
        )?;
        let sample = self.settings.randomization.sample(&mut self.rng);
        terrain.friction = sample.friction;
        terrain.restitution = sample.restitution;
        let command = sample_command(&mut self.rng, range, self.body.active_command());
        self.reset_with(terrain, sample, command);
        Ok(&self.state)
    }

    /// Reset with explicit terrain, randomization and command.
    pub fn reset_with(&mut self, terrain: TerrainProfile, sample: RandomizationSample, command: [f64; 3]) {
        self.terrain = terrain;
        self.body.reset(&self.terrain, &sample);
        self.sample = sample;
        self.command = command;
        for a in &mut self.actions {
            a.iter_mut().for_each(|v| *v = 0.0);
        }
        self.step_count = 0;
        self.stats = EpisodeStats::default();
        self.snapshot = self.body.snapshot(&self.terrain);
        self.state = self.build_state();
        self.history = ObsHistory::new(self.settings.history, &self.state.proprio);
    }

    fn build_state(&self) -> PrivilegedState {
        let s = &self.snapshot;
        let walker = self.settings.env.profile == EnvProfile::TerrainWalker;
        let proprio = ProprioObs {
            angular_velocity: if walker { s.base_ang_velocity.to_vec() } else { vec![] },
            projected_gravity: if walker { s.projected_gravity.to_vec() } else { vec![] },
            joint_positions: s.joint_positions.clone(),
            joint_velocities: s.joint_velocities.clone(),
            command: self.command,
            previous_action: self.actions[0].clone(),
            acceleration: s.acceleration.clone(),
        };
        PrivilegedState {
            proprio,
            base_lin_velocity: s.base_lin_velocity,
            terrain_heights: s.terrain_heights.clone(),
            contact_forces: s.contact_forces.clone(),
            joint_torques: s.joint_torques.clone(),
            joint_accelerations: s.joint_accelerations.clone(),
            hidden_context: s.hidden_context.clone(),
            foot_heights: s.feet.iter().map(|f| f.height).collect(),
        }
    }

    /// Advances one control step. Does not auto-reset.
    pub fn step(&mut self, action: &[f64], range: CommandRange) -> Result<StepOutcome> {
        if action.len() != self.body.action_dim() {
            return Err(Error::Dimension {
                context: "env action".into(),
                expected: self.body.action_dim(),
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite { network: "env action".into(), detail: format!("{action:?}") });
        }
        let dt = CONTROL_DT;
        let prev_snapshot_ok = self.snapshot.is_finite();
        self.body.step(action, &self.terrain, dt, &mut self.rng);
        self.step_count += 1;

        let push_every = self.settings.env.push_interval_steps;
        if push_every > 0 && self.step_count % push_every == 0 {
            let max = self.settings.env.push_max_delta;
            let delta = [self.rng.gen_range(-max..=max), self.rng.gen_range(-max..=max)];
            self.body.push(delta);
        }

        let snapshot = self.body.snapshot(&self.terrain);
        let invalid = !snapshot.is_finite() && prev_snapshot_ok;
        if invalid {
            log::warn!(
                "non-finite dynamics on {} terrain level {} at step {}; terminating episode",
                self.terrain_kind,
                self.level,
                self.step_count
            );
        }

        let phases = foot_phases(self.step_count as f64 * dt, self.settings.reward.gait_period, snapshot.feet.len());
        let breakdown = compute_reward(
            &RewardInputs {
                command: self.command,
                base_lin_velocity: snapshot.base_lin_velocity,
                base_ang_velocity: snapshot.base_ang_velocity,
                projected_gravity: snapshot.projected_gravity,
                base_height: snapshot.base_height,
                joint_velocities: &snapshot.joint_velocities,
                joint_accelerations: &snapshot.joint_accelerations,
                joint_torques: &snapshot.joint_torques,
                action,
                prev_action: &self.actions[0],
                prev_prev_action: &self.actions[1],
                n_collision: snapshot.n_collision,
                n_joint_limit: snapshot.n_joint_limit,
                feet: &snapshot.feet,
                feet_phase: &phases,
            },
            &self.settings.reward,
            dt,
        );
        let reward = if breakdown.total.is_finite() { breakdown.total } else { 0.0 };

        // episode statistics for the curriculum
        let lin = breakdown.term(RewardTerm::LinTracking);
        let cmd_speed = self.command[0].hypot(self.command[1]);
        self.stats.steps += 1;
        self.stats.lin_tracking_sum += if lin.is_finite() { lin } else { 0.0 };
        self.stats.commanded_distance += cmd_speed * dt;
        if cmd_speed > 1e-9 && snapshot.base_lin_velocity.iter().all(|v| v.is_finite()) {
            let along = (snapshot.base_lin_velocity[0] * self.command[0]
                + snapshot.base_lin_velocity[1] * self.command[1])
                / cmd_speed;
            self.stats.traveled_distance += along * dt;
        }

        self.actions[1] = std::mem::replace(&mut self.actions[0], action.to_vec());
        self.snapshot = snapshot;

        let resample = self.settings.env.command_resample_steps;
        if resample > 0 && self.step_count % resample == 0 {
            self.command = sample_command(&mut self.rng, range, self.body.active_command());
        }

        self.state = self.build_state();
        self.history.push(self.state.proprio.clone());

        let termination = if invalid || !self.snapshot.is_finite() || self.snapshot.fallen {
            Termination::FallOver
        } else if self.step_count >= self.settings.env.episode_steps {
            Termination::TimeOut
        } else {
            Termination::Running
        };
        self.last_fell = termination == Termination::FallOver;

        Ok(StepOutcome {
            reward,
            breakdown,
            termination,
            invalid,
        })
    }

    pub fn episode_summary(&self) -> EpisodeSummary {
        let steps = self.stats.steps.max(1) as f64;
        EpisodeSummary {
            steps: self.stats.steps,
            mean_lin_tracking: self.stats.lin_tracking_sum / steps,
            commanded_distance: self.stats.commanded_distance,
            traveled_distance: self.stats.traveled_distance,
            fell: self.last_fell,
        }
    }

    /// Applies the curriculum to the finished episode and resets.
    pub fn finish_episode(&mut self, range: CommandRange) -> Result<(EpisodeSummary, CurriculumOutcome)> {
        let summary = self.episode_summary();
        let outcome = curriculum_update(
            &summary,
            self.level,
            self.settings.effective_max_level(),
            range,
            &self.settings.env.curriculum,
        );
        self.level = outcome.level;
        self.reset(range)?;
        Ok((summary, outcome))
    }

    pub fn apply_push(&mut self, delta: [f64; 2]) {
        self.body.push(delta);
        self.snapshot = self.body.snapshot(&self.terrain);
        self.state.base_lin_velocity = self.snapshot.base_lin_velocity;
    }

    pub fn set_command(&mut self, command: [f64; 3]) {
        let active = self.body.active_command();
        for i in 0..3 {
            self.command[i] = if active[i] { command[i] } else { 0.0 };
        }
        self.state.proprio.command = self.command;
    }

    pub fn set_level(&mut self, level: u32) {
        self.level = level.min(self.settings.effective_max_level());
    }

    pub fn state(&self) -> &PrivilegedState {
        &self.state
    }

    pub fn history(&self) -> &ObsHistory {
        &self.history
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn terrain(&self) -> &TerrainProfile {
        &self.terrain
    }

    pub fn terrain_kind(&self) -> TerrainKind {
        self.terrain_kind
    }

    pub fn command(&self) -> [f64; 3] {
        self.command
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn randomization(&self) -> &RandomizationSample {
        &self.sample
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    pub fn active_command(&self) -> [bool; 3] {
        self.body.active_command()
    }
}

impl EnvConfig {
    fn curriculum_initial_level(&self) -> u32 {
        0
    }
}

fn empty_state(proprio: ProprioObs) -> PrivilegedState {
    PrivilegedState {
        proprio,
        base_lin_velocity: [0.0; 3],
        terrain_heights: vec![],
        contact_forces: vec![],
        joint_torques: vec![],
        joint_accelerations: vec![],
        hidden_context: vec![],
        foot_heights: vec![],
    }
}

/// Deterministic per-instance seed derived from a run seed.
pub fn env_seed(run_seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = run_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(profile: EnvProfile) -> Arc<EnvSettings> {
        Arc::new(EnvSettings {
            env: EnvConfig { profile, ..Default::default() },
            reward: RewardConfig::quadruped(),
            randomization: DomainRandomization::default(),
            history: 5,
        })
    }

    fn range() -> CommandRange {
        CommandRange::initial(&CurriculumConfig::default())
    }

    #[test]
    fn same_seed_same_reset() {
        for profile in [EnvProfile::CtxPointmass, EnvProfile::TerrainWalker] {
            let a = LocomotionEnv::new(settings(profile), TerrainKind::Stairs, 17, range()).unwrap();
            let b = LocomotionEnv::new(settings(profile), TerrainKind::Stairs, 17, range()).unwrap();
            assert_eq!(a.state(), b.state());
            assert_eq!(a.history().to_vec(), b.history().to_vec());
        }
    }

    #[test]
    fn walker_reset_on_flat_stands_at_desired_height() {
        let s = Arc::new(EnvSettings {
            randomization: DomainRandomization { enabled: false, ..Default::default() },
            env: EnvConfig { profile: EnvProfile::TerrainWalker, ..Default::default() },
            ..(*settings(EnvProfile::TerrainWalker)).clone()
        });
        let env = LocomotionEnv::new(s, TerrainKind::Flat, 3, range()).unwrap();
        assert!((env.snapshot().base_height - 0.4).abs() < 1e-3);
    }

    #[test]
    fn timeout_at_episode_limit() {
        let mut env = LocomotionEnv::new(settings(EnvProfile::CtxPointmass), TerrainKind::Flat, 5, range()).unwrap();
        for i in 1..=1000 {
            let out = env.step(&[0.0, 0.0], range()).unwrap();
            if i < 1000 {
                assert_eq!(out.termination, Termination::Running);
            } else {
                assert_eq!(out.termination, Termination::TimeOut);
            }
        }
    }

    #[test]
    fn proprio_is_identical_to_history_head() {
        let mut env = LocomotionEnv::new(settings(EnvProfile::TerrainWalker), TerrainKind::RoughSlope, 8, range()).unwrap();
        for _ in 0..50 {
            env.step(&[0.1, -0.2, 0.3, 0.0], range()).unwrap();
            assert_eq!(&env.state().proprio, env.history().latest());
            // no velocity or terrain information in the deployable observation
            assert_eq!(env.state().proprio.dim(), 21);
        }
    }

    #[test]
    fn wrong_action_length_is_rejected() {
        let mut env = LocomotionEnv::new(settings(EnvProfile::CtxPointmass), TerrainKind::Flat, 5, range()).unwrap();
        assert!(env.step(&[0.0; 3], range()).is_err());
    }
}
