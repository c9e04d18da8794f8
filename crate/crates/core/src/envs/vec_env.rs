use std::sync::Arc;

use rayon::prelude::*;

use super::curriculum::{CommandRange, EpisodeSummary};
use super::env::{env_seed, EnvDims, EnvSettings, LocomotionEnv, StepOutcome};
use crate::error::{Error, Result};

/// A fixed population of environments stepped in lockstep. Stepping fans out
/// over rayon; results come back in environment order.
pub struct VecEnv {
    envs: Vec<LocomotionEnv>,
    settings: Arc<EnvSettings>,
    range: CommandRange,
    pending_range: CommandRange,
}

impl VecEnv {
    pub fn new(settings: Arc<EnvSettings>, n_envs: usize, seed: u64) -> Result<Self> {
        if n_envs == 0 {
            return Err(Error::Config("n_envs must be >= 1".into()));
        }
        settings.validate()?;
        let range = CommandRange::initial(&settings.env.curriculum);
        let kinds = &settings.env.terrain_kinds;
        let envs = (0..n_envs)
            .map(|i| LocomotionEnv::new(settings.clone(), kinds[i % kinds.len()], env_seed(seed, i), range))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { envs, settings, range, pending_range: range })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn dims(&self) -> EnvDims {
        self.envs[0].dims()
    }

    pub fn envs(&self) -> &[LocomotionEnv] {
        &self.envs
    }

    pub fn env(&self, i: usize) -> &LocomotionEnv {
        &self.envs[i]
    }

    pub fn env_mut(&mut self, i: usize) -> &mut LocomotionEnv {
        &mut self.envs[i]
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    pub fn command_range(&self) -> CommandRange {
        self.range
    }

    /// Steps every environment with its action. No auto-reset.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StepOutcome>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Dimension { context: "vec env actions".into(), expected: self.envs.len(), got: actions.len() });
        }
        let range = self.range;
        self.envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| env.step(a, range))
            .collect()
    }

    /// Runs the curriculum for env `i` and resets it. Command-range
    /// expansions take effect at the next `end_iteration`.
    pub fn finish_episode(&mut self, i: usize) -> Result<EpisodeSummary> {
        let (summary, outcome) = self.envs[i].finish_episode(self.range)?;
        self.pending_range = self.pending_range.union(outcome.command_range);
        Ok(summary)
    }

    pub fn end_iteration(&mut self) {
        self.range = self.pending_range;
    }

    pub fn mean_level(&self) -> f64 {
        self.envs.iter().map(|e| e.level() as f64).sum::<f64>() / self.envs.len() as f64
    }
}
