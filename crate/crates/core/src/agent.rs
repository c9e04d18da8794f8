//! Network bundle shared by rollout, update and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvDims, LocomotionEnv};
use crate::error::{Error, Result};
use crate::nn::{DiagGaussian, Mlp, MlpSpec};

/// Training mode. `Concurrent` is the full method; the others are ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Concurrent,
    TwoStage,
    Baseline,
    Oracle,
    EstimatorNet,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Concurrent, Mode::TwoStage, Mode::Baseline, Mode::Oracle, Mode::EstimatorNet];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Concurrent => "concurrent",
            Mode::TwoStage => "two_stage",
            Mode::Baseline => "baseline",
            Mode::Oracle => "oracle",
            Mode::EstimatorNet => "estimator_net",
        }
    }

    /// Group whose encoder is used at deployment.
    pub fn deployed_group(self) -> GroupTag {
        match self {
            Mode::Oracle => GroupTag::Teacher,
            _ => GroupTag::Student,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}' (expected one of concurrent, two_stage, baseline, oracle, estimator_net)")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTag {
    Teacher,
    Student,
}

impl GroupTag {
    pub fn name(self) -> &'static str {
        match self {
            GroupTag::Teacher => "teacher",
            GroupTag::Student => "student",
        }
    }
}

/// Static group assignment: the first half of the environments are teachers.
/// Single-group modes use one tag for everyone; the two-stage mode switches
/// from teachers (phase 1) to students (phase 2).
pub fn group_for(mode: Mode, phase: u8, env_index: usize, n_envs: usize) -> GroupTag {
    match mode {
        Mode::Concurrent => {
            if env_index < n_envs / 2 {
                GroupTag::Teacher
            } else {
                GroupTag::Student
            }
        }
        Mode::Oracle => GroupTag::Teacher,
        Mode::Baseline | Mode::EstimatorNet => GroupTag::Student,
        Mode::TwoStage => {
            if phase <= 1 {
                GroupTag::Teacher
            } else {
                GroupTag::Student
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSizes {
    pub encoder: Vec<usize>,
    pub policy: Vec<usize>,
    pub critic: Vec<usize>,
    pub estimator: Vec<usize>,
}

impl Default for NetworkSizes {
    fn default() -> Self {
        Self {
            encoder: vec![256, 128],
            policy: vec![256, 128, 64],
            critic: vec![256, 128, 64],
            estimator: vec![128, 64],
        }
    }
}

/// Output gain of the policy mean layer.
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

/// Privileged encoder, proprioceptive encoder, shared policy and critic, and
/// the optional estimator head.
#[derive(Clone, Debug)]
pub struct AgentNets {
    pub teacher_encoder: Mlp,
    pub student_encoder: Mlp,
    pub policy: Mlp,
    pub critic: Mlp,
    pub estimator: Option<Mlp>,
    pub dims: EnvDims,
    pub latent_dim: usize,
}

/// Per-environment inputs gathered at one step.
#[derive(Clone, Debug)]
pub struct AgentInputs {
    pub obs: Vec<f64>,
    pub privileged: Vec<f64>,
    pub history: Vec<f64>,
}

impl AgentInputs {
    pub fn from_env(env: &LocomotionEnv) -> Self {
        Self {
            obs: env.state().proprio.to_vec(),
            privileged: env.state().to_vec(),
            history: env.history().to_vec(),
        }
    }
}

/// Everything the behaviour policy produced for one environment step.
#[derive(Clone, Debug)]
pub struct Decision {
    pub inputs: AgentInputs,
    pub latent: Vec<f64>,
    pub estimate: Vec<f64>,
    pub action: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl AgentNets {
    /// `estimate_dim` 0 disables the estimator head.
    pub fn new(dims: EnvDims, latent_dim: usize, sizes: &NetworkSizes, estimate_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        for (name, hidden) in [("encoder", &sizes.encoder), ("policy", &sizes.policy), ("critic", &sizes.critic)] {
            if hidden.is_empty() {
                return Err(Error::Config(format!("networks.{name} needs at least one hidden layer")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = std::f64::consts::SQRT_2;
        let est_dim = estimate_dim;
        let teacher_encoder = Mlp::new(MlpSpec::new(dims.privileged, &sizes.encoder, latent_dim).normalized(), gain, &mut rng)?;
        let student_encoder = Mlp::new(MlpSpec::new(dims.history_input(), &sizes.encoder, latent_dim).normalized(), gain, &mut rng)?;
        let policy = Mlp::new_policy(
            MlpSpec::new(dims.proprio + latent_dim + est_dim, &sizes.policy, dims.action),
            POLICY_OUTPUT_GAIN,
            &mut rng,
        )?;
        let critic = Mlp::new(MlpSpec::new(dims.privileged + latent_dim, &sizes.critic, 1), 1.0, &mut rng)?;
        let estimator = if est_dim > 0 {
            Some(Mlp::new(MlpSpec::new(dims.history_input(), &sizes.estimator, est_dim), 1.0, &mut rng)?)
        } else {
            None
        };
        Ok(Self { teacher_encoder, student_encoder, policy, critic, estimator, dims, latent_dim })
    }

    pub fn estimate_dim(&self) -> usize {
        self.estimator.as_ref().map_or(0, |e| e.spec().output_dim)
    }

    pub fn encode(&self, group: GroupTag, inputs: &AgentInputs) -> Result<Vec<f64>> {
        match group {
            GroupTag::Teacher => self.teacher_encoder.forward(&inputs.privileged),
            GroupTag::Student => self.student_encoder.forward(&inputs.history),
        }
    }

    pub fn estimate(&self, inputs: &AgentInputs) -> Result<Vec<f64>> {
        match &self.estimator {
            Some(e) => e.forward(&inputs.history),
            None => Ok(Vec::new()),
        }
    }

    pub fn policy_input(obs: &[f64], latent: &[f64], estimate: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs.len() + latent.len() + estimate.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(latent);
        x.extend_from_slice(estimate);
        x
    }

    pub fn critic_input(privileged: &[f64], latent: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(privileged.len() + latent.len());
        x.extend_from_slice(privileged);
        x.extend_from_slice(latent);
        x
    }

    pub fn value(&self, privileged: &[f64], latent: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(&Self::critic_input(privileged, latent))?[0])
    }

    /// Samples (or, when `deterministic`, takes the mean) action for one env.
    pub fn decide(&self, group: GroupTag, inputs: AgentInputs, rng: &mut ChaCha8Rng, deterministic: bool) -> Result<Decision> {
        let latent = self.encode(group, &inputs)?;
        let estimate = self.estimate(&inputs)?;
        let mean = self.policy.forward(&Self::policy_input(&inputs.obs, &latent, &estimate))?;
        let dist = DiagGaussian::new(&mean, self.policy.log_std());
        let action = if deterministic { mean.clone() } else { dist.sample(rng) };
        let log_prob = dist.log_prob(&action);
        let value = self.value(&inputs.privileged, &latent)?;
        Ok(Decision { inputs, latent, estimate, action, mean, log_prob, value })
    }

    /// Value of the environment's current state seen through `group`'s encoder.
    pub fn state_value(&self, group: GroupTag, env: &LocomotionEnv) -> Result<f64> {
        let inputs = AgentInputs::from_env(env);
        let latent = self.encode(group, &inputs)?;
        self.value(&inputs.privileged, &latent)
    }

    /// `(name, network)` pairs in checkpoint order.
    pub fn named(&self) -> Vec<(&'static str, &Mlp)> {
        let mut v = vec![
            ("teacher_encoder", &self.teacher_encoder),
            ("student_encoder", &self.student_encoder),
            ("policy", &self.policy),
            ("critic", &self.critic),
        ];
        if let Some(e) = &self.estimator {
            v.push(("estimator", e));
        }
        v
    }
}
