//! Partially observable locomotion environments: a point mass with hidden
//! dynamics context and a planar two-legged walker on generated terrain.

mod body;
mod curriculum;
mod env;
mod obs;
mod pointmass;
mod randomization;
mod reward;
mod terrain;
mod vec_env;
mod walker;

pub use body::{terrain_sample_offsets, Body, Snapshot};
pub use curriculum::{curriculum_update, sample_command, CommandRange, CurriculumConfig, CurriculumOutcome, EpisodeSummary};
pub use env::{env_seed, EnvConfig, EnvDims, EnvProfile, EnvSettings, LocomotionEnv, StepOutcome, Termination, CONTROL_DT};
pub use obs::{scales, ObsHistory, PrivilegedState, ProprioObs};
pub use pointmass::{PointMass, PointMassParams};
pub use randomization::{DomainRandomization, RandomizationSample};
pub use reward::{
    compute_reward, desired_contact, foot_phases, FootState, RewardBreakdown, RewardConfig, RewardInputs, RewardTerm,
    RobotProfile, SmoothnessForm, NUM_TERMS,
};
pub use terrain::{generate_terrain, slope_for, stair_rise_for, TerrainKind, TerrainProfile};
pub use vec_env::VecEnv;
pub use walker::{Walker, WalkerParams, FALL_HEIGHT_FRACTION, FALL_PITCH, GRAVITY, SUBSTEPS};
