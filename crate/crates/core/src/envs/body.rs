use rand_chacha::ChaCha8Rng;

use super::randomization::RandomizationSample;
use super::reward::FootState;
use super::terrain::TerrainProfile;

/// Heading-axis offsets of the privileged terrain samples, m.
pub fn terrain_sample_offsets() -> [f64; 11] {
    let mut o = [0.0; 11];
    for (i, v) in o.iter_mut().enumerate() {
        *v = (i as f64 - 5.0) * 0.1;
    }
    o
}

/// Physical quantities read back after a reset or a control step.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub base_position: [f64; 3],
    pub base_lin_velocity: [f64; 3],
    pub base_ang_velocity: [f64; 3],
    pub projected_gravity: [f64; 3],
    /// base height above the local terrain, m
    pub base_height: f64,
    pub joint_positions: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub joint_torques: Vec<f64>,
    pub joint_accelerations: Vec<f64>,
    pub feet: Vec<FootState>,
    pub n_collision: usize,
    pub n_joint_limit: usize,
    pub acceleration: Vec<f64>,
    pub terrain_heights: Vec<f64>,
    pub contact_forces: Vec<f64>,
    pub hidden_context: Vec<f64>,
    pub fallen: bool,
}

impl Snapshot {
    pub fn is_finite(&self) -> bool {
        let scalars = self
            .base_position
            .iter()
            .chain(&self.base_lin_velocity)
            .chain(&self.base_ang_velocity)
            .chain(&self.projected_gravity)
            .chain(std::iter::once(&self.base_height));
        let vectors = self
            .joint_positions
            .iter()
            .chain(&self.joint_velocities)
            .chain(&self.joint_torques)
            .chain(&self.joint_accelerations)
            .chain(&self.acceleration)
            .chain(&self.terrain_heights)
            .chain(&self.contact_forces)
            .chain(&self.hidden_context);
        scalars.chain(vectors).all(|v| v.is_finite())
    }
}

/// A simulated robot body. Implementations own their dynamic state; terrain
/// and randomization are supplied by the environment wrapper.
pub trait Body: Send + Sync {
    fn action_dim(&self) -> usize;
    fn n_feet(&self) -> usize;
    /// Which of (v_x, v_y, omega_z) the body can track.
    fn active_command(&self) -> [bool; 3];
    fn hidden_context_dim(&self) -> usize;
    fn reset(&mut self, terrain: &TerrainProfile, sample: &RandomizationSample);
    fn step(&mut self, action: &[f64], terrain: &TerrainProfile, dt: f64, rng: &mut ChaCha8Rng);
    fn snapshot(&self, terrain: &TerrainProfile) -> Snapshot;
    /// Adds a horizontal velocity change to the base.
    fn push(&mut self, delta: [f64; 2]);
    fn clone_box(&self) -> Box<dyn Body>;
}
