use std::collections::VecDeque;

/// Fixed input scales applied when observations are flattened for the networks.
pub mod scales {
    pub const ANGULAR_VELOCITY: f64 = 0.25;
    pub const JOINT_VELOCITY: f64 = 0.05;
    pub const LINEAR_VELOCITY: f64 = 2.0;
    pub const CONTACT_FORCE: f64 = 0.01;
    pub const JOINT_TORQUE: f64 = 0.05;
    pub const JOINT_ACCELERATION: f64 = 0.002;
    pub const TERRAIN_HEIGHT: f64 = 5.0;
}

/// What a deployed robot can measure. Never contains base linear velocity or
/// terrain information.
#[derive(Clone, Debug, PartialEq)]
pub struct ProprioObs {
    /// rad/s, base frame
    pub angular_velocity: Vec<f64>,
    /// gravity direction in the base frame
    pub projected_gravity: Vec<f64>,
    /// rad (hips) or m (telescoping legs), relative to nominal
    pub joint_positions: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    /// (v_x, v_y, omega_z) in m/s, m/s, rad/s
    pub command: [f64; 3],
    pub previous_action: Vec<f64>,
    /// IMU-style linear acceleration signal (point-mass profile only), m/s^2
    pub acceleration: Vec<f64>,
}

impl ProprioObs {
    pub fn dim(&self) -> usize {
        self.angular_velocity.len()
            + self.projected_gravity.len()
            + self.joint_positions.len()
            + self.joint_velocities.len()
            + 3
            + self.previous_action.len()
            + self.acceleration.len()
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.extend(self.angular_velocity.iter().map(|v| v * scales::ANGULAR_VELOCITY));
        out.extend_from_slice(&self.projected_gravity);
        out.extend_from_slice(&self.joint_positions);
        out.extend(self.joint_velocities.iter().map(|v| v * scales::JOINT_VELOCITY));
        out.extend_from_slice(&self.command);
        out.extend_from_slice(&self.previous_action);
        out.extend_from_slice(&self.acceleration);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_into(&mut out);
        out
    }
}

/// Full simulator state available to the teacher encoder and the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivilegedState {
    pub proprio: ProprioObs,
    /// m/s, world frame
    pub base_lin_velocity: [f64; 3],
    /// terrain height minus base height at the sample grid, m
    pub terrain_heights: Vec<f64>,
    /// (x, z) ground reaction force per foot, N
    pub contact_forces: Vec<f64>,
    pub joint_torques: Vec<f64>,
    pub joint_accelerations: Vec<f64>,
    /// randomized dynamics parameters
    pub hidden_context: Vec<f64>,
    /// foot clearance above terrain, m; estimator target only, not part of the encoder input
    pub foot_heights: Vec<f64>,
}

impl PrivilegedState {
    pub fn dim(&self) -> usize {
        self.proprio.dim()
            + 3
            + self.terrain_heights.len()
            + self.contact_forces.len()
            + self.joint_torques.len()
            + self.joint_accelerations.len()
            + self.hidden_context.len()
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        self.proprio.write_into(out);
        out.extend(self.base_lin_velocity.iter().map(|v| v * scales::LINEAR_VELOCITY));
        out.extend(self.terrain_heights.iter().map(|h| h * scales::TERRAIN_HEIGHT));
        out.extend(self.contact_forces.iter().map(|f| f * scales::CONTACT_FORCE));
        out.extend(self.joint_torques.iter().map(|t| t * scales::JOINT_TORQUE));
        out.extend(self.joint_accelerations.iter().map(|a| a * scales::JOINT_ACCELERATION));
        out.extend_from_slice(&self.hidden_context);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_into(&mut out);
        out
    }
}

/// The last `H + 1` proprioceptive observations, oldest first.
#[derive(Clone, Debug)]
pub struct ObsHistory {
    frames: VecDeque<ProprioObs>,
    horizon: usize,
}

impl ObsHistory {
    /// A history filled with copies of the reset observation.
    pub fn new(horizon: usize, reset_obs: &ProprioObs) -> Self {
        let frames = std::iter::repeat(reset_obs.clone()).take(horizon + 1).collect();
        Self { frames, horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn push(&mut self, obs: ProprioObs) {
        self.frames.pop_front();
        self.frames.push_back(obs);
    }

    pub fn latest(&self) -> &ProprioObs {
        self.frames.back().expect("history is never empty")
    }

    pub fn frames(&self) -> impl Iterator<Item = &ProprioObs> {
        self.frames.iter()
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        for frame in &self.frames {
            frame.write_into(out);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.horizon + 1) * self.latest().dim());
        self.write_into(&mut out);
        out
    }
}
