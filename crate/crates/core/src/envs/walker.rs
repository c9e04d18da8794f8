//! Planar walker: a rigid base (x, z, pitch) carried by two telescoping legs
//! with point feet and spring-damper ground contact.
//!
//! Joints are position servos (hip angle and leg length per leg) driven by a
//! clamped PD law; ground loads act on the base only. Joint order is
//! `[hip_front, length_front, hip_rear, length_rear]`.

use rand_chacha::ChaCha8Rng;

use super::body::{terrain_sample_offsets, Body, Snapshot};
use super::randomization::RandomizationSample;
use super::reward::{FootState, RobotProfile};
use super::terrain::TerrainProfile;

pub const GRAVITY: f64 = 9.81;
pub const SUBSTEPS: usize = 4;
/// Pitch magnitude that counts as a fall, rad.
pub const FALL_PITCH: f64 = 1.0;
/// Fraction of desired height below which the base counts as fallen.
pub const FALL_HEIGHT_FRACTION: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct WalkerParams {
    pub base_mass: f64,
    pub base_inertia: f64,
    pub body_half_length: f64,
    /// depth of the body's lower corners below the COM
    pub body_bottom: f64,
    /// hip attachment distance from the body centre along the body axis
    pub hip_offset: f64,
    pub desired_height: f64,
    /// PD gains as (hip, length)
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    /// reflected actuator inertia as (hip kg·m², length kg)
    pub joint_inertia: [f64; 2],
    pub torque_limit: [f64; 2],
    pub hip_limits: [f64; 2],
    pub length_limits: [f64; 2],
    /// q_ref = q_nominal + scale * a, as (hip rad, length m)
    pub action_scale: [f64; 2],
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_damping: f64,
}

impl WalkerParams {
    pub fn for_robot(robot: RobotProfile, desired_height: f64, action_scale: f64) -> Self {
        let hip_offset = match robot {
            RobotProfile::Quadruped => 0.2,
            RobotProfile::Biped => 0.08,
        };
        Self {
            base_mass: 8.0,
            base_inertia: 0.5,
            body_half_length: 0.3,
            body_bottom: 0.05,
            hip_offset,
            desired_height,
            kp: [40.0, 800.0],
            kd: [1.0, 20.0],
            joint_inertia: [0.02, 0.2],
            torque_limit: [15.0, 300.0],
            hip_limits: [-1.0, 1.0],
            length_limits: [0.2, 0.65],
            action_scale: [action_scale, 0.4 * action_scale],
            contact_stiffness: 4000.0,
            contact_damping: 100.0,
            tangential_damping: 300.0,
        }
    }

    /// Leg length at which the nominal-mass robot settles at `desired_height`.
    pub fn nominal_length(&self) -> f64 {
        let settle = self.base_mass * GRAVITY / (2.0 * self.contact_stiffness);
        self.desired_height + settle
    }

    fn joint_limits(&self, j: usize) -> [f64; 2] {
        if j % 2 == 0 {
            self.hip_limits
        } else {
            self.length_limits
        }
    }
}

#[derive(Clone, Debug)]
pub struct Walker {
    params: WalkerParams,
    /// COM position (x, z) and pitch (nose up positive)
    pos: [f64; 3],
    vel: [f64; 3],
    q: [f64; 4],
    qd: [f64; 4],
    q_nominal: [f64; 4],
    torque: [f64; 4],
    joint_accel: [f64; 4],
    target: [f64; 4],
    prev_target: [f64; 4],
    foot_forces: [[f64; 2]; 2],
    n_collision: usize,
    // randomized
    mass: f64,
    inertia: f64,
    com_offset: [f64; 2],
    friction: f64,
    restitution: f64,
    kp_scale: f64,
    kd_scale: f64,
    action_delay: f64,
}

fn rotate(theta: f64, b: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [b[0] * c - b[1] * s, b[0] * s + b[1] * c]
}

/// Spring-damper normal force with viscous Coulomb-limited friction.
fn contact_force(
    pos: [f64; 2],
    vel: [f64; 2],
    terrain: &TerrainProfile,
    stiffness: f64,
    damping: f64,
    tangential: f64,
    friction: f64,
) -> Option<[f64; 2]> {
    let ground = terrain.height_at(pos[0]);
    let depth = ground - pos[1];
    if depth <= 0.0 {
        return None;
    }
    let s = terrain.slope_at(pos[0]);
    let inv = 1.0 / (1.0 + s * s).sqrt();
    let n = [-s * inv, inv];
    let t = [inv, s * inv];
    let v_n = vel[0] * n[0] + vel[1] * n[1];
    let v_t = vel[0] * t[0] + vel[1] * t[1];
    let f_n = (stiffness * depth * inv - damping * v_n).max(0.0);
    let limit = friction * f_n;
    let f_t = (-tangential * v_t).clamp(-limit, limit);
    Some([f_n * n[0] + f_t * t[0], f_n * n[1] + f_t * t[1]])
}

impl Walker {
    pub fn new(params: WalkerParams) -> Self {
        let l0 = params.nominal_length();
        let q_nominal = [0.0, l0, 0.0, l0];
        Self {
            mass: params.base_mass,
            inertia: params.base_inertia,
            params,
            pos: [0.0; 3],
            vel: [0.0; 3],
            q: q_nominal,
            qd: [0.0; 4],
            q_nominal,
            torque: [0.0; 4],
            joint_accel: [0.0; 4],
            target: q_nominal,
            prev_target: q_nominal,
            foot_forces: [[0.0; 2]; 2],
            n_collision: 0,
            com_offset: [0.0; 2],
            friction: 1.0,
            restitution: 0.5,
            kp_scale: 1.0,
            kd_scale: 1.0,
            action_delay: 0.0,
        }
    }

    pub fn params(&self) -> &WalkerParams {
        &self.params
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn pitch(&self) -> f64 {
        self.pos[2]
    }

    fn side(leg: usize) -> f64 {
        if leg == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Body-frame point relative to the COM.
    fn body_point(&self, b: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let r = rotate(self.pos[2], [b[0] - self.com_offset[0], b[1] - self.com_offset[1]]);
        let p = [self.pos[0] + r[0], self.pos[1] + r[1]];
        let v = [self.vel[0] - self.vel[2] * r[1], self.vel[1] + self.vel[2] * r[0]];
        (p, v)
    }

    fn foot(&self, leg: usize) -> ([f64; 2], [f64; 2]) {
        let (hip, hip_v) = self.body_point([Self::side(leg) * self.params.hip_offset, 0.0]);
        let (hip_q, len) = (self.q[2 * leg], self.q[2 * leg + 1]);
        let (hip_qd, len_d) = (self.qd[2 * leg], self.qd[2 * leg + 1]);
        let alpha = self.pos[2] + hip_q;
        let alpha_d = self.vel[2] + hip_qd;
        let (sa, ca) = alpha.sin_cos();
        let p = [hip[0] + len * sa, hip[1] - len * ca];
        let v = [
            hip_v[0] + len_d * sa + len * alpha_d * ca,
            hip_v[1] - len_d * ca + len * alpha_d * sa,
        ];
        (p, v)
    }

    fn body_corners(&self) -> [[f64; 2]; 2] {
        let l = self.params.body_half_length;
        let b = -self.params.body_bottom;
        [[l, b], [-l, b]]
    }

    fn mean_ground(&self, terrain: &TerrainProfile) -> f64 {
        let offsets = terrain_sample_offsets();
        offsets.iter().map(|o| terrain.height_at(self.pos[0] + o)).sum::<f64>() / offsets.len() as f64
    }

    fn substep(&mut self, target: &[f64; 4], terrain: &TerrainProfile, h: f64) {
        for j in 0..4 {
            let k = j % 2;
            let kp = self.params.kp[k] * self.kp_scale;
            let kd = self.params.kd[k] * self.kd_scale;
            let lim = self.params.torque_limit[k];
            let tau = (kp * (target[j] - self.q[j]) - kd * self.qd[j]).clamp(-lim, lim);
            self.torque[j] = tau;
            self.qd[j] += h * tau / self.params.joint_inertia[k];
            self.q[j] += h * self.qd[j];
            let [lo, hi] = self.params.joint_limits(j);
            if self.q[j] < lo {
                self.q[j] = lo;
                self.qd[j] = self.qd[j].max(0.0);
            } else if self.q[j] > hi {
                self.q[j] = hi;
                self.qd[j] = self.qd[j].min(0.0);
            }
        }

        let damping = self.params.contact_damping * 2.0 * (1.0 - self.restitution);
        let mut force = [0.0, -self.mass * GRAVITY];
        let mut moment = 0.0;
        let mut apply = |p: [f64; 2], f: [f64; 2], pos: &[f64; 3]| {
            let r = [p[0] - pos[0], p[1] - pos[1]];
            force[0] += f[0];
            force[1] += f[1];
            moment += r[0] * f[1] - r[1] * f[0];
        };
        for leg in 0..2 {
            let (p, v) = self.foot(leg);
            let f = contact_force(
                p,
                v,
                terrain,
                self.params.contact_stiffness,
                damping,
                self.params.tangential_damping,
                self.friction,
            )
            .unwrap_or([0.0; 2]);
            self.foot_forces[leg] = f;
            apply(p, f, &self.pos);
        }
        self.n_collision = 0;
        for corner in self.body_corners() {
            let (p, v) = self.body_point(corner);
            if let Some(f) = contact_force(
                p,
                v,
                terrain,
                self.params.contact_stiffness,
                damping,
                self.params.tangential_damping,
                self.friction,
            ) {
                self.n_collision += 1;
                apply(p, f, &self.pos);
            }
        }

        self.vel[0] += h * force[0] / self.mass;
        self.vel[1] += h * force[1] / self.mass;
        self.vel[2] += h * moment / self.inertia;
        for i in 0..3 {
            self.pos[i] += h * self.vel[i];
        }
    }
}

impl Body for Walker {
    fn action_dim(&self) -> usize {
        4
    }

    fn n_feet(&self) -> usize {
        2
    }

    fn active_command(&self) -> [bool; 3] {
        [true, false, false]
    }

    fn hidden_context_dim(&self) -> usize {
        8
    }

    fn reset(&mut self, terrain: &TerrainProfile, sample: &RandomizationSample) {
        self.mass = self.params.base_mass * sample.link_mass_scale + sample.payload_mass;
        self.inertia = self.params.base_inertia * self.mass / self.params.base_mass;
        self.com_offset = [sample.com_offset[0], sample.com_offset[2]];
        self.friction = sample.friction;
        self.restitution = sample.restitution;
        self.kp_scale = sample.kp_scale;
        self.kd_scale = sample.kd_scale;
        self.action_delay = sample.action_delay_s;

        self.q = self.q_nominal;
        self.qd = [0.0; 4];
        self.target = self.q_nominal;
        self.prev_target = self.q_nominal;
        self.torque = [0.0; 4];
        self.joint_accel = [0.0; 4];
        self.vel = [0.0; 3];
        self.pos = [0.0, 0.0, 0.0];
        // COM height so that the nominal pose stands at desired height over the feet
        let feet_ground: f64 = (0..2)
            .map(|leg| {
                let (p, _) = self.foot(leg);
                terrain.height_at(p[0])
            })
            .sum::<f64>()
            / 2.0;
        self.pos[1] = feet_ground + self.params.desired_height + self.com_offset[1];
        self.foot_forces = [[0.0; 2]; 2];
        self.n_collision = 0;
    }

    fn step(&mut self, action: &[f64], terrain: &TerrainProfile, dt: f64, _rng: &mut ChaCha8Rng) {
        self.prev_target = self.target;
        for j in 0..4 {
            let k = j % 2;
            self.target[j] = self.q_nominal[j] + self.params.action_scale[k] * action[j];
        }
        let qd_start = self.qd;
        let h = dt / SUBSTEPS as f64;
        for k in 0..SUBSTEPS {
            let target = if (k as f64) * h < self.action_delay - 1e-12 {
                self.prev_target
            } else {
                self.target
            };
            self.substep(&target, terrain, h);
        }
        for j in 0..4 {
            self.joint_accel[j] = (self.qd[j] - qd_start[j]) / dt;
        }
    }

    fn snapshot(&self, terrain: &TerrainProfile) -> Snapshot {
        let theta = self.pos[2];
        let base_height = self.pos[1] - self.mean_ground(terrain);
        let feet: Vec<FootState> = (0..2)
            .map(|leg| {
                let (p, v) = self.foot(leg);
                let f = self.foot_forces[leg];
                FootState {
                    position: [p[0], 0.0, p[1]],
                    height: p[1] - terrain.height_at(p[0]),
                    velocity: [v[0], 0.0, v[1]],
                    contact_force: [f[0], 0.0, f[1]],
                }
            })
            .collect();
        let n_joint_limit = (0..4)
            .filter(|&j| {
                let [lo, hi] = self.params.joint_limits(j);
                let margin = 0.02 * (hi - lo);
                self.q[j] - lo < margin || hi - self.q[j] < margin
            })
            .count();
        let fallen = base_height < FALL_HEIGHT_FRACTION * self.params.desired_height
            || theta.abs() > FALL_PITCH;
        Snapshot {
            base_position: [self.pos[0], 0.0, self.pos[1]],
            base_lin_velocity: [self.vel[0], 0.0, self.vel[1]],
            base_ang_velocity: [0.0, self.vel[2], 0.0],
            projected_gravity: [-theta.sin(), 0.0, -theta.cos()],
            base_height,
            joint_positions: (0..4).map(|j| self.q[j] - self.q_nominal[j]).collect(),
            joint_velocities: self.qd.to_vec(),
            joint_torques: self.torque.to_vec(),
            joint_accelerations: self.joint_accel.to_vec(),
            n_collision: self.n_collision,
            n_joint_limit,
            acceleration: Vec::new(),
            terrain_heights: terrain_sample_offsets()
                .iter()
                .map(|o| terrain.height_at(self.pos[0] + o) - self.pos[1])
                .collect(),
            contact_forces: self.foot_forces.iter().flat_map(|f| f.iter().copied()).collect(),
            hidden_context: vec![
                self.mass,
                self.com_offset[0],
                self.com_offset[1],
                self.friction,
                self.restitution,
                self.kp_scale,
                self.kd_scale,
                self.action_delay,
            ],
            feet,
            fallen,
        }
    }

    fn push(&mut self, delta: [f64; 2]) {
        self.vel[0] += delta[0];
    }

    fn clone_box(&self) -> Box<dyn Body> {
        Box::new(self.clone())
    }
}
