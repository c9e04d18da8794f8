//! Locomotion reward terms. Every term is evaluated unweighted; the total is
//! `dt * sum(weight * term)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RewardTerm {
    LinTracking,
    AngTracking,
    LinVelZ,
    AngVelXy,
    JointAccel,
    JointPower,
    JointTorque,
    BaseHeight,
    ActionRate,
    ActionSmoothness,
    Collision,
    JointLimit,
    FeetRegulation,
    OrientationXy,
    FeetDistance,
    FeetContactForce,
    FeetVelocity,
}

pub const NUM_TERMS: usize = 17;

impl RewardTerm {
    pub const ALL: [RewardTerm; NUM_TERMS] = [
        RewardTerm::LinTracking,
        RewardTerm::AngTracking,
        RewardTerm::LinVelZ,
        RewardTerm::AngVelXy,
        RewardTerm::JointAccel,
        RewardTerm::JointPower,
        RewardTerm::JointTorque,
        RewardTerm::BaseHeight,
        RewardTerm::ActionRate,
        RewardTerm::ActionSmoothness,
        RewardTerm::Collision,
        RewardTerm::JointLimit,
        RewardTerm::FeetRegulation,
        RewardTerm::OrientationXy,
        RewardTerm::FeetDistance,
        RewardTerm::FeetContactForce,
        RewardTerm::FeetVelocity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardTerm::LinTracking => "lin_tracking",
            RewardTerm::AngTracking => "ang_tracking",
            RewardTerm::LinVelZ => "lin_vel_z",
            RewardTerm::AngVelXy => "ang_vel_xy",
            RewardTerm::JointAccel => "joint_accel",
            RewardTerm::JointPower => "joint_power",
            RewardTerm::JointTorque => "joint_torque",
            RewardTerm::BaseHeight => "base_height",
            RewardTerm::ActionRate => "action_rate",
            RewardTerm::ActionSmoothness => "action_smoothness",
            RewardTerm::Collision => "collision",
            RewardTerm::JointLimit => "joint_limit",
            RewardTerm::FeetRegulation => "feet_regulation",
            RewardTerm::OrientationXy => "orientation_xy",
            RewardTerm::FeetDistance => "feet_distance",
            RewardTerm::FeetContactForce => "feet_contact_force",
            RewardTerm::FeetVelocity => "feet_velocity",
        }
    }
}

/// Sign used for the `a_{t-2}` coefficient in the action-smoothness term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessForm {
    /// `||a_t - 2 a_{t-1} - a_{t-2}||^2`
    Printed,
    /// `||a_t - 2 a_{t-1} + a_{t-2}||^2`
    SecondDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotProfile {
    Quadruped,
    Biped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lin_tracking: f64,
    pub ang_tracking: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub joint_accel: f64,
    pub joint_power: f64,
    pub joint_torque: f64,
    pub base_height: f64,
    pub action_rate: f64,
    pub action_smoothness: f64,
    pub collision: f64,
    pub joint_limit: f64,
    pub feet_regulation: f64,
    pub orientation_xy: f64,
    pub feet_distance: f64,
    pub feet_contact_force: f64,
    pub feet_velocity: f64,
    /// h^des, m
    pub desired_height: f64,
    /// s
    pub gait_period: f64,
    pub stance_fraction: f64,
    pub smoothness_form: SmoothnessForm,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::quadruped()
    }
}

impl RewardConfig {
    pub fn quadruped() -> Self {
        Self {
            lin_tracking: 1.0,
            ang_tracking: 0.5,
            lin_vel_z: -2.0,
            ang_vel_xy: -0.05,
            joint_accel: -2.5e-7,
            joint_power: -2e-5,
            joint_torque: -1e-4,
            base_height: -1.0,
            action_rate: -0.01,
            action_smoothness: -0.01,
            collision: -1.0,
            joint_limit: -2.0,
            feet_regulation: -0.05,
            orientation_xy: 0.0,
            feet_distance: 0.0,
            feet_contact_force: 0.0,
            feet_velocity: 0.0,
            desired_height: 0.4,
            gait_period: 0.6,
            stance_fraction: 0.5,
            smoothness_form: SmoothnessForm::Printed,
        }
    }

    pub fn biped() -> Self {
        Self {
            lin_vel_z: -0.5,
            orientation_xy: -5.0,
            feet_distance: -100.0,
            feet_contact_force: -2.0,
            feet_velocity: -2.0,
            ..Self::quadruped()
        }
    }

    pub fn for_robot(robot: RobotProfile) -> Self {
        match robot {
            RobotProfile::Quadruped => Self::quadruped(),
            RobotProfile::Biped => Self::biped(),
        }
    }

    pub fn weight(&self, term: RewardTerm) -> f64 {
        match term {
            RewardTerm::LinTracking => self.lin_tracking,
            RewardTerm::AngTracking => self.ang_tracking,
            RewardTerm::LinVelZ => self.lin_vel_z,
            RewardTerm::AngVelXy => self.ang_vel_xy,
            RewardTerm::JointAccel => self.joint_accel,
            RewardTerm::JointPower => self.joint_power,
            RewardTerm::JointTorque => self.joint_torque,
            RewardTerm::BaseHeight => self.base_height,
            RewardTerm::ActionRate => self.action_rate,
            RewardTerm::ActionSmoothness => self.action_smoothness,
            RewardTerm::Collision => self.collision,
            RewardTerm::JointLimit => self.joint_limit,
            RewardTerm::FeetRegulation => self.feet_regulation,
            RewardTerm::OrientationXy => self.orientation_xy,
            RewardTerm::FeetDistance => self.feet_distance,
            RewardTerm::FeetContactForce => self.feet_contact_force,
            RewardTerm::FeetVelocity => self.feet_velocity,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FootState {
    /// world position, m
    pub position: [f64; 3],
    /// clearance above the terrain directly below, m
    pub height: f64,
    pub velocity: [f64; 3],
    pub contact_force: [f64; 3],
}

/// Everything the reward terms read from two consecutive steps.
#[derive(Clone, Debug)]
pub struct RewardInputs<'a> {
    pub command: [f64; 3],
    pub base_lin_velocity: [f64; 3],
    pub base_ang_velocity: [f64; 3],
    pub projected_gravity: [f64; 3],
    pub base_height: f64,
    pub joint_velocities: &'a [f64],
    pub joint_accelerations: &'a [f64],
    pub joint_torques: &'a [f64],
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    pub prev_prev_action: &'a [f64],
    pub n_collision: usize,
    pub n_joint_limit: usize,
    pub feet: &'a [FootState],
    /// gait phase per foot in [0, 1)
    pub feet_phase: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub terms: [f64; NUM_TERMS],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn term(&self, term: RewardTerm) -> f64 {
        self.terms[term as usize]
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, f64> {
        RewardTerm::ALL.iter().map(|&t| (t.name(), self.term(t))).collect()
    }
}

/// Desired contact state: 1 during stance (`phase < stance_fraction`), 0 during swing.
pub fn desired_contact(phase: f64, stance_fraction: f64) -> f64 {
    if phase < stance_fraction {
        1.0
    } else {
        0.0
    }
}

/// Gait phase of each foot at time `t`. Two feet alternate with a half-period
/// offset; four feet (FL, FR, RL, RR) trot in diagonal pairs.
pub fn foot_phases(t: f64, period: f64, n_feet: usize) -> Vec<f64> {
    let base = (t / period).rem_euclid(1.0);
    (0..n_feet)
        .map(|i| {
            let offset = if n_feet == 4 {
                [0.0, 0.5, 0.5, 0.0][i]
            } else {
                0.5 * (i % 2) as f64
            };
            (base + offset).rem_euclid(1.0)
        })
        .collect()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn hypot2(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

pub fn compute_reward(inp: &RewardInputs<'_>, cfg: &RewardConfig, dt: f64) -> RewardBreakdown {
    let mut terms = [0.0; NUM_TERMS];
    let set = |terms: &mut [f64; NUM_TERMS], t: RewardTerm, v: f64| terms[t as usize] = v;

    let dvx = inp.command[0] - inp.base_lin_velocity[0];
    let dvy = inp.command[1] - inp.base_lin_velocity[1];
    set(&mut terms, RewardTerm::LinTracking, (-4.0 * (dvx * dvx + dvy * dvy)).exp());
    let dw = inp.command[2] - inp.base_ang_velocity[2];
    set(&mut terms, RewardTerm::AngTracking, (-4.0 * dw * dw).exp());
    set(&mut terms, RewardTerm::LinVelZ, inp.base_lin_velocity[2].powi(2));
    set(
        &mut terms,
        RewardTerm::AngVelXy,
        inp.base_ang_velocity[0].powi(2) + inp.base_ang_velocity[1].powi(2),
    );
    set(&mut terms, RewardTerm::JointAccel, sq_norm(inp.joint_accelerations));
    set(
        &mut terms,
        RewardTerm::JointPower,
        inp.joint_torques
            .iter()
            .zip(inp.joint_velocities)
            .map(|(t, v)| t.abs() * v.abs())
            .sum(),
    );
    set(&mut terms, RewardTerm::JointTorque, sq_norm(inp.joint_torques));
    set(&mut terms, RewardTerm::BaseHeight, (cfg.desired_height - inp.base_height).powi(2));
    set(
        &mut terms,
        RewardTerm::ActionRate,
        inp.action.iter().zip(inp.prev_action).map(|(a, b)| (a - b).powi(2)).sum(),
    );
    let older_sign = match cfg.smoothness_form {
        SmoothnessForm::Printed => -1.0,
        SmoothnessForm::SecondDifference => 1.0,
    };
    set(
        &mut terms,
        RewardTerm::ActionSmoothness,
        inp.action
            .iter()
            .zip(inp.prev_action)
            .zip(inp.prev_prev_action)
            .map(|((a, b), c)| (a - 2.0 * b + older_sign * c).powi(2))
            .sum(),
    );
    set(&mut terms, RewardTerm::Collision, inp.n_collision as f64);
    set(&mut terms, RewardTerm::JointLimit, inp.n_joint_limit as f64);

    let regulation_scale = 0.025 * cfg.desired_height;
    set(
        &mut terms,
        RewardTerm::FeetRegulation,
        inp.feet
            .iter()
            .map(|f| {
                let v2 = f.velocity[0].powi(2) + f.velocity[1].powi(2);
                // penetration of the soft contact counts as zero clearance
                v2 * (-f.height.max(0.0) / regulation_scale).exp()
            })
            .sum(),
    );
    set(
        &mut terms,
        RewardTerm::OrientationXy,
        hypot2(inp.projected_gravity[0], inp.projected_gravity[1]),
    );
    if inp.feet.len() == 2 {
        let (l, r) = (&inp.feet[0], &inp.feet[1]);
        let d = hypot2(l.position[0] - r.position[0], l.position[1] - r.position[1]);
        set(&mut terms, RewardTerm::FeetDistance, (0.1 - d).max(0.0));
    }
    let mut contact_force = 0.0;
    let mut foot_velocity = 0.0;
    for (foot, &phase) in inp.feet.iter().zip(inp.feet_phase) {
        let c_des = desired_contact(phase, cfg.stance_fraction);
        let f = sq_norm(&foot.contact_force).sqrt();
        contact_force += (1.0 - c_des) * (1.0 - (-0.04 * f).exp());
        let v = hypot2(foot.velocity[0], foot.velocity[1]);
        foot_velocity += c_des * (1.0 - (-4.0 * v).exp());
    }
    set(&mut terms, RewardTerm::FeetContactForce, contact_force);
    set(&mut terms, RewardTerm::FeetVelocity, foot_velocity);

    let total = dt
        * RewardTerm::ALL
            .iter()
            .map(|&t| cfg.weight(t) * terms[t as usize])
            .sum::<f64>();
    RewardBreakdown { terms, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standing<'a>(feet: &'a [FootState], phases: &'a [f64], zeros: &'a [f64]) -> RewardInputs<'a> {
        RewardInputs {
            command: [0.0; 3],
            base_lin_velocity: [0.0; 3],
            base_ang_velocity: [0.0; 3],
            projected_gravity: [0.0, 0.0, -1.0],
            base_height: 0.4,
            joint_velocities: zeros,
            joint_accelerations: zeros,
            joint_torques: zeros,
            action: zeros,
            prev_action: zeros,
            prev_prev_action: zeros,
            n_collision: 0,
            n_joint_limit: 0,
            feet,
            feet_phase: phases,
        }
    }

    #[test]
    fn tracking_terms_at_ideal_point() {
        let zeros = [0.0; 4];
        let mut inp = standing(&[], &[], &zeros);
        inp.command = [0.5, -0.2, 0.3];
        inp.base_lin_velocity = [0.5, -0.2, 0.0];
        inp.base_ang_velocity = [0.0, 0.0, 0.3];
        let r = compute_reward(&inp, &RewardConfig::quadruped(), 0.02);
        assert_eq!(r.term(RewardTerm::LinTracking), 1.0);
        assert_eq!(r.term(RewardTerm::AngTracking), 1.0);
        assert_eq!(r.term(RewardTerm::LinVelZ), 0.0);
    }

    #[test]
    fn lin_tracking_half_metre_error() {
        let zeros = [0.0; 4];
        let mut inp = standing(&[], &[], &zeros);
        inp.command = [1.0, 0.0, 0.0];
        inp.base_lin_velocity = [0.7, 0.4, 0.0];
        let r = compute_reward(&inp, &RewardConfig::quadruped(), 0.02);
        assert!((r.term(RewardTerm::LinTracking) - 0.36787944117144233).abs() < 1e-12);
    }

    #[test]
    fn feet_distance_penalty_for_close_feet() {
        let zeros = [0.0; 4];
        let feet = [
            FootState { position: [0.10, 0.0, 0.0], ..Default::default() },
            FootState { position: [0.05, 0.0, 0.0], ..Default::default() },
        ];
        let inp = standing(&feet, &[0.0, 0.5], &zeros);
        let cfg = RewardConfig::biped();
        let r = compute_reward(&inp, &cfg, 1.0);
        assert!((r.term(RewardTerm::FeetDistance) - 0.05).abs() < 1e-15);
        assert!((cfg.feet_distance * r.term(RewardTerm::FeetDistance) + 5.0).abs() < 1e-12);
    }

    #[test]
    fn feet_regulation_on_the_ground() {
        let zeros = [0.0; 4];
        let feet = [FootState { velocity: [0.6, 0.8, 0.0], ..Default::default() }];
        let inp = standing(&feet, &[0.0], &zeros);
        let r = compute_reward(&inp, &RewardConfig::quadruped(), 1.0);
        assert!((r.term(RewardTerm::FeetRegulation) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn desired_contact_schedule() {
        assert_eq!(desired_contact(0.0, 0.5), 1.0);
        assert_eq!(desired_contact(0.5, 0.5), 0.0);
        let phases = foot_phases(0.15, 0.6, 2);
        assert!((phases[0] - 0.25).abs() < 1e-12 && (phases[1] - 0.75).abs() < 1e-12);
        let c: Vec<f64> = phases.iter().map(|&p| desired_contact(p, 0.5)).collect();
        assert_eq!(c, vec![1.0, 0.0]);
    }

    #[test]
    fn biped_only_weights_vanish_for_quadruped() {
        let q = RewardConfig::quadruped();
        for t in [
            RewardTerm::OrientationXy,
            RewardTerm::FeetDistance,
            RewardTerm::FeetContactForce,
            RewardTerm::FeetVelocity,
        ] {
            assert_eq!(q.weight(t), 0.0);
        }
        assert_eq!(RewardConfig::biped().lin_vel_z, -0.5);
    }
}
