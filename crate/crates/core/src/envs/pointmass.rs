//! Planar point mass with hidden dynamics context.
//!
//! `v' = v + dt * (gain * force_scale * a - drag * v) / mass`. The deployed
//! observation carries the command, the previous action and a biased, noisy
//! acceleration signal; velocity and the context only reach the teacher.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::body::{Body, Snapshot};
use super::randomization::RandomizationSample;
use super::terrain::TerrainProfile;

#[derive(Clone, Debug)]
pub struct PointMassParams {
    pub nominal_mass: f64,
    /// N per unit action
    pub force_scale: f64,
    /// std of additive noise on the acceleration signal, m/s^2
    pub acceleration_noise: f64,
    pub desired_height: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            nominal_mass: 1.0,
            force_scale: 5.0,
            acceleration_noise: 0.05,
            desired_height: 0.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointMass {
    params: PointMassParams,
    position: [f64; 2],
    velocity: [f64; 2],
    acceleration_signal: [f64; 2],
    mass: f64,
    drag: f64,
    gain: f64,
    bias: [f64; 2],
}

impl PointMass {
    pub fn new(params: PointMassParams) -> Self {
        Self {
            params,
            position: [0.0; 2],
            velocity: [0.0; 2],
            acceleration_signal: [0.0; 2],
            mass: 1.0,
            drag: 2.0,
            gain: 1.0,
            bias: [0.0; 2],
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.velocity
    }
}

impl Body for PointMass {
    fn action_dim(&self) -> usize {
        2
    }

    fn n_feet(&self) -> usize {
        0
    }

    fn active_command(&self) -> [bool; 3] {
        [true, true, false]
    }

    fn hidden_context_dim(&self) -> usize {
        5
    }

    fn reset(&mut self, _terrain: &TerrainProfile, sample: &RandomizationSample) {
        self.position = [0.0; 2];
        self.velocity = [0.0; 2];
        self.mass = self.params.nominal_mass * sample.link_mass_scale;
        self.drag = sample.drag;
        self.gain = sample.motor_gain;
        self.bias = sample.sensor_bias;
        self.acceleration_signal = self.bias;
    }

    fn step(&mut self, action: &[f64], _terrain: &TerrainProfile, dt: f64, rng: &mut ChaCha8Rng) {
        let noise = Normal::new(0.0, self.params.acceleration_noise.max(0.0)).expect("valid std");
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            let force = self.gain * self.params.force_scale * a;
            let v_next = self.velocity[i] + dt * (force - self.drag * self.velocity[i]) / self.mass;
            let accel = (v_next - self.velocity[i]) / dt;
            self.velocity[i] = v_next;
            self.position[i] += dt * v_next;
            self.acceleration_signal[i] = accel + self.bias[i] + noise.sample(rng);
        }
    }

    fn snapshot(&self, _terrain: &TerrainProfile) -> Snapshot {
        Snapshot {
            base_position: [self.position[0], self.position[1], self.params.desired_height],
            base_lin_velocity: [self.velocity[0], self.velocity[1], 0.0],
            base_ang_velocity: [0.0; 3],
            projected_gravity: [0.0, 0.0, -1.0],
            base_height: self.params.desired_height,
            acceleration: self.acceleration_signal.to_vec(),
            hidden_context: vec![self.mass, self.drag, self.gain, self.bias[0], self.bias[1]],
            ..Default::default()
        }
    }

    fn push(&mut self, delta: [f64; 2]) {
        self.velocity[0] += delta[0];
        self.velocity[1] += delta[1];
    }

    fn clone_box(&self) -> Box<dyn Body> {
        Box::new(self.clone())
    }
}
