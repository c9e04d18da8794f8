use rand::Rng;
use serde::{Deserialize, Serialize};

/// Per-episode dynamics randomization ranges. Walker ranges follow common
/// legged-robot practice; the `drag`, `motor_gain` and `sensor_bias` ranges
/// only apply to the point-mass profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainRandomization {
    pub enabled: bool,
    /// multiplier on nominal body mass
    pub link_mass_scale: [f64; 2],
    /// kg
    pub payload_mass: [f64; 2],
    /// m, per axis
    pub com_offset_x: [f64; 2],
    pub com_offset_y: [f64; 2],
    pub com_offset_z: [f64; 2],
    pub friction: [f64; 2],
    pub restitution: [f64; 2],
    pub kp_scale: [f64; 2],
    pub kd_scale: [f64; 2],
    /// ms
    pub action_delay_ms: [f64; 2],
    /// N·s/m (point mass)
    pub drag: [f64; 2],
    /// multiplier on actuator force (point mass)
    pub motor_gain: [f64; 2],
    /// m/s^2 bias on the acceleration signal (point mass)
    pub sensor_bias: [f64; 2],
}

impl Default for DomainRandomization {
    fn default() -> Self {
        Self {
            enabled: true,
            link_mass_scale: [0.8, 1.2],
            payload_mass: [-1.0, 3.0],
            com_offset_x: [-0.075, 0.075],
            com_offset_y: [-0.05, 0.05],
            com_offset_z: [-0.05, 0.05],
            friction: [0.2, 1.7],
            restitution: [0.25, 0.75],
            kp_scale: [0.8, 1.2],
            kd_scale: [0.8, 1.2],
            action_delay_ms: [0.0, 20.0],
            drag: [1.6, 2.4],
            motor_gain: [0.9, 1.1],
            sensor_bias: [-0.2, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomizationSample {
    pub link_mass_scale: f64,
    pub payload_mass: f64,
    pub com_offset: [f64; 3],
    pub friction: f64,
    pub restitution: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub action_delay_s: f64,
    pub drag: f64,
    pub motor_gain: f64,
    pub sensor_bias: [f64; 2],
}

impl RandomizationSample {
    pub fn nominal() -> Self {
        Self {
            link_mass_scale: 1.0,
            payload_mass: 0.0,
            com_offset: [0.0; 3],
            friction: 1.0,
            restitution: 0.5,
            kp_scale: 1.0,
            kd_scale: 1.0,
            action_delay_s: 0.0,
            drag: 2.0,
            motor_gain: 1.0,
            sensor_bias: [0.0; 2],
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

impl DomainRandomization {
    /// Draws one episode's parameters; returns the nominal sample when disabled.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RandomizationSample {
        if !self.enabled {
            return RandomizationSample::nominal();
        }
        RandomizationSample {
            link_mass_scale: uniform(rng, self.link_mass_scale),
            payload_mass: uniform(rng, self.payload_mass),
            com_offset: [
                uniform(rng, self.com_offset_x),
                uniform(rng, self.com_offset_y),
                uniform(rng, self.com_offset_z),
            ],
            friction: uniform(rng, self.friction),
            restitution: uniform(rng, self.restitution),
            kp_scale: uniform(rng, self.kp_scale),
            kd_scale: uniform(rng, self.kd_scale),
            action_delay_s: uniform(rng, self.action_delay_ms) * 1e-3,
            drag: uniform(rng, self.drag),
            motor_gain: uniform(rng, self.motor_gain),
            sensor_bias: [uniform(rng, self.sensor_bias), uniform(rng, self.sensor_bias)],
        }
    }

    pub fn contains(&self, s: &RandomizationSample) -> bool {
        let inside = |r: [f64; 2], v: f64| v >= r[0] && v <= r[1];
        inside(self.link_mass_scale, s.link_mass_scale)
            && inside(self.payload_mass, s.payload_mass)
            && inside(self.com_offset_x, s.com_offset[0])
            && inside(self.com_offset_y, s.com_offset[1])
            && inside(self.com_offset_z, s.com_offset[2])
            && inside(self.friction, s.friction)
            && inside(self.restitution, s.restitution)
            && inside(self.kp_scale, s.kp_scale)
            && inside(self.kd_scale, s.kd_scale)
            && s.action_delay_s * 1e3 >= self.action_delay_ms[0] - 1e-9
            && s.action_delay_s * 1e3 <= self.action_delay_ms[1] + 1e-9
            && inside(self.drag, s.drag)
            && inside(self.motor_gain, s.motor_gain)
            && s.sensor_bias.iter().all(|&b| inside(self.sensor_bias, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #[test]
        fn samples_stay_inside_ranges(seed in any::<u64>()) {
            let dr = DomainRandomization::default();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..8 {
                let s = dr.sample(&mut rng);
                prop_assert!(dr.contains(&s), "{:?}", s);
            }
        }
    }

    #[test]
    fn disabled_gives_nominal() {
        let dr = DomainRandomization { enabled: false, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dr.sample(&mut rng), RandomizationSample::nominal());
    }
}
