//! One-dimensional heightfields along the walking axis.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample spacing of every heightfield, m.
pub const RESOLUTION: f64 = 0.05;
/// Heightfields cover `[-HALF_LENGTH, HALF_LENGTH]`; lookups outside clamp to the ends.
pub const HALF_LENGTH: f64 = 20.0;
/// Horizontal run of one stair step, m. A whole number of samples.
pub const STAIR_RUN: f64 = 0.3;
/// Obstacles and stairs leave this region around the spawn point untouched.
const SPAWN_CLEARANCE: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Slope,
    RoughSlope,
    Stairs,
    DiscreteObstacles,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 5] = [
        TerrainKind::Flat,
        TerrainKind::Slope,
        TerrainKind::RoughSlope,
        TerrainKind::Stairs,
        TerrainKind::DiscreteObstacles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::Slope => "slope",
            TerrainKind::RoughSlope => "rough_slope",
            TerrainKind::Stairs => "stairs",
            TerrainKind::DiscreteObstacles => "discrete_obstacles",
        }
    }
}

impl FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TerrainKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown terrain kind '{s}'")))
    }
}

impl std::fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainProfile {
    pub kind: TerrainKind,
    pub difficulty_level: u32,
    /// x coordinate of the first sample
    pub origin: f64,
    pub resolution: f64,
    pub heightfield: Vec<f64>,
    pub friction: f64,
    pub restitution: f64,
}

/// Slope magnitude (rise over run) at a difficulty level.
pub fn slope_for(level: u32, max_level: u32) -> f64 {
    0.4 * difficulty_fraction(level, max_level)
}

/// Stair rise at a difficulty level, m.
pub fn stair_rise_for(level: u32, max_level: u32) -> f64 {
    0.02 + 0.11 * difficulty_fraction(level, max_level)
}

fn rough_amplitude_for(level: u32, max_level: u32) -> f64 {
    0.01 + 0.03 * difficulty_fraction(level, max_level)
}

fn obstacle_height_for(level: u32, max_level: u32) -> f64 {
    0.02 + 0.10 * difficulty_fraction(level, max_level)
}

fn difficulty_fraction(level: u32, max_level: u32) -> f64 {
    if max_level == 0 {
        0.0
    } else {
        level as f64 / max_level as f64
    }
}

/// Pure function of `(kind, difficulty_level, seed)` for a fixed `max_level`.
pub fn generate_terrain(kind: TerrainKind, difficulty_level: u32, max_level: u32, seed: u64) -> Result<TerrainProfile> {
    if difficulty_level > max_level {
        return Err(Error::Config(format!(
            "difficulty level {difficulty_level} exceeds maximum {max_level}"
        )));
    }
    let n = (2.0 * HALF_LENGTH / RESOLUTION).round() as usize + 1;
    let origin = -HALF_LENGTH;
    let xs = (0..n).map(|i| origin + i as f64 * RESOLUTION);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };

    let heightfield: Vec<f64> = match kind {
        TerrainKind::Flat => vec![0.0; n],
        TerrainKind::Slope => {
            let slope = sign * slope_for(difficulty_level, max_level);
            xs.map(|x| slope * x).collect()
        }
        TerrainKind::RoughSlope => {
            let slope = sign * slope_for(difficulty_level, max_level);
            let amp = rough_amplitude_for(difficulty_level, max_level);
            xs.map(|x| slope * x + amp * rng.gen_range(-1.0..=1.0)).collect()
        }
        TerrainKind::Stairs => {
            let rise = stair_rise_for(difficulty_level, max_level);
            let per_step = (STAIR_RUN / RESOLUTION).round() as i64;
            let spawn = (n as i64 - 1) / 2;
            let landing = (SPAWN_CLEARANCE / RESOLUTION).round() as i64;
            (0..n as i64)
                .map(|i| {
                    let rel = i - spawn;
                    // flat landing around the spawn point, then one step per run
                    let step = if rel.abs() < landing {
                        0
                    } else {
                        rel.signum() * ((rel.abs() - landing) / per_step + 1)
                    };
                    rise * step as f64
                })
                .collect()
        }
        TerrainKind::DiscreteObstacles => {
            let height = obstacle_height_for(difficulty_level, max_level);
            let mut field = vec![0.0; n];
            let mut x = origin + 0.5;
            while x < HALF_LENGTH {
                let width = rng.gen_range(0.2..0.6);
                let scale = rng.gen_range(0.5..=1.0);
                let up = rng.gen::<bool>();
                let gap = rng.gen_range(0.4..1.2);
                if x.abs() > SPAWN_CLEARANCE && (x + width).abs() > SPAWN_CLEARANCE && !(x < 0.0 && x + width > 0.0) {
                    let h = if up { height * scale } else { -height * scale };
                    let i0 = ((x - origin) / RESOLUTION).round() as usize;
                    let i1 = (((x + width) - origin) / RESOLUTION).round() as usize;
                    for v in field.iter_mut().take(i1.min(n)).skip(i0) {
                        *v = h;
                    }
                }
                x += width + gap;
            }
            field
        }
    };

    Ok(TerrainProfile {
        kind,
        difficulty_level,
        origin,
        resolution: RESOLUTION,
        heightfield,
        friction: 1.0,
        restitution: 0.5,
    })
}

impl TerrainProfile {
    fn locate(&self, x: f64) -> (usize, f64) {
        let last = self.heightfield.len() - 1;
        let s = ((x - self.origin) / self.resolution).clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last.saturating_sub(1));
        (i, s - i as f64)
    }

    /// Piecewise-linear height; clamps to the end samples outside the field.
    pub fn height_at(&self, x: f64) -> f64 {
        if self.heightfield.len() == 1 {
            return self.heightfield[0];
        }
        let (i, t) = self.locate(x);
        let (h0, h1) = (self.heightfield[i], self.heightfield[i + 1]);
        h0 + t * (h1 - h0)
    }

    /// dh/dx of the segment containing `x`.
    pub fn slope_at(&self, x: f64) -> f64 {
        if self.heightfield.len() == 1 {
            return 0.0;
        }
        let (i, _) = self.locate(x);
        (self.heightfield[i + 1] - self.heightfield[i]) / self.resolution
    }

    pub fn sample_x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.resolution
    }

    /// `x,height` rows with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "height"])?;
        for (i, h) in self.heightfield.iter().enumerate() {
            w.write_record([format!("{}", self.sample_x(i)), format!("{h}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_all_zero() {
        let t = generate_terrain(TerrainKind::Flat, 0, 9, 42).unwrap();
        assert!(t.heightfield.iter().all(|&h| h == 0.0));
        assert_eq!(t.height_at(123.0), 0.0);
    }

    #[test]
    fn slope_differences_are_linear() {
        let t = generate_terrain(TerrainKind::Slope, 6, 9, 7).unwrap();
        let slope = t.slope_at(0.0);
        assert!((slope.abs() - slope_for(6, 9)).abs() < 1e-12);
        for &(x, d) in &[(0.013, 0.37), (-3.21, 1.5), (5.0, 0.001)] {
            let diff = t.height_at(x + d) - t.height_at(x);
            assert!((diff - slope * d).abs() < 1e-12, "{diff} vs {}", slope * d);
        }
    }

    #[test]
    fn stairs_levels_are_evenly_spaced() {
        let t = generate_terrain(TerrainKind::Stairs, 4, 9, 3).unwrap();
        let rise = stair_rise_for(4, 9);
        let mut levels: Vec<i64> = t
            .heightfield
            .iter()
            .map(|h| {
                let k = h / rise;
                assert!((k - k.round()).abs() < 1e-9);
                k.round() as i64
            })
            .collect();
        levels.sort_unstable();
        levels.dedup();
        let length = 2.0 * HALF_LENGTH;
        assert!(levels.len() <= (length / STAIR_RUN).ceil() as usize);
        assert!(levels.windows(2).all(|w| w[1] - w[0] == 1));
    }

    #[test]
    fn generation_is_pure() {
        for kind in TerrainKind::ALL {
            let a = generate_terrain(kind, 5, 9, 99).unwrap();
            let b = generate_terrain(kind, 5, 9, 99).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn difficulty_is_monotone() {
        for kind in TerrainKind::ALL {
            let mut prev_slope = 0.0;
            let mut prev_step = 0.0;
            for level in 0..=9 {
                let t = generate_terrain(kind, level, 9, 5).unwrap();
                let max_slope = t
                    .heightfield
                    .windows(2)
                    .map(|w| ((w[1] - w[0]) / RESOLUTION).abs())
                    .fold(0.0, f64::max);
                let max_step = t
                    .heightfield
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs())
                    .fold(0.0, f64::max);
                assert!(max_slope + 1e-12 >= prev_slope, "{kind} level {level}");
                assert!(max_step + 1e-12 >= prev_step, "{kind} level {level}");
                prev_slope = max_slope;
                prev_step = max_step;
            }
        }
    }

    #[test]
    fn rejects_bad_level_and_kind() {
        assert!(generate_terrain(TerrainKind::Stairs, 10, 9, 0).is_err());
        assert!("lava".parse::<TerrainKind>().is_err());
        assert_eq!("rough_slope".parse::<TerrainKind>().unwrap(), TerrainKind::RoughSlope);
    }

    #[test]
    fn csv_export_has_one_row_per_sample() {
        let t = generate_terrain(TerrainKind::Slope, 2, 9, 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), t.heightfield.len() + 1);
        assert!(text.starts_with("x,height"));
    }
}
