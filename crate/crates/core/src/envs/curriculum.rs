//! Terrain-level and command-range curricula.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub enabled: bool,
    /// mean episode lin-tracking reward above which an env is promoted
    pub promote_tracking: f64,
    /// demote when distance traveled along the command is below this fraction of the commanded distance
    pub demote_fraction: f64,
    /// initial |v_x|, |v_y| bound, m/s
    pub initial_lin: f64,
    /// initial |omega_z| bound, rad/s
    pub initial_yaw: f64,
    pub command_increment: f64,
    pub max_lin: f64,
    pub max_yaw: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            promote_tracking: 0.8,
            demote_fraction: 0.5,
            initial_lin: 1.0,
            initial_yaw: 1.0,
            command_increment: 0.25,
            max_lin: 2.0,
            max_yaw: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommandRange {
    pub lin: f64,
    pub yaw: f64,
}

impl CommandRange {
    pub fn initial(cfg: &CurriculumConfig) -> Self {
        Self { lin: cfg.initial_lin, yaw: cfg.initial_yaw }
    }

    pub fn expanded(self, cfg: &CurriculumConfig) -> Self {
        Self {
            lin: (self.lin + cfg.command_increment).min(cfg.max_lin.max(self.lin)),
            yaw: (self.yaw + cfg.command_increment).min(cfg.max_yaw.max(self.yaw)),
        }
    }

    /// Component-wise maximum.
    pub fn union(self, other: Self) -> Self {
        Self { lin: self.lin.max(other.lin), yaw: self.yaw.max(other.yaw) }
    }
}

/// Uniform command in the current range; inactive components are zero.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R, range: CommandRange, active: [bool; 3]) -> [f64; 3] {
    let bounds = [range.lin, range.lin, range.yaw];
    let mut cmd = [0.0; 3];
    for i in 0..3 {
        let v = if bounds[i] > 0.0 { rng.gen_range(-bounds[i]..=bounds[i]) } else { 0.0 };
        if active[i] {
            cmd[i] = v;
        }
    }
    cmd
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub mean_lin_tracking: f64,
    /// integral of |v_cmd_xy| dt
    pub commanded_distance: f64,
    /// integral of the velocity component along the command direction
    pub traveled_distance: f64,
    pub fell: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumOutcome {
    pub level: u32,
    pub command_range: CommandRange,
}

/// Promotes on good tracking, otherwise demotes on poor progress (floor 0).
/// Tracking at promotion grade on the hardest level widens the command range.
pub fn curriculum_update(
    summary: &EpisodeSummary,
    level: u32,
    max_level: u32,
    range: CommandRange,
    cfg: &CurriculumConfig,
) -> CurriculumOutcome {
    if !cfg.enabled {
        return CurriculumOutcome { level, command_range: range };
    }
    let promote = summary.mean_lin_tracking > cfg.promote_tracking;
    let mut new_range = range;
    let new_level = if promote {
        if level >= max_level {
            new_range = range.expanded(cfg);
        }
        (level + 1).min(max_level)
    } else if summary.traveled_distance < cfg.demote_fraction * summary.commanded_distance {
        level.saturating_sub(1)
    } else {
        level
    };
    CurriculumOutcome { level: new_level, command_range: new_range }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn summary(tracking: f64, traveled: f64) -> EpisodeSummary {
        EpisodeSummary {
            steps: 1000,
            mean_lin_tracking: tracking,
            commanded_distance: 10.0,
            traveled_distance: traveled,
            fell: false,
        }
    }

    #[test]
    fn promotion_and_demotion() {
        let cfg = CurriculumConfig::default();
        let r = CommandRange::initial(&cfg);
        assert_eq!(curriculum_update(&summary(0.9, 10.0), 3, 9, r, &cfg).level, 4);
        assert_eq!(curriculum_update(&summary(0.5, 3.0), 3, 9, r, &cfg).level, 2);
        assert_eq!(curriculum_update(&summary(0.1, 0.0), 0, 9, r, &cfg).level, 0);
        assert_eq!(curriculum_update(&summary(0.5, 8.0), 3, 9, r, &cfg).level, 3);
    }

    #[test]
    fn command_range_expands_at_hardest_level() {
        let cfg = CurriculumConfig::default();
        let r = CommandRange::initial(&cfg);
        let out = curriculum_update(&summary(0.9, 10.0), 9, 9, r, &cfg);
        assert_eq!(out.level, 9);
        assert!((out.command_range.lin - 1.25).abs() < 1e-15);
        let out = curriculum_update(&summary(0.9, 10.0), 8, 9, r, &cfg);
        assert_eq!(out.command_range, r);
    }

    #[test]
    fn commands_respect_range_and_seed() {
        let cfg = CurriculumConfig::default();
        let r = CommandRange::initial(&cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let c = sample_command(&mut rng, r, [true, true, true]);
            assert!(c.iter().all(|v| v.abs() <= 1.0));
        }
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            assert_eq!(sample_command(&mut a, r, [true, false, true]), sample_command(&mut b, r, [true, false, true]));
        }
        let c = sample_command(&mut a, r, [true, false, false]);
        assert_eq!((c[1], c[2]), (0.0, 0.0));
    }
}
