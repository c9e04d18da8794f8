//! The training loop: collect, estimate advantages, update, log.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::agent::{group_for, AgentNets, GroupTag};
use crate::algo::{Learner, UpdateReport};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::envs::VecEnv;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::rollout::{collect_rollouts, policy_rngs, CollectOptions, RolloutBatch};

/// Running record of latent norms seen during collection.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatentAudit {
    pub count: usize,
    pub max_norm_error: f64,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub nets: AgentNets,
    pub learner: Learner,
    pub envs: VecEnv,
    rngs: Vec<ChaCha8Rng>,
    pub iteration: usize,
    pub latent_audit: LatentAudit,
    /// parameters from before the update that produced a non-finite value
    pub post_mortem: Option<AgentNets>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let settings = Arc::new(cfg.settings());
        let envs = VecEnv::new(settings, cfg.n_envs, cfg.seed)?;
        let dims = envs.dims();
        let nets = AgentNets::new(dims, cfg.latent_dim, &cfg.networks, cfg.algo.estimate_dim(dims.n_feet), cfg.seed)?;
        let learner = Learner::new(cfg.algo.clone(), &nets, cfg.seed)?;
        let rngs = policy_rngs(cfg.seed, cfg.n_envs);
        Ok(Self { cfg, nets, learner, envs, rngs, iteration: 0, latent_audit: LatentAudit::default(), post_mortem: None })
    }

    pub fn phase(&self) -> u8 {
        self.cfg.algo.phase(self.iteration, self.cfg.iterations)
    }

    pub fn groups(&self, phase: u8) -> Vec<GroupTag> {
        let n = self.cfg.n_envs;
        (0..n).map(|i| group_for(self.cfg.algo.mode, phase, i, n)).collect()
    }

    /// Collects one batch with the current networks and computes advantages.
    pub fn collect(&mut self, phase: u8) -> Result<RolloutBatch> {
        let groups = self.groups(phase);
        let opts = CollectOptions { steps: self.cfg.algo.steps_per_iter, gamma: self.cfg.algo.gamma, deterministic: false };
        let mut batch = collect_rollouts(&self.nets, &mut self.envs, &groups, &mut self.rngs, &opts)?;
        batch.compute_advantages(self.cfg.algo.gamma, self.cfg.algo.gae_lambda, self.cfg.algo.normalize_advantages);
        self.latent_audit.count += batch.len();
        self.latent_audit.max_norm_error = self.latent_audit.max_norm_error.max(batch.max_latent_norm_error());
        Ok(batch)
    }

    /// One full iteration of the training loop.
    pub fn step(&mut self) -> Result<(MetricsRow, UpdateReport)> {
        let phase = self.phase();
        let t0 = Instant::now();
        let batch = match self.collect(phase) {
            Ok(b) => b,
            Err(e) => {
                if matches!(e, Error::NonFinite { .. }) {
                    self.post_mortem = Some(self.nets.clone());
                }
                return Err(e);
            }
        };
        let collect_ms = t0.elapsed().as_secs_f64() * 1e3;
        let before = self.nets.clone();
        let t1 = Instant::now();
        let report = match self.learner.update(&mut self.nets, &batch, phase) {
            Ok(r) if r.is_finite() => r,
            Ok(_) => {
                self.post_mortem = Some(before);
                return Err(Error::NonFinite { network: "update report".into(), detail: format!("iteration {}", self.iteration) });
            }
            Err(e) => {
                self.post_mortem = Some(before);
                return Err(e);
            }
        };
        log::debug!("collect {collect_ms:.1} ms, update {:.1} ms", t1.elapsed().as_secs_f64() * 1e3);
        let row = self.metrics_row(&batch, &report, phase);
        self.iteration += 1;
        Ok((row, report))
    }

    fn metrics_row(&self, batch: &RolloutBatch, report: &UpdateReport, phase: u8) -> MetricsRow {
        let t = batch.group_means(GroupTag::Teacher);
        let s = batch.group_means(GroupTag::Student);
        let falls = batch.episodes.iter().filter(|(_, e)| e.fell).count();
        MetricsRow {
            iteration: self.iteration,
            phase,
            mean_reward_teacher: t.map(|v| v.0),
            mean_reward_student: s.map(|v| v.0),
            tracking_reward_teacher: t.map(|v| v.1),
            tracking_reward_student: s.map(|v| v.1),
            terrain_level: self.envs.mean_level(),
            ppo_loss_teacher: report.ppo_loss_teacher,
            ppo_loss_student: report.ppo_loss_student,
            value_loss: report.value_loss,
            rec_loss: report.rec_loss,
            estimator_loss: report.estimator_loss,
            imitation_loss: report.imitation_loss,
            kl: report.mean_kl,
            lr: report.current_lr,
            entropy: report.entropy,
            episodes: batch.episodes.len(),
            fall_rate: if batch.episodes.is_empty() { 0.0 } else { falls as f64 / batch.episodes.len() as f64 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub latent_audit: LatentAudit,
}

/// Runs `f` on a dedicated pool of `workers` threads (0: the global pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains for `cfg.iterations`, writing `metrics.csv`, `timing.csv`,
/// periodic checkpoints and `final.ckpt` into `out_dir`.
pub fn run_training(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    with_workers(cfg.workers, || run_training_inner(cfg, out_dir))?
}

fn run_training_inner(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut writer = MetricsWriter::create(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    checkpoint::save(&out_dir.join("initial.ckpt"), cfg, 0, &trainer.nets)?;
    let mut rows = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let (row, _) = match trainer.step() {
            Ok(v) => v,
            Err(e) => {
                if let Some(nets) = &trainer.post_mortem {
                    let path = out_dir.join(format!("postmortem_{it:06}.ckpt"));
                    checkpoint::save(&path, cfg, it as u64, nets)?;
                    log::error!("iteration {it} aborted: {e}; post-mortem checkpoint at {}", path.display());
                    return Err(Error::NonFinite {
                        network: "training".into(),
                        detail: format!("{e}; post-mortem checkpoint written to {}", path.display()),
                    });
                }
                return Err(e);
            }
        };
        writer.write(&row, start.elapsed().as_secs_f64() * 1e3)?;
        log::info!(
            "iter {:>5} phase {} track t/s {} / {} rec {:.4} lr {:.2e}",
            it,
            row.phase,
            row.tracking_reward_teacher.map_or("-".into(), |v| format!("{v:.3}")),
            row.tracking_reward_student.map_or("-".into(), |v| format!("{v:.3}")),
            row.rec_loss,
            row.lr
        );
        rows.push(row);
        if cfg.checkpoint_interval > 0 && (it + 1) % cfg.checkpoint_interval == 0 && it + 1 < cfg.iterations {
            checkpoint::save(&out_dir.join(format!("iter_{:06}.ckpt", it + 1)), cfg, (it + 1) as u64, &trainer.nets)?;
        }
    }
    let final_checkpoint = out_dir.join("final.ckpt");
    checkpoint::save(&final_checkpoint, cfg, cfg.iterations as u64, &trainer.nets)?;
    Ok(TrainOutcome { final_checkpoint, rows, latent_audit: trainer.latent_audit })
}
