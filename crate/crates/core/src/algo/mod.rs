//! Concurrent teacher-student PPO update and its ablation modes.

mod losses;

pub use losses::{
    adaptive_lr, clipped_surrogate, clipped_surrogate_grad, mean_row_squared_error, ppo_ratio, reconstruction_error,
    value_loss,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentNets, GroupTag, Mode};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, DiagGaussian, Mlp};
use crate::rollout::RolloutBatch;

/// Rows handled per parallel work item. Fixed so reductions do not depend on
/// the number of worker threads.
const CHUNK_ROWS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub mode: Mode,
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub desired_kl: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    /// initial PPO learning rate
    pub learning_rate: f64,
    pub adaptive_lr: bool,
    pub min_lr: f64,
    pub max_lr: f64,
    pub rec_learning_rate: f64,
    pub rec_epochs: usize,
    pub steps_per_iter: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// route value-loss gradients into the privileged encoder
    pub critic_through_encoder: bool,
    /// recompute student latents in every PPO epoch instead of using the collected ones
    pub recompute_student_latent: bool,
    /// velocity estimator head outside the estimator_net mode
    pub estimator_head: bool,
    pub estimator_learning_rate: f64,
    /// fraction of iterations spent in phase 1 of the two-stage mode
    pub two_stage_fraction: f64,
    pub imitation_weight: f64,
    pub rec_weight: f64,
    /// record ratio and clipped-gradient deviations on the first minibatch of each update
    pub verify_on_policy: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Concurrent,
            clip_range: 0.2,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            desired_kl: 0.01,
            ppo_epochs: 5,
            minibatches: 4,
            learning_rate: 1e-3,
            adaptive_lr: true,
            min_lr: 1e-5,
            max_lr: 1e-2,
            rec_learning_rate: 1e-3,
            rec_epochs: 5,
            steps_per_iter: 24,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            critic_through_encoder: false,
            recompute_student_latent: false,
            estimator_head: false,
            estimator_learning_rate: 1e-3,
            two_stage_fraction: 0.6,
            imitation_weight: 1.0,
            rec_weight: 1.0,
            verify_on_policy: false,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("algo.{field}: {why}")));
        if !(self.clip_range > 0.0) {
            return bad("clip_range", "must be > 0");
        }
        if self.minibatches == 0 {
            return bad("minibatches", "must be >= 1");
        }
        if self.steps_per_iter == 0 {
            return bad("steps_per_iter", "must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.rec_learning_rate > 0.0) || !(self.estimator_learning_rate > 0.0) {
            return bad("learning_rate", "learning rates must be > 0");
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr) {
            return bad("min_lr", "need 0 < min_lr <= max_lr");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma", "gamma and gae_lambda must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.two_stage_fraction) {
            return bad("two_stage_fraction", "must lie in [0, 1]");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm", "must be > 0");
        }
        Ok(())
    }

    /// Width of the estimator output for an environment with `n_feet` feet.
    pub fn estimate_dim(&self, n_feet: usize) -> usize {
        match self.mode {
            Mode::EstimatorNet => 3 + n_feet,
            _ if self.estimator_head => 3,
            _ => 0,
        }
    }

    /// Last iteration (exclusive) of two-stage phase 1.
    pub fn phase_boundary(&self, iterations: usize) -> usize {
        (self.two_stage_fraction * iterations as f64).round() as usize
    }

    pub fn phase(&self, iteration: usize, iterations: usize) -> u8 {
        if self.mode == Mode::TwoStage && iteration >= self.phase_boundary(iterations) {
            2
        } else {
            1
        }
    }
}

/// Telemetry of one update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateReport {
    pub phase: u8,
    /// negated clipped objective (incl. entropy bonus); `None` if the group had no rows
    pub ppo_loss_teacher: Option<f64>,
    pub ppo_loss_student: Option<f64>,
    pub value_loss: f64,
    pub rec_loss: f64,
    pub estimator_loss: f64,
    pub imitation_loss: f64,
    pub mean_kl: f64,
    pub entropy: f64,
    pub current_lr: f64,
    /// mean pre-clip gradient norm per network
    pub grad_norms: BTreeMap<&'static str, f64>,
    /// max |r - 1| on the first minibatch
    pub first_ratio_deviation: f64,
    /// max |g_clipped - g_unclipped| on the first minibatch (when verifying)
    pub first_clip_grad_deviation: f64,
}

impl UpdateReport {
    pub fn is_finite(&self) -> bool {
        [self.value_loss, self.rec_loss, self.estimator_loss, self.imitation_loss, self.mean_kl, self.entropy, self.current_lr]
            .iter()
            .chain(self.ppo_loss_teacher.iter())
            .chain(self.ppo_loss_student.iter())
            .chain(self.grad_norms.values())
            .all(|v| v.is_finite())
    }
}

/// Which parameter blocks an update may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub policy: bool,
    pub teacher_encoder: bool,
    /// student encoder through the policy gradient (end-to-end)
    pub student_encoder_rl: bool,
    pub critic: bool,
    /// student encoder through reconstruction
    pub student_encoder_rec: bool,
    pub imitation: bool,
}

impl Trainable {
    pub fn for_mode(mode: Mode, phase: u8) -> Self {
        match (mode, phase) {
            (Mode::Concurrent, _) => Self {
                policy: true,
                teacher_encoder: true,
                student_encoder_rl: false,
                critic: true,
                student_encoder_rec: true,
                imitation: false,
            },
            (Mode::Oracle, _) | (Mode::TwoStage, 1) => Self {
                policy: true,
                teacher_encoder: true,
                student_encoder_rl: false,
                critic: true,
                student_encoder_rec: false,
                imitation: false,
            },
            (Mode::TwoStage, _) => Self {
                policy: false,
                teacher_encoder: false,
                student_encoder_rl: false,
                critic: false,
                student_encoder_rec: true,
                imitation: true,
            },
            (Mode::Baseline, _) | (Mode::EstimatorNet, _) => Self {
                policy: true,
                teacher_encoder: false,
                student_encoder_rl: true,
                critic: true,
                student_encoder_rec: false,
                imitation: false,
            },
        }
    }
}

/// Gradients of the PPO + value objective on one minibatch.
#[derive(Clone, Debug)]
pub struct PpoGradients {
    pub policy: Vec<f64>,
    pub teacher_encoder: Vec<f64>,
    pub student_encoder: Vec<f64>,
    pub critic: Vec<f64>,
    pub surrogate_teacher: f64,
    pub surrogate_student: f64,
    pub n_teacher: usize,
    pub n_student: usize,
    pub value_loss: f64,
    pub kl: f64,
    pub max_ratio_deviation: f64,
}

impl PpoGradients {
    fn zeros(nets: &AgentNets) -> Self {
        Self {
            policy: nets.policy.zero_grads(),
            teacher_encoder: nets.teacher_encoder.zero_grads(),
            student_encoder: nets.student_encoder.zero_grads(),
            critic: nets.critic.zero_grads(),
            surrogate_teacher: 0.0,
            surrogate_student: 0.0,
            n_teacher: 0,
            n_student: 0,
            value_loss: 0.0,
            kl: 0.0,
            max_ratio_deviation: 0.0,
        }
    }

    fn merge(&mut self, o: Self) {
        add_into(&mut self.policy, &o.policy);
        add_into(&mut self.teacher_encoder, &o.teacher_encoder);
        add_into(&mut self.student_encoder, &o.student_encoder);
        add_into(&mut self.critic, &o.critic);
        self.surrogate_teacher += o.surrogate_teacher;
        self.surrogate_student += o.surrogate_student;
        self.n_teacher += o.n_teacher;
        self.n_student += o.n_student;
        self.value_loss += o.value_loss;
        self.kl += o.kl;
        self.max_ratio_deviation = self.max_ratio_deviation.max(o.max_ratio_deviation);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `f` over `rows` in fixed-size chunks in parallel and merges the
/// per-chunk accumulators in chunk order.
fn chunked<T, I, F, M>(rows: &[usize], init: I, f: F, merge: M) -> Result<T>
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, usize) -> Result<()> + Sync,
    M: Fn(&mut T, T),
{
    let parts: Vec<T> = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| {
            let mut acc = init();
            for &r in chunk {
                f(&mut acc, r)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let mut total = iter.next().unwrap_or_else(&init);
    for p in iter {
        merge(&mut total, p);
    }
    Ok(total)
}

/// Gradient of the loss `-(L_t + L_s) + L_value` on `rows`, where each
/// group's clipped objective is a mean over that group's rows. The entropy
/// bonus is added once per group present. `clip_range = inf` gives the
/// unclipped policy gradient.
pub fn ppo_gradients(
    nets: &AgentNets,
    batch: &RolloutBatch,
    rows: &[usize],
    cfg: &AlgoConfig,
    trainable: Trainable,
    clip_range: f64,
) -> Result<PpoGradients> {
    let n_teacher = rows.iter().filter(|&&r| batch.groups[r] == GroupTag::Teacher).count();
    let n_student = rows.len() - n_teacher;
    let n_rows = rows.len().max(1) as f64;
    let obs_dim = batch.obs_dim;
    let latent_dim = batch.latent_dim;
    let log_std = nets.policy.log_std();
    let ls_off = nets.policy.log_std_offset();

    let mut g = chunked(
        rows,
        || PpoGradients::zeros(nets),
        |acc, r| {
            let group = batch.groups[r];
            let (w, n_g) = match group {
                GroupTag::Teacher => (1.0 / n_teacher as f64, &mut acc.n_teacher),
                GroupTag::Student => (1.0 / n_student as f64, &mut acc.n_student),
            };
            *n_g += 1;

            // latent for this row
            let mut teacher_cache = None;
            let mut student_cache = None;
            let latent: Vec<f64> = match group {
                GroupTag::Teacher if trainable.teacher_encoder => {
                    let c = nets.teacher_encoder.forward_cached(batch.privileged_row(r))?;
                    let z = c.output().to_vec();
                    teacher_cache = Some(c);
                    z
                }
                GroupTag::Student if trainable.student_encoder_rl => {
                    let c = nets.student_encoder.forward_cached(batch.history_row(r))?;
                    let z = c.output().to_vec();
                    student_cache = Some(c);
                    z
                }
                GroupTag::Student if cfg.recompute_student_latent => nets.student_encoder.forward(batch.history_row(r))?,
                _ => batch.latent_row(r).to_vec(),
            };

            let input = AgentNets::policy_input(batch.obs_row(r), &latent, batch.estimate_row(r));
            let pc = nets.policy.forward_cached(&input)?;
            let dist = DiagGaussian::new(pc.output(), log_std);
            let action = batch.action_row(r);
            let log_prob = dist.log_prob(action);
            let ratio = ppo_ratio(log_prob, batch.log_probs[r]);
            let adv = batch.advantages[r];
            let surrogate = clipped_surrogate(ratio, adv, clip_range);
            let d_obj_d_logp = clipped_surrogate_grad(ratio, adv, clip_range);
            acc.max_ratio_deviation = acc.max_ratio_deviation.max((ratio - 1.0).abs());
            match group {
                GroupTag::Teacher => acc.surrogate_teacher += w * surrogate,
                GroupTag::Student => acc.surrogate_student += w * surrogate,
            }
            let old = DiagGaussian::new(batch.mean_row(r), &batch.behavior_log_std);
            acc.kl += old.kl_to(&dist) / n_rows;

            if trainable.policy {
                let coef = -w * d_obj_d_logp;
                let (d_mean, d_log_std) = dist.log_prob_grads(action);
                let d_mean: Vec<f64> = d_mean.iter().map(|v| coef * v).collect();
                let input_grad = nets.policy.backward_into(&pc, &d_mean, &mut acc.policy)?;
                for (gls, d) in acc.policy[ls_off..].iter_mut().zip(&d_log_std) {
                    *gls += coef * d;
                }
                let z_grad = &input_grad[obs_dim..obs_dim + latent_dim];
                if let Some(c) = &teacher_cache {
                    nets.teacher_encoder.backward_into(c, z_grad, &mut acc.teacher_encoder)?;
                }
                if let Some(c) = &student_cache {
                    nets.student_encoder.backward_into(c, z_grad, &mut acc.student_encoder)?;
                }
            }

            if trainable.critic {
                let cc = nets.critic.forward_cached(&AgentNets::critic_input(batch.privileged_row(r), &latent))?;
                let err = cc.output()[0] - batch.returns[r];
                acc.value_loss += err * err / n_rows;
                let in_grad = nets.critic.backward_into(&cc, &[2.0 * err / n_rows], &mut acc.critic)?;
                if cfg.critic_through_encoder {
                    if let Some(c) = &teacher_cache {
                        let z_grad = &in_grad[batch.privileged_dim..];
                        nets.teacher_encoder.backward_into(c, z_grad, &mut acc.teacher_encoder)?;
                    }
                }
            }
            Ok(())
        },
        PpoGradients::merge,
    )?;

    if trainable.policy {
        let groups_present = (n_teacher > 0) as usize + (n_student > 0) as usize;
        for gls in &mut g.policy[ls_off..] {
            *gls -= cfg.entropy_coef * groups_present as f64;
        }
    }
    Ok(g)
}

/// Reconstruction (and, in two-stage phase 2, action imitation) gradients
/// for the proprioceptive encoder on `rows`.
pub struct RecGradients {
    pub student_encoder: Vec<f64>,
    pub rec_loss: f64,
    pub imitation_loss: f64,
}

pub fn rec_gradients(nets: &AgentNets, batch: &RolloutBatch, rows: &[usize], cfg: &AlgoConfig, imitation: bool) -> Result<RecGradients> {
    let n = rows.len().max(1) as f64;
    let obs_dim = batch.obs_dim;
    let latent_dim = batch.latent_dim;
    chunked(
        rows,
        || RecGradients { student_encoder: nets.student_encoder.zero_grads(), rec_loss: 0.0, imitation_loss: 0.0 },
        |acc, r| {
            let target = nets.teacher_encoder.forward(batch.privileged_row(r))?;
            let sc = nets.student_encoder.forward_cached(batch.history_row(r))?;
            let zs = sc.output();
            let mut z_grad: Vec<f64> = zs.iter().zip(&target).map(|(a, b)| cfg.rec_weight * 2.0 * (a - b) / n).collect();
            acc.rec_loss += reconstruction_error(zs, &target) / n;
            if imitation {
                let est = batch.estimate_row(r);
                let obs = batch.obs_row(r);
                let teacher_mean = nets.policy.forward(&AgentNets::policy_input(obs, &target, est))?;
                let pc = nets.policy.forward_cached(&AgentNets::policy_input(obs, zs, est))?;
                let diff: Vec<f64> = pc.output().iter().zip(&teacher_mean).map(|(a, b)| a - b).collect();
                acc.imitation_loss += diff.iter().map(|d| d * d).sum::<f64>() / n;
                let d_mean: Vec<f64> = diff.iter().map(|d| cfg.imitation_weight * 2.0 * d / n).collect();
                let mut scratch = nets.policy.zero_grads();
                let in_grad = nets.policy.backward_into(&pc, &d_mean, &mut scratch)?;
                for (g, d) in z_grad.iter_mut().zip(&in_grad[obs_dim..obs_dim + latent_dim]) {
                    *g += d;
                }
            }
            nets.student_encoder.backward_into(&sc, &z_grad, &mut acc.student_encoder)?;
            Ok(())
        },
        |a, b| {
            add_into(&mut a.student_encoder, &b.student_encoder);
            a.rec_loss += b.rec_loss;
            a.imitation_loss += b.imitation_loss;
        },
    )
}

/// Mean-squared-error gradient of the estimator head on `rows`.
pub fn estimator_gradients(nets: &AgentNets, batch: &RolloutBatch, rows: &[usize]) -> Result<(Vec<f64>, f64)> {
    let est = nets
        .estimator
        .as_ref()
        .ok_or_else(|| Error::Config("estimator loss requested but the estimator head is disabled".into()))?;
    let dim = est.spec().output_dim;
    let n = rows.len().max(1) as f64;
    chunked(
        rows,
        || (est.zero_grads(), 0.0),
        |acc, r| {
            let c = est.forward_cached(batch.history_row(r))?;
            let target = &batch.target_row(r)[..dim];
            let diff: Vec<f64> = c.output().iter().zip(target).map(|(a, b)| a - b).collect();
            acc.1 += diff.iter().map(|d| d * d).sum::<f64>() / n;
            let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
            est.backward_into(&c, &g, &mut acc.0)?;
            Ok(())
        },
        |a, b| {
            add_into(&mut a.0, &b.0);
            a.1 += b.1;
        },
    )
}

/// Adam state for every network.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub teacher_encoder: Adam,
    pub student_encoder: Adam,
    pub policy: Adam,
    pub critic: Adam,
    pub estimator: Option<Adam>,
}

impl Optimizers {
    pub fn new(nets: &AgentNets) -> Self {
        Self {
            teacher_encoder: Adam::new(nets.teacher_encoder.num_params()),
            student_encoder: Adam::new(nets.student_encoder.num_params()),
            policy: Adam::new(nets.policy.num_params()),
            critic: Adam::new(nets.critic.num_params()),
            estimator: nets.estimator.as_ref().map(|e| Adam::new(e.num_params())),
        }
    }
}

fn apply(name: &'static str, net: &mut Mlp, opt: &mut Adam, grads: &mut [f64], lr: f64, max_norm: f64, norms: &mut BTreeMap<&'static str, (f64, usize)>) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { network: name.into(), detail: format!("gradient entry {i} is {}", grads[i]) });
    }
    let norm = clip_grad_norm(grads, max_norm);
    let e = norms.entry(name).or_insert((0.0, 0));
    e.0 += norm;
    e.1 += 1;
    opt.step(name, net.params_mut(), grads, lr)
}

/// Splits `0..n` into `k` shuffled minibatches covering every row exactly once.
pub fn minibatch_partition(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = k.max(1);
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Owns the optimizer state and the adaptive learning rate across updates.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: AlgoConfig,
    pub opt: Optimizers,
    pub lr: f64,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(cfg: AlgoConfig, nets: &AgentNets, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            lr: cfg.learning_rate,
            opt: Optimizers::new(nets),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0A1C_0DE5),
            cfg,
        })
    }

    /// Steps 3 and 4 of one training iteration on a batch with advantages
    /// already computed: PPO + value epochs, then reconstruction epochs.
    pub fn update(&mut self, nets: &mut AgentNets, batch: &RolloutBatch, phase: u8) -> Result<UpdateReport> {
        let cfg = self.cfg.clone();
        let trainable = Trainable::for_mode(cfg.mode, phase);
        let mut report = UpdateReport { phase, current_lr: self.lr, ..Default::default() };
        let mut norms: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
        let any_ppo = trainable.policy || trainable.critic;

        let (mut loss_t, mut loss_s, mut n_t, mut n_s, mut v_sum, mut kl_sum, mut n_mb) = (0.0, 0.0, 0usize, 0usize, 0.0, 0.0, 0usize);
        if any_ppo && !batch.is_empty() {
            for epoch in 0..cfg.ppo_epochs {
                let parts = minibatch_partition(batch.len(), cfg.minibatches, &mut self.rng);
                for (m, rows) in parts.iter().enumerate() {
                    if rows.is_empty() {
                        continue;
                    }
                    let mut g = ppo_gradients(nets, batch, rows, &cfg, trainable, cfg.clip_range)?;
                    if epoch == 0 && m == 0 {
                        report.first_ratio_deviation = g.max_ratio_deviation;
                        if cfg.verify_on_policy {
                            let u = ppo_gradients(nets, batch, rows, &cfg, trainable, f64::INFINITY)?;
                            report.first_clip_grad_deviation = max_abs_diff(&g.policy, &u.policy)
                                .max(max_abs_diff(&g.teacher_encoder, &u.teacher_encoder))
                                .max(max_abs_diff(&g.student_encoder, &u.student_encoder));
                        }
                    }
                    let entropy_bonus = cfg.entropy_coef * DiagGaussian::new(&vec![0.0; nets.policy.log_std_dim()], nets.policy.log_std()).entropy();
                    if g.n_teacher > 0 {
                        loss_t += -(g.surrogate_teacher + entropy_bonus);
                        n_t += 1;
                    }
                    if g.n_student > 0 {
                        loss_s += -(g.surrogate_student + entropy_bonus);
                        n_s += 1;
                    }
                    v_sum += g.value_loss;
                    kl_sum += g.kl;
                    n_mb += 1;
                    for v in [g.value_loss, g.kl, g.surrogate_teacher, g.surrogate_student] {
                        if !v.is_finite() {
                            return Err(Error::NonFinite { network: "ppo loss".into(), detail: format!("epoch {epoch} minibatch {m}") });
                        }
                    }
                    if cfg.adaptive_lr && cfg.desired_kl > 0.0 {
                        self.lr = adaptive_lr(self.lr, g.kl, cfg.desired_kl, cfg.min_lr, cfg.max_lr);
                    }
                    let lr = self.lr;
                    if trainable.policy {
                        apply("policy", &mut nets.policy, &mut self.opt.policy, &mut g.policy, lr, cfg.max_grad_norm, &mut norms)?;
                    }
                    if trainable.teacher_encoder {
                        apply("teacher_encoder", &mut nets.teacher_encoder, &mut self.opt.teacher_encoder, &mut g.teacher_encoder, lr, cfg.max_grad_norm, &mut norms)?;
                    }
                    if trainable.student_encoder_rl {
                        apply("student_encoder", &mut nets.student_encoder, &mut self.opt.student_encoder, &mut g.student_encoder, lr, cfg.max_grad_norm, &mut norms)?;
                    }
                    if trainable.critic {
                        apply("critic", &mut nets.critic, &mut self.opt.critic, &mut g.critic, lr, cfg.max_grad_norm, &mut norms)?;
                    }
                }
            }
        }
        report.ppo_loss_teacher = (n_t > 0).then(|| loss_t / n_t as f64);
        report.ppo_loss_student = (n_s > 0).then(|| loss_s / n_s as f64);
        if n_mb > 0 {
            report.value_loss = v_sum / n_mb as f64;
            report.mean_kl = kl_sum / n_mb as f64;
        }

        // reconstruction / imitation on student rows
        if trainable.student_encoder_rec {
            let student_rows = batch.rows_of(GroupTag::Student);
            let (mut rec_sum, mut imit_sum, mut count) = (0.0, 0.0, 0usize);
            if !student_rows.is_empty() {
                for _ in 0..cfg.rec_epochs {
                    for part in minibatch_partition(student_rows.len(), cfg.minibatches, &mut self.rng) {
                        if part.is_empty() {
                            continue;
                        }
                        let rows: Vec<usize> = part.iter().map(|&i| student_rows[i]).collect();
                        let mut g = rec_gradients(nets, batch, &rows, &cfg, trainable.imitation)?;
                        if !g.rec_loss.is_finite() || !g.imitation_loss.is_finite() {
                            return Err(Error::NonFinite { network: "reconstruction loss".into(), detail: "non-finite loss".into() });
                        }
                        rec_sum += g.rec_loss;
                        imit_sum += g.imitation_loss;
                        count += 1;
                        apply("student_encoder", &mut nets.student_encoder, &mut self.opt.student_encoder, &mut g.student_encoder, cfg.rec_learning_rate, cfg.max_grad_norm, &mut norms)?;
                    }
                }
            }
            if count > 0 {
                report.rec_loss = rec_sum / count as f64;
                report.imitation_loss = imit_sum / count as f64;
            }
        }

        // estimator head, trained alongside on every row
        if nets.estimator.is_some() && cfg.rec_epochs > 0 && !batch.is_empty() {
            let (mut sum, mut count) = (0.0, 0usize);
            for _ in 0..cfg.rec_epochs {
                for rows in minibatch_partition(batch.len(), cfg.minibatches, &mut self.rng) {
                    if rows.is_empty() {
                        continue;
                    }
                    let (mut g, loss) = estimator_gradients(nets, batch, &rows)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite { network: "estimator".into(), detail: "non-finite loss".into() });
                    }
                    sum += loss;
                    count += 1;
                    let est = nets.estimator.as_mut().expect("checked above");
                    let opt = self.opt.estimator.as_mut().expect("optimizer exists with the head");
                    apply("estimator", est, opt, &mut g, cfg.estimator_learning_rate, cfg.max_grad_norm, &mut norms)?;
                }
            }
            if count > 0 {
                report.estimator_loss = sum / count as f64;
            }
        }

        report.entropy = DiagGaussian::new(&vec![0.0; nets.policy.log_std_dim()], nets.policy.log_std()).entropy();
        report.current_lr = self.lr;
        report.grad_norms = norms.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_covers_each_row_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, k) in [(96, 4), (10, 4), (3, 4), (0, 2)] {
            let parts = minibatch_partition(n, k, &mut rng);
            assert_eq!(parts.len(), k);
            let mut all: Vec<usize> = parts.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn phases() {
        let cfg = AlgoConfig { mode: Mode::TwoStage, ..Default::default() };
        assert_eq!(cfg.phase_boundary(5000), 3000);
        assert_eq!(cfg.phase(2999, 5000), 1);
        assert_eq!(cfg.phase(3000, 5000), 2);
        assert_eq!(AlgoConfig::default().phase(4000, 5000), 1);
    }
}
