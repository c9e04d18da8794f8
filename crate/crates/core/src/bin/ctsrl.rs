use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use ctsrl::agent::Mode;
use ctsrl::checkpoint::{self, Checkpoint};
use ctsrl::config::RunConfig;
use ctsrl::eval::{self, CurveSource, DeployedPolicy, EvalOptions};
use ctsrl::{gradcheck, train};

/// Log verbosity is read from `CTS_LOG` (e.g. `CTS_LOG=debug`).
#[derive(Parser)]
#[command(name = "ctsrl", version, about = "Concurrent teacher-student PPO on toy locomotion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Tracking,
    Push,
    Latents,
    Curves,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from a TOML config.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a checkpoint.
    Eval {
        /// checkpoint file (not needed for `--suite curves`)
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tracking")]
        suite: Suite,
        /// output directory; defaults to the checkpoint's directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// push magnitude in m/s
        #[arg(long)]
        delta: Option<f64>,
        /// evaluate on the environment of this config instead of the checkpoint's
        #[arg(long)]
        config: Option<PathBuf>,
        /// allow an environment profile different from the checkpoint's
        #[arg(long)]
        force: bool,
        /// terrain level used during evaluation; defaults to the middle level
        #[arg(long)]
        level: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// run directories for `--suite curves`
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
    /// Finite-difference and gradient-routing checks.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Shorthand for `eval --suite latents`.
    ExportLatents {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTS_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Train { config, seed, mode, out, iterations, workers } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.algo.mode = m;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.validate()?;
            let out_dir = cfg.out_dir.clone();
            let outcome = train::run_training(&cfg, &out_dir)?;
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
            Ok(())
        }
        Cmd::Eval { checkpoint, suite, out, delta, config, force, level, seed, runs } => {
            if let Suite::Curves = suite {
                let out = out.unwrap_or_else(|| PathBuf::from("."));
                return curves(&runs, &out);
            }
            let path = checkpoint.context("a checkpoint path is required for this suite")?;
            let ckpt = checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let out = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
            evaluate(&ckpt, suite, &out, delta, config.as_deref(), force, level, seed)
        }
        Cmd::Gradcheck { trials, seed } => {
            let report = gradcheck::run(trials, seed)?;
            for f in &report.fd_failures {
                eprintln!("FAIL {f}");
            }
            for f in &report.routing_failures {
                eprintln!("FAIL routing: {f}");
            }
            if !report.passed() {
                bail!("gradcheck failed: {} network(s), {} routing check(s)", report.fd_failures.len(), report.routing_failures.len());
            }
            println!("gradcheck passed: {trials} random networks, routing checks ok");
            Ok(())
        }
        Cmd::ExportLatents { checkpoint, out, seed } => {
            let ckpt = checkpoint::load(&checkpoint)?;
            let out = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            evaluate(&ckpt, Suite::Latents, &out, None, None, false, None, seed)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ckpt: &Checkpoint,
    suite: Suite,
    out: &Path,
    delta: Option<f64>,
    env_config: Option<&Path>,
    force: bool,
    level: Option<u32>,
    seed: u64,
) -> anyhow::Result<()> {
    let mut cfg = ckpt.config.clone();
    if let Some(p) = env_config {
        let other = RunConfig::load(p)?;
        let same = other.env.profile == cfg.env.profile && other.env.robot == cfg.env.robot;
        if !same && !force {
            bail!(
                "environment profile {:?}/{:?} differs from the checkpoint's {:?}/{:?}; pass --force to evaluate anyway",
                other.env.profile,
                other.env.robot,
                cfg.env.profile,
                cfg.env.robot
            );
        }
        cfg.env = other.env;
        cfg.reward = other.reward;
        cfg.randomization = other.randomization;
        cfg.eval = other.eval;
    }
    std::fs::create_dir_all(out)?;
    let settings = cfg.settings();
    let kinds = cfg.eval.terrain_kinds.clone();
    let opts = EvalOptions {
        n_envs: cfg.eval.n_envs,
        episodes: cfg.eval.episodes,
        episode_steps: cfg.eval.episode_steps,
        level: level.unwrap_or(settings.effective_max_level() / 2),
        seed,
        ..EvalOptions::default()
    };
    let policy = DeployedPolicy { nets: &ckpt.nets, group: cfg.algo.mode.deployed_group() };
    let stdout = std::io::stdout();
    match suite {
        Suite::Tracking => {
            let res = eval::eval_tracking(&policy, &settings, &kinds, &opts)?;
            eval::write_tracking_csv(&out.join("tracking.csv"), &res)?;
            let rows: Vec<_> = res.iter().map(|r| (r.terrain.name().to_string(), format!("{:.4} ± {:.4}", r.error.mean, r.error.std))).collect();
            eval::print_table(stdout.lock(), "tracking error (m/s)", &rows)?;
        }
        Suite::Push => {
            let d = delta.or(cfg.eval.push_delta).unwrap_or(0.5 * cfg.env.curriculum.max_lin);
            let res = eval::eval_push_survival(&policy, &settings, &kinds, d, cfg.eval.n_trials, &opts)?;
            eval::write_survival_csv(&out.join("survival.csv"), &res)?;
            let rows: Vec<_> = res.iter().map(|r| (r.terrain.name().to_string(), format!("{:.1}% of {}", r.percent(), r.trials))).collect();
            eval::print_table(stdout.lock(), &format!("push survival at {d} m/s"), &rows)?;
        }
        Suite::Latents => {
            let rows = eval::export_latents(&policy, &settings, &kinds, cfg.eval.n_samples, &opts)?;
            eval::write_latents_csv(&out.join("latents.csv"), &rows)?;
            println!("wrote {} latents to {}", rows.len(), out.join("latents.csv").display());
        }
        Suite::Curves => unreachable!("handled by the caller"),
    }
    Ok(())
}

fn curves(runs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    if runs.is_empty() {
        bail!("--suite curves needs at least one --runs directory");
    }
    let mut sources = Vec::with_capacity(runs.len());
    for dir in runs {
        let cfg = RunConfig::load(&dir.join("config.toml"))?;
        sources.push(CurveSource { mode: cfg.algo.mode.name().to_string(), seed: cfg.seed, metrics: dir.join("metrics.csv") });
    }
    std::fs::create_dir_all(out)?;
    let agg = eval::write_curves_csv(&out.join("curves.csv"), &sources)?;
    let rows: Vec<_> = agg
        .iter()
        .map(|(mode, a)| {
            let last = a.last().map_or("-".to_string(), |x| format!("{:.4} ± {:.4} (n={})", x.mean, x.std, x.count));
            (mode.clone(), last)
        })
        .collect();
    eval::print_table(std::io::stdout().lock(), "final tracking reward", &rows)?;
    Ok(())
}
