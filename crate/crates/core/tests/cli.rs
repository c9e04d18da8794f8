use std::path::Path;
use std::process::{Command, Output};

use ctsrl::checkpoint;
use ctsrl::metrics::{column, read_metrics, METRICS_HEADER};

const SMALL: &str = r#"
seed = 3
iterations = 4
n_envs = 8
latent_dim = 4
checkpoint_interval = 2

[env]
profile = "ctx-pointmass"

[algo]
steps_per_iter = 8

[networks]
encoder = [8]
policy = [8]
critic = [8]
estimator = [8]

[eval]
n_envs = 2
episodes = 1
episode_steps = 50
n_trials = 4
n_samples = 10
terrain_kinds = ["flat", "stairs"]
"#;

fn ctsrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsrl")).args(args).env("CTS_LOG", "warn").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn train(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ctsrl(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_iterations_writes_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    let o = train(&cfg, &out, &["--iterations", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.trim_end(), METRICS_HEADER.join(","));
    assert!(checkpoint::load(&out.join("initial.ckpt")).is_ok());
}

#[test]
fn same_seed_gives_identical_metrics_and_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&cfg, &a, &[]).status.success());
    assert!(train(&cfg, &b, &["--workers", "2"]).status.success());
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.csv")).unwrap());
    assert!(a.join("iter_000002.ckpt").exists());
    assert!(a.join("final.ckpt").exists());
    let (_, rows) = read_metrics(&a.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4);
}

#[test]
fn two_stage_phase_flips_at_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("iterations = 4", "iterations = 10"));
    let out = dir.path().join("ts");
    let o = train(&cfg, &out, &["--mode", "two_stage"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_metrics(&out.join("metrics.csv")).unwrap();
    let phase: Vec<f64> = column(&h, &rows, "phase").into_iter().map(Option::unwrap).collect();
    // boundary round(0.6 * 10) = 6
    assert_eq!(phase, [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    // phase 2 trains only the student, so teacher columns are empty there
    let teacher = column(&h, &rows, "tracking_reward_teacher");
    assert!(teacher[..6].iter().all(Option::is_some));
    assert!(teacher[6..].iter().all(Option::is_none));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[algo]\nclip_range = -0.2\n");
    let o = train(&cfg, &dir.path().join("x"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("clip_range"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "typo.toml", "[algo]\nlearnig_rate = 0.1\n");
    let o = train(&cfg, &dir.path().join("y"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learnig_rate"), "{}", stderr(&o));
}

#[test]
fn non_finite_training_writes_post_mortem() {
    let dir = tempfile::tempdir().unwrap();
    // one Adam step of this size overflows every layer
    let text = SMALL.replace("steps_per_iter = 8", "steps_per_iter = 8\nlearning_rate = 1e200\nadaptive_lr = false");
    let cfg = write_config(dir.path(), "nan.toml", &text);
    let out = dir.path().join("nan");
    let o = train(&cfg, &out, &[]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("postmortem_000000.ckpt"), "{err}");
    assert!(checkpoint::load(&out.join("postmortem_000000.ckpt")).is_ok());
}

#[test]
fn eval_suites_and_checkpoint_immutability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    assert!(train(&cfg, &out, &["--iterations", "1"]).status.success());
    let ckpt = out.join("final.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let before = checkpoint::file_hash(&ckpt).unwrap();

    let o = ctsrl(&["eval", ckpt_s, "--suite", "tracking"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("tracking.csv")).unwrap();
    for rec in r.records() {
        let e: f64 = rec.unwrap()[1].parse().unwrap();
        assert!(e.is_finite() && e >= 0.0);
    }

    let o = ctsrl(&["eval", ckpt_s, "--suite", "push", "--delta", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("survival.csv")).unwrap();
    for rec in r.records() {
        // the point mass cannot fall, so the unperturbed rate is 100%
        assert_eq!(&rec.unwrap()[4], "100.000");
    }

    let o = ctsrl(&["export-latents", ckpt_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("latents.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 1 + 4);
    assert_eq!(r.records().count(), 2 * 10);

    let curves = dir.path().join("curves");
    let o = ctsrl(&["eval", "--suite", "curves", "--runs", out.to_str().unwrap(), "--out", curves.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv::Reader::from_path(curves.join("curves.csv")).unwrap().records().count(), 1);

    assert_eq!(checkpoint::file_hash(&ckpt).unwrap(), before);
}

#[test]
fn eval_refuses_other_profile_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    assert!(train(&cfg, &out, &["--iterations", "0"]).status.success());
    let other = write_config(dir.path(), "biped.toml", &SMALL.replace("profile = \"ctx-pointmass\"", "profile = \"ctx-pointmass\"\nrobot = \"biped\""));
    let ckpt = out.join("final.ckpt");
    let o = ctsrl(&["eval", ckpt.to_str().unwrap(), "--config", &other]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let o = ctsrl(&["eval", ckpt.to_str().unwrap(), "--config", &other, "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_fails() {
    let o = ctsrl(&["eval", "/nonexistent/final.ckpt"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nonexistent"), "{}", stderr(&o));
}

#[test]
fn gradcheck_verbs() {
    let o = ctsrl(&["gradcheck", "--trials", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ctsrl(&["gradcheck", "--trials", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("vacuous"), "{}", stderr(&o));
}
