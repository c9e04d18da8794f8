//! Per-iteration metrics logging. Every row is flushed as soon as it is
//! written so the file parses at any point of a run.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: [&str; 18] = [
    "iteration",
    "phase",
    "mean_reward_teacher",
    "mean_reward_student",
    "tracking_reward_teacher",
    "tracking_reward_student",
    "terrain_level",
    "ppo_loss_teacher",
    "ppo_loss_student",
    "value_loss",
    "rec_loss",
    "estimator_loss",
    "imitation_loss",
    "kl",
    "lr",
    "entropy",
    "episodes",
    "fall_rate",
];

/// One metrics row. Group columns are empty when the group has no rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub phase: u8,
    pub mean_reward_teacher: Option<f64>,
    pub mean_reward_student: Option<f64>,
    pub tracking_reward_teacher: Option<f64>,
    pub tracking_reward_student: Option<f64>,
    pub terrain_level: f64,
    pub ppo_loss_teacher: Option<f64>,
    pub ppo_loss_student: Option<f64>,
    pub value_loss: f64,
    pub rec_loss: f64,
    pub estimator_loss: f64,
    pub imitation_loss: f64,
    pub kl: f64,
    pub lr: f64,
    pub entropy: f64,
    pub episodes: usize,
    pub fall_rate: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl MetricsRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            self.phase.to_string(),
            opt(self.mean_reward_teacher),
            opt(self.mean_reward_student),
            opt(self.tracking_reward_teacher),
            opt(self.tracking_reward_student),
            format!("{:e}", self.terrain_level),
            opt(self.ppo_loss_teacher),
            opt(self.ppo_loss_student),
            format!("{:e}", self.value_loss),
            format!("{:e}", self.rec_loss),
            format!("{:e}", self.estimator_loss),
            format!("{:e}", self.imitation_loss),
            format!("{:e}", self.kl),
            format!("{:e}", self.lr),
            format!("{:e}", self.entropy),
            self.episodes.to_string(),
            format!("{:e}", self.fall_rate),
        ]
    }
}

/// Writes `metrics.csv` and, separately, the non-deterministic wall-clock
/// column to `timing.csv`.
pub struct MetricsWriter {
    metrics: csv::Writer<BufWriter<File>>,
    timing: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut metrics = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("metrics.csv"))?));
        metrics.write_record(METRICS_HEADER)?;
        metrics.flush()?;
        let mut timing = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("timing.csv"))?));
        timing.write_record(["iteration", "wall_ms"])?;
        timing.flush()?;
        Ok(Self { metrics, timing })
    }

    pub fn write(&mut self, row: &MetricsRow, wall_ms: f64) -> Result<()> {
        self.metrics.write_record(row.fields())?;
        self.metrics.flush()?;
        self.timing.write_record([row.iteration.to_string(), format!("{wall_ms:.3}")])?;
        self.timing.flush()?;
        Ok(())
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.metrics.flush();
        let _ = self.timing.flush();
    }
}

/// Reads a metrics file back into `(header, rows)`.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

/// Column `name` of a metrics table as floats; empty cells become `None`.
pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<Option<f64>> {
    let Some(i) = header.iter().position(|h| h == name) else {
        return Vec::new();
    };
    rows.iter().map(|r| r.get(i).and_then(|s| s.parse().ok())).collect()
}
