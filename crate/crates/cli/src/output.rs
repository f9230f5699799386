//! Aggregate CSV, JSON summary and atomic file writes.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;

use delaylab::labkit::{AggregateStats, BoundCurve};
use delaylab::protocol::format_real;
use delaylab::{Error, ExperimentConfig};

/// Standard errors of slack allowed when comparing an estimate to a bound.
pub const SLACK_STDERRS: f64 = 3.0;

#[derive(Debug, Serialize)]
pub struct BoundFlag {
    pub name: &'static str,
    /// What the bound is compared against: `regret` or `gstar`.
    pub quantity: &'static str,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub learner: String,
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mean_final_regret: f64,
    pub final_stderr: f64,
    pub mean_gstar: f64,
    pub mean_arm_gstar: Vec<f64>,
    pub mean_play_counts: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_pool_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_base_queries: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_base_action_counts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_extended_base_counts: Option<Vec<f64>>,
    pub bounds: Vec<BoundFlag>,
}

pub struct Report {
    pub curves: Vec<BoundCurve>,
    pub summary: Summary,
}

impl Report {
    pub fn build(config: &ExperimentConfig, stats: &AggregateStats) -> Result<Self, Error> {
        let mut curves = Vec::new();
        let mut flags = Vec::new();
        for &kind in &config.bounds {
            let curve = kind.curve(config, &stats.mean_g_star_curve, &stats.mean_arm_g_star_curve)?;
            let bound = *curve.values.last().expect("horizon >= 1");
            let (quantity, empirical, stderr) = if kind.bounds_outstanding() {
                ("gstar", stats.mean_g_star, stats.g_star_stderr)
            } else {
                ("regret", stats.final_regret(), stats.final_stderr())
            };
            flags.push(BoundFlag {
                name: kind.name(),
                quantity,
                empirical,
                stderr,
                bound,
                pass: empirical <= bound + SLACK_STDERRS * stderr,
            });
            curves.push(curve);
        }
        let summary = Summary {
            learner: config.learner.label(),
            runs: stats.runs,
            horizon: stats.horizon,
            seed: config.seed,
            mean_final_regret: stats.final_regret(),
            final_stderr: stats.final_stderr(),
            mean_gstar: stats.mean_g_star,
            mean_arm_gstar: stats.mean_arm_g_star.clone(),
            mean_play_counts: stats.mean_play_counts.clone(),
            mean_pool_size: stats.mean_pool_size,
            mean_base_queries: stats.mean_base_queries,
            mean_base_action_counts: stats.mean_base_action_counts.clone(),
            mean_extended_base_counts: stats.mean_extended_base_counts.clone(),
            bounds: flags,
        };
        Ok(Report { curves, summary })
    }

    /// `t,mean_regret,stderr` followed by one column per requested bound.
    pub fn aggregate_csv(&self, stats: &AggregateStats) -> String {
        let mut out = String::from("t,mean_regret,stderr");
        for curve in &self.curves {
            out.push(',');
            out.push_str(&curve.label);
        }
        out.push('\n');
        for i in 0..stats.horizon {
            let _ = write!(
                out,
                "{},{},{}",
                i + 1,
                format_real(stats.mean_regret[i]),
                format_real(stats.stderr[i])
            );
            for curve in &self.curves {
                let _ = write!(out, ",{}", format_real(curve.values[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> Result<String, Error> {
        let mut text = serde_json::to_string_pretty(&self.summary)
            .map_err(|e| Error::Io(format!("serializing summary: {e}")))?;
        text.push('\n');
        Ok(text)
    }
}

pub fn summary_line(stats: &AggregateStats) -> String {
    format!(
        "mean_regret={:.6} stderr={:.6} mean_gstar={:.6} runs={} horizon={}",
        stats.final_regret(),
        stats.final_stderr(),
        stats.mean_g_star,
        stats.runs,
        stats.horizon
    )
}

/// Writes every file to a temporary sibling first and renames them only once
/// all writes succeeded.
pub fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| e.error)?;
    }
    Ok(())
}
