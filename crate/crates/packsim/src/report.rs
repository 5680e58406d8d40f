//! Run reports: the per-episode result table, its JSON form, and speed traces.
//!
//! Report files are a pure function of the run, so repeated runs with the same
//! inputs produce byte-identical files. Wall-clock timing is therefore never
//! written into report files; it goes to stderr.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::config::RewardConfig;
use crate::error::Result;
use crate::sim::{oee_report, OeeReport, Simulation};

/// Results of one finished episode under one controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub controller: String,
    pub scenario: String,
    pub oee: OeeReport,
    /// Undiscounted episode return under the reward definition.
    pub episode_return: f64,
    /// Mean absolute per-tick change of the actuated belt speed [m/s].
    pub mean_abs_speed_delta: f64,
    pub ticks: u32,
}

/// Mean absolute tick-to-tick change of a speed series.
pub fn mean_abs_delta(series: &[f64]) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    series
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<f64>()
        / (series.len() - 1) as f64
}

/// Episode return recomputed from the recorded per-tick series; `initial`
/// anchors the first commanded-speed delta.
pub fn episode_return(sim: &Simulation, w: &RewardConfig, initial_speed: f64) -> f64 {
    let m = &sim.metrics;
    let mut total = 0.0;
    let mut prev = initial_speed;
    for (i, &cmd) in m.commanded_speed.iter().enumerate() {
        let lost = m.products_lost.get(i).copied().unwrap_or(0) as f64;
        let empty = m.boxes_lost_empty.get(i).copied().unwrap_or(0) as f64;
        total -= w.mu_prod * lost + w.mu_box * empty + w.zeta * (cmd - prev).abs();
        prev = cmd;
    }
    total
}

pub fn episode_report(
    sim: &Simulation,
    w: &RewardConfig,
    controller: &str,
    scenario: &str,
    initial_speed: f64,
) -> Result<EpisodeReport> {
    Ok(EpisodeReport {
        controller: controller.to_string(),
        scenario: scenario.to_string(),
        oee: oee_report(&sim.metrics)?,
        episode_return: episode_return(sim, w, initial_speed),
        mean_abs_speed_delta: mean_abs_delta(&sim.metrics.actuated_speed),
        ticks: sim.metrics.commanded_speed.len() as u32,
    })
}

/// Aggregate over several episodes of the same controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub episodes: Vec<EpisodeReport>,
}

impl RunReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Human-readable result table: one row per episode plus a mean row.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<14} {:>7} {:>8} {:>7} {:>6} {:>6} {:>7} {:>9} {:>10}",
            "controller",
            "scenario",
            "perf%",
            "quality%",
            "oee%",
            "lostP",
            "emptyB",
            "partlyB",
            "mean|dv|",
            "return"
        );
        let mut sums = [0.0f64; 7];
        for e in &self.episodes {
            let _ = writeln!(
                s,
                "{:<10} {:<14} {:>7.2} {:>8.2} {:>7.2} {:>6} {:>6} {:>7} {:>9.5} {:>10.3}",
                e.controller,
                e.scenario,
                e.oee.performance,
                e.oee.quality,
                e.oee.oee,
                e.oee.products_lost,
                e.oee.boxes_lost_empty,
                e.oee.boxes_lost_partly,
                e.mean_abs_speed_delta,
                e.episode_return,
            );
            sums[0] += e.oee.performance;
            sums[1] += e.oee.quality;
            sums[2] += e.oee.oee;
            sums[3] += e.oee.products_lost as f64;
            sums[4] += e.oee.boxes_lost_empty as f64;
            sums[5] += e.oee.boxes_lost_partly as f64;
            sums[6] += e.mean_abs_speed_delta;
        }
        if self.episodes.len() > 1 {
            let n = self.episodes.len() as f64;
            let _ = writeln!(
                s,
                "{:<10} {:<14} {:>7.2} {:>8.2} {:>7.2} {:>6.1} {:>6.1} {:>7.1} {:>9.5} {:>10}",
                "mean",
                "-",
                sums[0] / n,
                sums[1] / n,
                sums[2] / n,
                sums[3] / n,
                sums[4] / n,
                sums[5] / n,
                sums[6] / n,
                "-",
            );
        }
        s
    }
}

/// Write the per-tick speed trace (commanded and actuated) as CSV.
pub fn save_speed_trace(sim: &Simulation, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "tick,commanded_speed,actuated_speed")?;
    let m = &sim.metrics;
    for (i, (c, a)) in m.commanded_speed.iter().zip(&m.actuated_speed).enumerate() {
        writeln!(out, "{i},{c},{a}")?;
    }
    Ok(())
}
