//! Artifact writers. Every file goes to a temporary sibling first and is
//! renamed into place, so an interrupted run never leaves a torn file.

use std::io::Write;
use std::path::Path;

use dpmpc_core::simbench::{EpisodeReport, RobustnessReport};
use dpmpc_core::Robot;
use serde::{Deserialize, Serialize};

pub const EPISODE_HEADER: [&str; 13] = [
    "t",
    "q1",
    "q2",
    "qd1",
    "qd2",
    "u1_cmd",
    "u2_cmd",
    "u1_applied",
    "u2_applied",
    "tip_height",
    "up",
    "solver_status",
    "solve_time",
];

pub const ROBUSTNESS_HEADER: [&str; 4] = ["axis", "value", "success", "score"];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> std::io::Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    w.into_inner().map_err(|e| e.into_error())
}

pub fn episode_csv(report: &EpisodeReport) -> std::io::Result<Vec<u8>> {
    csv_bytes(&EPISODE_HEADER, |w| {
        for s in &report.samples {
            let status = s.solver_status.map_or("", |st| st.as_str());
            w.write_record([
                s.t.to_string(),
                s.x.q1.to_string(),
                s.x.q2.to_string(),
                s.x.qd1.to_string(),
                s.x.qd2.to_string(),
                s.u_cmd.u1.to_string(),
                s.u_cmd.u2.to_string(),
                s.u_applied.u1.to_string(),
                s.u_applied.u2.to_string(),
                s.tip_height.to_string(),
                u8::from(s.up).to_string(),
                status.to_string(),
                s.solve_time.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn robustness_csv(report: &RobustnessReport) -> std::io::Result<Vec<u8>> {
    csv_bytes(&ROBUSTNESS_HEADER, |w| {
        for axis in &report.axes {
            for ((v, ok), score) in axis.values.iter().zip(&axis.success).zip(&axis.scores) {
                w.write_record([axis.name.clone(), v.to_string(), ok.to_string(), score.to_string()])?;
            }
        }
        Ok(())
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub robot: Robot,
    pub duration: f64,
    pub uptime: f64,
    pub score: f64,
    pub swingup_success: bool,
    pub longest_hold: f64,
    /// Seconds from the end of each disturbance pulse to the next full hold.
    pub recoveries: Vec<Option<f64>>,
    pub mpc_updates: usize,
    pub failed_cycles: usize,
    pub diverged_steps: usize,
    pub controller_error: Option<String>,
    pub median_prepare_time: f64,
    pub median_feedback_time: f64,
    pub median_cycle_time: f64,
}

impl EpisodeSummary {
    pub fn new(r: &EpisodeReport) -> Self {
        let updates: Vec<_> = r.telemetry.iter().filter(|c| c.mpc_update).collect();
        Self {
            robot: r.robot,
            duration: r.duration,
            uptime: r.uptime,
            score: r.score,
            swingup_success: r.swingup_success,
            longest_hold: r.longest_hold,
            recoveries: r.recoveries.clone(),
            mpc_updates: updates.len(),
            failed_cycles: r.failed_cycles,
            diverged_steps: r.diverged_steps,
            controller_error: r.controller_error.clone(),
            median_prepare_time: median(updates.iter().map(|c| c.prepare_time).collect()),
            median_feedback_time: median(updates.iter().map(|c| c.feedback_time).collect()),
            median_cycle_time: median(updates.iter().map(|c| c.cycle_time).collect()),
        }
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> std::io::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
