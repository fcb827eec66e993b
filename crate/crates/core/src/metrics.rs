//! Evaluation metrics computed from episode logs alone.
//!
//! Four headline numbers per run: mean final control error E, weighted
//! communication count C, time to hold the yaw band P, and connectivity
//! ratio R_c. All of them re-derive from logged state, so evaluating a
//! rollout twice gives identical results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::episode::{EpisodeLog, StepRecord};
use crate::error::{Error, Result};
use crate::graph::{is_connected, Topology};
use crate::planar::wrap_angle;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Everything measured from a single episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub schema: u32,
    pub trial: usize,
    pub seed: u64,
    pub comm_mode: String,
    pub agents: usize,
    /// Final-step error norm, meters and radians mixed.
    pub final_error: f64,
    /// Open receive links summed over steps, weighted by exchange rounds
    /// per step.
    pub comm_events: f64,
    /// Seconds until the yaw error enters and holds the tolerance band;
    /// episode duration when it never does.
    pub transport_time: f64,
    pub band_reached: bool,
    pub connectivity_ratio: f64,
    pub position_success: bool,
    pub yaw_success: bool,
}

fn error_norm(e: &[f64; 3]) -> f64 {
    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
}

fn require_logs(logs: &[EpisodeLog]) -> Result<()> {
    if logs.is_empty() {
        return Err(Error::Log("no episode logs to evaluate".into()));
    }
    Ok(())
}

/// Mean over trials of the final-step error norm. Rejects truncated logs.
pub fn control_error(logs: &[EpisodeLog]) -> Result<f64> {
    require_logs(logs)?;
    let mut sum = 0.0;
    for log in logs {
        sum += error_norm(&log.final_error()?);
    }
    Ok(sum / logs.len() as f64)
}

fn step_events(record: &StepRecord) -> usize {
    record.gamma.iter().flatten().map(|&g| g as usize).sum()
}

/// Weighted communication count of one episode: every open receive link
/// costs one exchange per consensus round, and a control period holds
/// `control_period / consensus_period` rounds.
pub fn communication_cost_single(log: &EpisodeLog) -> f64 {
    let rounds = log.header.control_period / log.header.consensus_period;
    log.steps
        .iter()
        .map(|record| step_events(record) as f64 * rounds)
        .sum()
}

/// Mean weighted communication count over trials.
pub fn communication_cost(logs: &[EpisodeLog]) -> Result<f64> {
    require_logs(logs)?;
    Ok(logs.iter().map(communication_cost_single).sum::<f64>() / logs.len() as f64)
}

/// Yaw errors at t = 0 and after every step, in order.
fn yaw_error_sequence(log: &EpisodeLog) -> Vec<f64> {
    let initial = wrap_angle(log.header.initial_payload[2] - log.header.desired[2]);
    std::iter::once(initial)
        .chain(log.steps.iter().map(|record| record.error[2]))
        .collect()
}

/// First time the yaw error enters the band and stays for `sustain`
/// consecutive states, in seconds; `None` when it never holds that long.
pub fn transport_time_single(log: &EpisodeLog, yaw_tolerance: f64, sustain: usize) -> Option<f64> {
    let sustain = sustain.max(1);
    let states = yaw_error_sequence(log);
    let in_band: Vec<bool> = states.iter().map(|e| e.abs() <= yaw_tolerance).collect();
    let mut run = 0usize;
    for (index, &ok) in in_band.iter().enumerate() {
        run = if ok { run + 1 } else { 0 };
        if run == sustain {
            let entry = index + 1 - sustain;
            return Some(entry as f64 * log.header.control_period);
        }
    }
    None
}

fn episode_duration(log: &EpisodeLog) -> f64 {
    log.header.steps as f64 * log.header.control_period
}

/// Mean band-entry time over trials; trials that never hold the band
/// contribute the full episode duration.
pub fn transport_time(logs: &[EpisodeLog], yaw_tolerance: f64, sustain: usize) -> Result<f64> {
    require_logs(logs)?;
    let sum: f64 = logs
        .iter()
        .map(|log| {
            transport_time_single(log, yaw_tolerance, sustain)
                .unwrap_or_else(|| episode_duration(log))
        })
        .sum();
    Ok(sum / logs.len() as f64)
}

/// Connectivity ratio of one episode.
///
/// Per step k: the team scores beta(k) = 1 when the receive graph is
/// connected, and agent i counts as communicating, b_i(k) = 1, when it has
/// at least one open link. Connectivity implies every agent communicates,
/// so each agent's ratio sum(beta)/sum(b_i) sits in [0, 1]. Agents that
/// never communicate contribute 0, which makes a silent team score 0.
pub fn connectivity_ratio_single(log: &EpisodeLog) -> Result<f64> {
    let n = log.header.agents;
    let mut beta_sum = 0.0;
    let mut comm_steps = vec![0.0; n];
    for record in &log.steps {
        let topology = Topology::from_rows(&record.gamma)?;
        if is_connected(&topology) {
            beta_sum += 1.0;
        }
        for (i, steps) in comm_steps.iter_mut().enumerate() {
            if topology.degree(i) > 0 {
                *steps += 1.0;
            }
        }
    }
    let sum: f64 = comm_steps
        .iter()
        .map(|&b| if b > 0.0 { beta_sum / b } else { 0.0 })
        .sum();
    Ok(sum / n as f64)
}

/// Mean connectivity ratio over trials.
pub fn connectivity_ratio(logs: &[EpisodeLog]) -> Result<f64> {
    require_logs(logs)?;
    let mut sum = 0.0;
    for log in logs {
        sum += connectivity_ratio_single(log)?;
    }
    Ok(sum / logs.len() as f64)
}

/// All metrics for one episode under the given evaluation settings.
pub fn trial_metrics(log: &EpisodeLog, index: usize, eval: &EvalConfig) -> Result<TrialMetrics> {
    let final_error_vec = log.final_error()?;
    let yaw_tolerance = eval.yaw_tolerance_deg.to_radians();
    let reached = transport_time_single(log, yaw_tolerance, eval.sustain_steps);
    let position_error =
        (final_error_vec[0] * final_error_vec[0] + final_error_vec[1] * final_error_vec[1]).sqrt();
    Ok(TrialMetrics {
        schema: METRICS_SCHEMA_VERSION,
        trial: index,
        seed: log.header.seed,
        comm_mode: log.header.comm_mode.to_string(),
        agents: log.header.agents,
        final_error: error_norm(&final_error_vec),
        comm_events: communication_cost_single(log),
        transport_time: reached.unwrap_or_else(|| episode_duration(log)),
        band_reached: reached.is_some(),
        connectivity_ratio: connectivity_ratio_single(log)?,
        position_success: position_error <= eval.position_threshold,
        yaw_success: final_error_vec[2].abs() <= yaw_tolerance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    fn over(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Aggregate over trials, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub trials: usize,
    pub comm_mode: String,
    pub agents: usize,
    pub control_error: MetricStat,
    pub communication_cost: MetricStat,
    pub transport_time: MetricStat,
    pub connectivity_ratio: MetricStat,
    pub band_reached_rate: f64,
    pub position_success_rate: f64,
    pub yaw_success_rate: f64,
}

pub fn summarize(metrics: &[TrialMetrics]) -> Result<Summary> {
    if metrics.is_empty() {
        return Err(Error::Log("no trials to summarize".into()));
    }
    let mode = if metrics
        .iter()
        .all(|m| m.comm_mode == metrics[0].comm_mode)
    {
        metrics[0].comm_mode.clone()
    } else {
        "mixed".to_string()
    };
    let rate = |f: fn(&TrialMetrics) -> bool| {
        metrics.iter().filter(|m| f(m)).count() as f64 / metrics.len() as f64
    };
    Ok(Summary {
        schema: METRICS_SCHEMA_VERSION,
        trials: metrics.len(),
        comm_mode: mode,
        agents: metrics.iter().map(|m| m.agents).max().unwrap_or(0),
        control_error: MetricStat::over(metrics.iter().map(|m| m.final_error)),
        communication_cost: MetricStat::over(metrics.iter().map(|m| m.comm_events)),
        transport_time: MetricStat::over(metrics.iter().map(|m| m.transport_time)),
        connectivity_ratio: MetricStat::over(metrics.iter().map(|m| m.connectivity_ratio)),
        band_reached_rate: rate(|m| m.band_reached),
        position_success_rate: rate(|m| m.position_success),
        yaw_success_rate: rate(|m| m.yaw_success),
    })
}

/// Metrics for every log plus their aggregate.
pub fn evaluate_logs(logs: &[EpisodeLog], eval: &EvalConfig) -> Result<(Vec<TrialMetrics>, Summary)> {
    require_logs(logs)?;
    let metrics = logs
        .iter()
        .enumerate()
        .map(|(index, log)| trial_metrics(log, index, eval))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&metrics)?;
    Ok((metrics, summary))
}

/// One row per trial.
pub fn write_metrics_csv(path: impl AsRef<Path>, metrics: &[TrialMetrics]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "schema",
        "trial",
        "seed",
        "comm_mode",
        "agents",
        "final_error",
        "comm_events",
        "transport_time",
        "band_reached",
        "connectivity_ratio",
        "position_success",
        "yaw_success",
    ])?;
    for m in metrics {
        writer.write_record([
            m.schema.to_string(),
            m.trial.to_string(),
            m.seed.to_string(),
            m.comm_mode.clone(),
            m.agents.to_string(),
            format!("{:.9}", m.final_error),
            format!("{:.9}", m.comm_events),
            format!("{:.9}", m.transport_time),
            (m.band_reached as u8).to_string(),
            format!("{:.9}", m.connectivity_ratio),
            (m.position_success as u8).to_string(),
            (m.yaw_success as u8).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CommMode;
    use crate::episode::{EpisodeHeader, LOG_SCHEMA_VERSION};

    fn blank_record(n: usize, step: usize, gamma: Vec<Vec<u8>>, error: [f64; 3]) -> StepRecord {
        let comm_events = {
            let mut events = Vec::new();
            for (i, row) in gamma.iter().enumerate() {
                for (j, &g) in row.iter().enumerate() {
                    if g == 1 {
                        events.push([i, j]);
                    }
                }
            }
            events
        };
        StepRecord {
            step,
            payload_pose: [0.0; 3],
            payload_twist: [0.0; 3],
            agent_poses: vec![[0.0; 3]; n],
            wrenches: vec![[0.0; 3]; n],
            consensus: vec![[0.0; 3]; n],
            gamma,
            comm_events,
            actions: vec![[0.0; 3]; n],
            rewards: vec![0.0; n],
            reward_terms: vec![[0.0; 3]; n],
            error,
            resultant: [0.0; 3],
        }
    }

    fn synthetic_log(
        n: usize,
        steps: usize,
        control_period: f64,
        consensus_period: f64,
        initial_yaw_error: f64,
        gamma_for: impl Fn(usize) -> Vec<Vec<u8>>,
        error_for: impl Fn(usize) -> [f64; 3],
    ) -> EpisodeLog {
        EpisodeLog {
            header: EpisodeHeader {
                schema: LOG_SCHEMA_VERSION,
                task: "rotation".into(),
                comm_mode: CommMode::Full,
                agents: n,
                group_size: 1,
                steps,
                control_period,
                consensus_period,
                consensus_gain: 0.2,
                seed: 3,
                initial_payload: [0.0, 0.0, initial_yaw_error],
                desired: [0.0, 0.0, 0.0],
                initial_agents: vec![[0.0; 3]; n],
            },
            steps: (0..steps)
                .map(|k| blank_record(n, k, gamma_for(k), error_for(k)))
                .collect(),
        }
    }

    fn mutual_pair() -> Vec<Vec<u8>> {
        vec![vec![0, 1], vec![1, 0]]
    }

    fn silent(n: usize) -> Vec<Vec<u8>> {
        vec![vec![0; n]; n]
    }

    #[test]
    fn final_error_norm_is_euclidean() {
        let log = synthetic_log(2, 3, 0.1, 0.05, 1.0, |_| mutual_pair(), |k| {
            if k == 2 {
                [0.3, 0.4, 0.0]
            } else {
                [9.0, 9.0, 9.0]
            }
        });
        assert_eq!(control_error(&[log]).unwrap(), 0.5);
    }

    #[test]
    fn truncated_log_is_rejected() {
        let mut log = synthetic_log(2, 3, 0.1, 0.05, 1.0, |_| mutual_pair(), |_| [0.0; 3]);
        log.steps.pop();
        assert!(control_error(&[log]).is_err());
    }

    #[test]
    fn communication_count_closed_form() {
        // Two agents receiving from each other every step for 150 steps,
        // two exchange rounds per control period: 2 * 150 * 2.
        let log = synthetic_log(2, 150, 0.1, 0.05, 1.0, |_| mutual_pair(), |_| [0.0; 3]);
        assert_eq!(communication_cost_single(&log), 600.0);
        assert_eq!(communication_cost(&[log]).unwrap(), 600.0);
    }

    #[test]
    fn silent_team_costs_nothing_and_never_connects() {
        let log = synthetic_log(2, 20, 0.1, 0.05, 1.0, |_| silent(2), |_| [0.0; 3]);
        assert_eq!(communication_cost(&[log.clone()]).unwrap(), 0.0);
        assert_eq!(connectivity_ratio(&[log]).unwrap(), 0.0);
    }

    #[test]
    fn band_already_held_at_start_is_zero_time() {
        let tol = 10f64.to_radians();
        let log = synthetic_log(2, 10, 0.1, 0.05, 0.0, |_| mutual_pair(), |_| [0.0; 3]);
        assert_eq!(transport_time_single(&log, tol, 5), Some(0.0));
    }

    #[test]
    fn band_entry_time_matches_step_count() {
        // Out of band initially and through step 49; in band from step 50 on.
        let tol = 10f64.to_radians();
        let log = synthetic_log(2, 80, 0.1, 0.05, 1.5, |_| mutual_pair(), |k| {
            if k + 1 >= 50 {
                [0.0, 0.0, 0.05]
            } else {
                [0.0, 0.0, 1.5]
            }
        });
        assert_eq!(transport_time_single(&log, tol, 5), Some(5.0));
        assert_eq!(transport_time(&[log], tol, 5).unwrap(), 5.0);
    }

    #[test]
    fn transient_crossings_do_not_count() {
        // States: initial out; in for 4 steps; out; then in for good from
        // step 9. Sustained entry (5 consecutive) starts at state 9.
        let tol = 10f64.to_radians();
        let log = synthetic_log(2, 20, 0.1, 0.05, 1.5, |_| mutual_pair(), |k| {
            let step = k + 1;
            let inside = (2..=5).contains(&step) || step >= 9;
            [0.0, 0.0, if inside { 0.01 } else { 1.5 }]
        });
        assert_eq!(transport_time_single(&log, tol, 5), Some(0.9));
    }

    #[test]
    fn never_entering_contributes_duration() {
        let tol = 10f64.to_radians();
        let log = synthetic_log(2, 30, 0.1, 0.05, 1.5, |_| mutual_pair(), |_| [0.0, 0.0, 1.5]);
        assert_eq!(transport_time_single(&log, tol, 5), None);
        assert_eq!(transport_time(&[log], tol, 5).unwrap(), 3.0);
    }

    #[test]
    fn connectivity_ratio_half_connected() {
        // Three agents all communicating every step, but the graph is a
        // connected chain only on even steps; odd steps split into a pair
        // and a self-loop-free pair, leaving one agent isolated.
        let chain = vec![vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]];
        let split = vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]];
        let log = synthetic_log(
            3,
            10,
            0.1,
            0.05,
            1.0,
            |k| if k % 2 == 0 { chain.clone() } else { split.clone() },
            |_| [0.0; 3],
        );
        // beta = 5 of 10; agents 0 and 1 communicate all 10 steps, agent 2
        // only the 5 connected ones: (5/10 + 5/10 + 5/5) / 3.
        let expected = (0.5 + 0.5 + 1.0) / 3.0;
        assert!((connectivity_ratio_single(&log).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn always_connected_ratio_is_one() {
        let log = synthetic_log(2, 10, 0.1, 0.05, 1.0, |_| mutual_pair(), |_| [0.0; 3]);
        assert_eq!(connectivity_ratio_single(&log).unwrap(), 1.0);
    }

    #[test]
    fn trial_metrics_and_summary_round_out() {
        let eval = EvalConfig::default();
        let good = synthetic_log(2, 10, 0.1, 0.05, 0.0, |_| mutual_pair(), |_| [0.02, 0.0, 0.0]);
        let bad = synthetic_log(2, 10, 0.1, 0.05, 1.5, |_| silent(2), |_| [3.0, 4.0, 1.5]);
        let (metrics, summary) = evaluate_logs(&[good, bad], &eval).unwrap();
        assert_eq!(metrics.len(), 2);
        assert!(metrics[0].position_success && metrics[0].yaw_success);
        assert!(!metrics[1].position_success && !metrics[1].yaw_success);
        assert!(metrics[0].band_reached && !metrics[1].band_reached);
        assert_eq!(summary.trials, 2);
        assert_eq!(summary.comm_mode, "full");
        // Mean of 0.02 and sqrt(9 + 16 + 2.25).
        let e1 = (9.0f64 + 16.0 + 2.25).sqrt();
        assert!((summary.control_error.mean - (0.02 + e1) / 2.0).abs() < 1e-12);
        let expected_std =
            (((0.02 - summary.control_error.mean).powi(2)
                + (e1 - summary.control_error.mean).powi(2))
                / 1.0)
                .sqrt();
        assert!((summary.control_error.std - expected_std).abs() < 1e-12);
        assert_eq!(summary.position_success_rate, 0.5);
    }

    #[test]
    fn metric_files_write_and_reload() {
        let eval = EvalConfig::default();
        let log = synthetic_log(2, 10, 0.1, 0.05, 0.0, |_| mutual_pair(), |_| [0.0; 3]);
        let (metrics, summary) = evaluate_logs(&[log], &eval).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_metrics_csv(dir.path().join("metrics.csv"), &metrics).unwrap();
        write_summary_json(dir.path().join("summary.json"), &summary).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
        let loaded: Summary =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(loaded, summary);
    }
}
