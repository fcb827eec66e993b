//! Episode logs: one JSON line per control step plus a header line.
//!
//! Logs are the only interface between rollouts and evaluation; every metric
//! is recomputable from a log alone. Serialization is deterministic, so two
//! rollouts with the same seed produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::CommMode;
use crate::error::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// First line of a log file: run identity and everything needed to
/// interpret the step records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub schema: u32,
    /// "transport" or "rotation".
    pub task: String,
    pub comm_mode: CommMode,
    pub agents: usize,
    pub group_size: usize,
    /// Control steps the episode is supposed to run.
    pub steps: usize,
    pub control_period: f64,
    pub consensus_period: f64,
    pub consensus_gain: f64,
    pub seed: u64,
    /// Payload pose at t = 0 as [x, y, yaw].
    pub initial_payload: [f64; 3],
    pub desired: [f64; 3],
    pub initial_agents: Vec<[f64; 3]>,
}

/// State of the world after one control step, plus everything the agents
/// decided and received during it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub payload_pose: [f64; 3],
    pub payload_twist: [f64; 3],
    pub agent_poses: Vec<[f64; 3]>,
    /// Per-agent wrench applied to the payload over this step.
    pub wrenches: Vec<[f64; 3]>,
    /// Per-agent consensus estimates after this step's exchange rounds.
    pub consensus: Vec<[f64; 3]>,
    /// Receive matrix used this step, row i = receives of agent i.
    pub gamma: Vec<Vec<u8>>,
    /// Ordered (receiver, sender) deliveries, one entry per open link.
    pub comm_events: Vec<[usize; 2]>,
    /// Raw policy outputs in [-1, 1], one [linear, angular, trigger] per
    /// agent.
    pub actions: Vec<[f64; 3]>,
    pub rewards: Vec<f64>,
    /// Reward decomposition per agent: error term, communication term,
    /// distance penalty. Sums to the scalar reward exactly.
    pub reward_terms: Vec<[f64; 3]>,
    /// Task error [x - x*, y - y*, wrapped yaw error] after the step.
    pub error: [f64; 3],
    /// Ground-truth resultant wrench on the payload this step.
    pub resultant: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Header(EpisodeHeader),
    Step(StepRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
}

impl EpisodeLog {
    /// Whether the log ran to the step count promised in its header.
    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.header.steps
    }

    /// Error vector at the final step of a complete log.
    pub fn final_error(&self) -> Result<[f64; 3]> {
        if !self.is_complete() {
            return Err(Error::Log(format!(
                "log has {} of {} steps",
                self.steps.len(),
                self.header.steps
            )));
        }
        Ok(self.steps[self.header.steps - 1].error)
    }

    /// Total reward each agent collected.
    pub fn reward_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.header.agents];
        for step in &self.steps {
            for (s, r) in sums.iter_mut().zip(&step.rewards) {
                *s += r;
            }
        }
        sums
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        let header = serde_json::to_string(&LogLine::Header(self.header.clone()))?;
        writeln!(writer, "{header}")?;
        for step in &self.steps {
            let line = serde_json::to_string(&LogLine::Step(step.clone()))?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line)
                .map_err(|e| Error::Log(format!("line {}: {e}", lineno + 1)))?;
            match parsed {
                LogLine::Header(h) => {
                    if header.is_some() {
                        return Err(Error::Log(format!(
                            "line {}: duplicate header",
                            lineno + 1
                        )));
                    }
                    if h.schema != LOG_SCHEMA_VERSION {
                        return Err(Error::Log(format!(
                            "schema {} unsupported (expected {LOG_SCHEMA_VERSION})",
                            h.schema
                        )));
                    }
                    header = Some(h);
                }
                LogLine::Step(s) => {
                    if header.is_none() {
                        return Err(Error::Log("step record before header".into()));
                    }
                    steps.push(s);
                }
            }
        }
        let header = header.ok_or_else(|| Error::Log("empty log".into()))?;
        Ok(Self { header, steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        self.write_jsonl(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_jsonl(BufReader::new(file))
    }
}

/// Load every `*.jsonl` file in a directory, sorted by file name.
pub fn load_log_dir(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Log(format!("no .jsonl logs in {}", dir.display())));
    }
    paths.iter().map(|p| EpisodeLog::load(p)).collect()
}
