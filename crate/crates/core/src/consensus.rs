//! Distributed averaging of per-agent wrench estimates.
//!
//! Each agent holds a 3-vector `[f_x, f_y, tau]`. One consensus iteration
//! moves every value toward the mean of its neighbors:
//!
//! ```text
//! c_i <- c_i - k * sum_{j in N_i} (c_i - c_j)
//! ```
//!
//! Stacked over all agents this reads `c <- (I - k L) c` with `L` the graph
//! Laplacian. Over an undirected connected topology with `0 < k < 2/n` the
//! iteration converges to the network average, and the average itself is
//! preserved exactly at every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{is_connected, Topology};

pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

/// One agent's running estimate of the payload wrench average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub agent_id: usize,
    pub value: [f64; 3],
}

impl ConsensusState {
    pub fn new(agent_id: usize, value: [f64; 3]) -> Self {
        Self { agent_id, value }
    }
}

/// Verdict from an offline convergence run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Max absolute deviation from the true average after the last step.
    pub final_deviation: f64,
    /// Steps actually executed.
    pub steps: usize,
    pub converged: bool,
    /// Whether the gain satisfied the sufficient bound `k < 2/n`.
    pub within_gain_bound: bool,
    /// Whether the (symmetrized) topology was connected throughout.
    pub connected: bool,
}

/// Apply one synchronous averaging step to every agent.
///
/// Uses the symmetrized topology so information flows both ways along any
/// edge. Fails on a non-positive gain or mismatched state count.
pub fn laplacian_average_step(
    states: &[ConsensusState],
    topology: &Topology,
    gain: f64,
) -> Result<Vec<ConsensusState>> {
    if gain <= 0.0 {
        return Err(Error::NonPositiveGain(gain));
    }
    if states.len() != topology.n() {
        return Err(Error::Dimension {
            expected: topology.n(),
            got: states.len(),
        });
    }
    let mut closed = topology.clone();
    closed.symmetrize();
    let mut next = states.to_vec();
    for (i, out) in next.iter_mut().enumerate() {
        let mut delta = [0.0; 3];
        for (j, other) in states.iter().enumerate() {
            if closed.get(i, j) {
                for d in 0..3 {
                    delta[d] += states[i].value[d] - other.value[d];
                }
            }
        }
        for d in 0..3 {
            out.value[d] = states[i].value[d] - gain * delta[d];
        }
    }
    Ok(next)
}

/// Run the iteration on a fixed topology until every component is within
/// `tolerance` of the true average, or `max_steps` elapse.
pub fn converges_to_average(
    initial: &[ConsensusState],
    topology: &Topology,
    gain: f64,
    max_steps: usize,
    tolerance: f64,
) -> Result<ConvergenceReport> {
    let n = initial.len();
    if n == 0 {
        return Err(Error::Dimension {
            expected: topology.n(),
            got: 0,
        });
    }
    let mut target = [0.0; 3];
    for s in initial {
        for d in 0..3 {
            target[d] += s.value[d];
        }
    }
    for t in &mut target {
        *t /= n as f64;
    }

    let within_gain_bound = gain > 0.0 && gain < 2.0 / n as f64;
    let connected = is_connected(topology);

    let deviation = |states: &[ConsensusState]| -> f64 {
        states
            .iter()
            .flat_map(|s| (0..3).map(move |d| (s.value[d] - target[d]).abs()))
            .fold(0.0, f64::max)
    };

    let mut states = initial.to_vec();
    let mut steps = 0;
    let mut dev = deviation(&states);
    while dev > tolerance && steps < max_steps {
        states = laplacian_average_step(&states, topology, gain)?;
        steps += 1;
        dev = deviation(&states);
    }
    Ok(ConvergenceReport {
        final_deviation: dev,
        steps,
        converged: dev <= tolerance,
        within_gain_bound,
        connected,
    })
}

/// Network average of the current states, the quantity consensus preserves.
pub fn network_average(states: &[ConsensusState]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    for s in states {
        for d in 0..3 {
            sum[d] += s.value[d];
        }
    }
    if !states.is_empty() {
        for v in &mut sum {
            *v /= states.len() as f64;
        }
    }
    sum
}
