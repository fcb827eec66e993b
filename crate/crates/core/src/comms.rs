//! Neighbor groups, the event trigger, and link-gated exchange.
//!
//! Each control step every agent ranks the others by distance and keeps the
//! `k` closest as its group. A scalar trigger output decides whether the
//! agent opens links to its whole group this step; links are then closed
//! under symmetry so a one-sided trigger still yields a mutual connection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{laplacian_average_step, ConsensusState};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::planar::{Vec2, Wrench2};

/// The `k` agents nearest to `agent_id`, nearest first. Distance ties break
/// toward the lower index so grouping is deterministic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGroup {
    pub agent_id: usize,
    pub members: Vec<usize>,
}

impl NeighborGroup {
    pub fn contains(&self, j: usize) -> bool {
        self.members.contains(&j)
    }
}

/// One directed message delivery, receiver first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommEvent {
    pub receiver: usize,
    pub sender: usize,
}

/// Rank every other agent by Euclidean distance and keep the closest `k`.
pub fn k_nearest_groups(positions: &[Vec2], k: usize) -> Result<Vec<NeighborGroup>> {
    let n = positions.len();
    if k >= n {
        return Err(Error::NeighborCount { k, n });
    }
    let mut groups = Vec::with_capacity(n);
    for (i, &p) in positions.iter().enumerate() {
        let mut candidates: Vec<(f64, usize)> = positions
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, &q)| ((q - p).norm(), j))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        groups.push(NeighborGroup {
            agent_id: i,
            members: candidates[..k].iter().map(|&(_, j)| j).collect(),
        });
    }
    Ok(groups)
}

/// Evaluate the trigger for every agent and build this step's topology.
///
/// Agent `i` opens a link to each group member when its trigger value is
/// at or above zero; zero itself fires. The result is symmetrized: if `j`
/// opened a link to `i`, then `i` also receives from `j`.
pub fn decide_topology(triggers: &[f64], groups: &[NeighborGroup]) -> Result<Topology> {
    if triggers.len() != groups.len() {
        return Err(Error::Dimension {
            expected: groups.len(),
            got: triggers.len(),
        });
    }
    let n = groups.len();
    let mut topology = Topology::empty(n);
    for (i, &alpha) in triggers.iter().enumerate() {
        if !alpha.is_finite() {
            return Err(Error::NonFinite("trigger value"));
        }
        if alpha >= 0.0 {
            for &j in &groups[i].members {
                topology.set(i, j, true);
            }
        }
    }
    topology.symmetrize();
    Ok(topology)
}

/// Every in-group link open, symmetrized.
pub fn full_topology(groups: &[NeighborGroup]) -> Topology {
    let n = groups.len();
    let mut topology = Topology::empty(n);
    for group in groups {
        for &j in &group.members {
            topology.set(group.agent_id, j, true);
        }
    }
    topology.symmetrize();
    topology
}

/// Drop each undirected in-group link with probability `drop_probability`,
/// keeping the result symmetric.
pub fn random_link_drop<R: Rng + ?Sized>(
    groups: &[NeighborGroup],
    drop_probability: f64,
    rng: &mut R,
) -> Topology {
    let mut topology = full_topology(groups);
    let n = topology.n();
    for i in 0..n {
        for j in (i + 1)..n {
            if topology.get(i, j) && rng.random::<f64>() < drop_probability {
                topology.set(i, j, false);
                topology.set(j, i, false);
            }
        }
    }
    topology
}

/// Reset every agent's estimate to its own measured wrench. Run at the start
/// of each control period so the averaging operates on fresh measurements.
pub fn reset_local(wrenches: &[Wrench2]) -> Vec<ConsensusState> {
    wrenches
        .iter()
        .enumerate()
        .map(|(i, w)| ConsensusState::new(i, w.to_array()))
        .collect()
}

/// How a closed link is treated inside the averaging update.
///
/// `EdgeRemoval` drops the missing neighbor from the sum, which preserves
/// the network average and is the default. `ZeroSubstitution` keeps the
/// neighbor in the sum but replaces its value with zero, a literal reading
/// that biases estimates toward zero; it is kept as an ablation and needs
/// the neighbor groups to know who stays in the sum.
#[derive(Clone, Copy, Debug)]
pub enum ExchangeSemantics<'a> {
    EdgeRemoval,
    ZeroSubstitution { groups: &'a [NeighborGroup] },
}

/// Run `iterations` averaging rounds over a fixed gated topology.
///
/// Returns the updated states and the number of ordered receive events,
/// which is the open-link count times the iteration count.
pub fn gated_exchange(
    states: &[ConsensusState],
    topology: &Topology,
    gain: f64,
    iterations: usize,
    semantics: ExchangeSemantics,
) -> Result<(Vec<ConsensusState>, usize)> {
    let events = topology.edge_count() * iterations;
    let mut current = states.to_vec();
    for _ in 0..iterations {
        current = match semantics {
            ExchangeSemantics::EdgeRemoval => laplacian_average_step(&current, topology, gain)?,
            ExchangeSemantics::ZeroSubstitution { groups } => {
                zero_substitution_step(&current, topology, groups, gain)?
            }
        };
    }
    Ok((current, events))
}

fn zero_substitution_step(
    states: &[ConsensusState],
    topology: &Topology,
    groups: &[NeighborGroup],
    gain: f64,
) -> Result<Vec<ConsensusState>> {
    if gain <= 0.0 {
        return Err(Error::NonPositiveGain(gain));
    }
    if states.len() != topology.n() || groups.len() != topology.n() {
        return Err(Error::Dimension {
            expected: topology.n(),
            got: states.len().min(groups.len()),
        });
    }
    let mut next = states.to_vec();
    for (i, out) in next.iter_mut().enumerate() {
        let mut delta = [0.0; 3];
        for &j in &groups[i].members {
            let received = if topology.get(i, j) {
                states[j].value
            } else {
                [0.0; 3]
            };
            for d in 0..3 {
                delta[d] += states[i].value[d] - received[d];
            }
        }
        for d in 0..3 {
            out.value[d] = states[i].value[d] - gain * delta[d];
        }
    }
    Ok(next)
}

/// Directed deliveries implied by the topology: one event per open receive
/// link per exchange round.
pub fn exchange_events(topology: &Topology) -> Vec<CommEvent> {
    topology
        .ordered_edges()
        .into_iter()
        .map(|(receiver, sender)| CommEvent { receiver, sender })
        .collect()
}

/// Single-round gated averaging: each agent receives the raw values of the
/// agents it has open links to and replaces its estimate with the mean of
/// its own value and everything received. Agents with no open links keep
/// their local value. Used by the one-shot exchange baseline, which sends
/// measurements once per control period instead of iterating.
pub fn gated_one_shot_average(
    states: &[ConsensusState],
    topology: &Topology,
) -> Result<Vec<ConsensusState>> {
    if states.len() != topology.n() {
        return Err(Error::Dimension {
            expected: topology.n(),
            got: states.len(),
        });
    }
    let mut next = states.to_vec();
    for (i, out) in next.iter_mut().enumerate() {
        let mut sum = states[i].value;
        let mut count = 1.0;
        for (j, other) in states.iter().enumerate() {
            if topology.get(i, j) {
                for d in 0..3 {
                    sum[d] += other.value[d];
                }
                count += 1.0;
            }
        }
        for d in 0..3 {
            out.value[d] = sum[d] / count;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nearest_groups_rank_by_distance() {
        let positions = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(3.0, 0.0),
            Vec2::new(3.5, 0.0),
        ];
        let groups = k_nearest_groups(&positions, 2).unwrap();
        assert_eq!(groups[0].members, vec![1, 2]);
        assert_eq!(groups[2].members, vec![3, 1]);
        assert_eq!(groups[3].members, vec![2, 1]);
    }

    #[test]
    fn distance_ties_break_to_lower_index() {
        let positions = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 0.0),
        ];
        let groups = k_nearest_groups(&positions, 1).unwrap();
        assert_eq!(groups[0].members, vec![1]);
    }

    #[test]
    fn group_size_must_leave_room() {
        let positions = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)];
        assert!(k_nearest_groups(&positions, 2).is_err());
        assert!(k_nearest_groups(&positions, 1).is_ok());
    }

    #[test]
    fn boundary_trigger_fires_and_symmetrizes() {
        // Agent 0 at the trigger boundary fires; agent 1 does not, but the
        // closure still gives it the reverse link.
        let groups = vec![
            NeighborGroup {
                agent_id: 0,
                members: vec![1],
            },
            NeighborGroup {
                agent_id: 1,
                members: vec![0],
            },
        ];
        let topology = decide_topology(&[0.0, -0.5], &groups).unwrap();
        assert!(topology.get(0, 1));
        assert!(topology.get(1, 0));
        assert_eq!(topology.edge_count(), 2);
    }

    #[test]
    fn negative_triggers_open_nothing() {
        let groups = vec![
            NeighborGroup {
                agent_id: 0,
                members: vec![1],
            },
            NeighborGroup {
                agent_id: 1,
                members: vec![0],
            },
        ];
        let topology = decide_topology(&[-0.1, -1.0], &groups).unwrap();
        assert_eq!(topology.edge_count(), 0);
    }

    #[test]
    fn non_finite_trigger_rejected() {
        let groups = vec![NeighborGroup {
            agent_id: 0,
            members: vec![],
        }];
        assert!(decide_topology(&[f64::NAN], &groups).is_err());
    }

    #[test]
    fn one_shot_average_mixes_only_open_links() {
        let states = vec![
            ConsensusState::new(0, [3.0, 0.0, 1.0]),
            ConsensusState::new(1, [1.0, 2.0, -1.0]),
            ConsensusState::new(2, [5.0, 5.0, 5.0]),
        ];
        let topology =
            Topology::from_rows(&[vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]]).unwrap();
        let next = gated_one_shot_average(&states, &topology).unwrap();
        assert_abs_diff_eq!(next[0].value[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next[0].value[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next[1].value[1], 1.0, epsilon = 1e-12);
        assert_eq!(next[2].value, [5.0, 5.0, 5.0]);
    }

    #[test]
    fn reset_uses_measured_wrenches() {
        let wrenches = vec![
            Wrench2::new(Vec2::new(1.0, 2.0), 3.0),
            Wrench2::new(Vec2::new(-1.0, 0.0), 0.5),
        ];
        let states = reset_local(&wrenches);
        assert_eq!(states[0].value, [1.0, 2.0, 3.0]);
        assert_eq!(states[1].value, [-1.0, 0.0, 0.5]);
        assert_eq!(states[1].agent_id, 1);
    }

    #[test]
    fn random_drop_preserves_symmetry() {
        let positions: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let groups = k_nearest_groups(&positions, 2).unwrap();
        let mut rng = stream_rng(7, "drop-test", 0);
        for _ in 0..20 {
            let topology = random_link_drop(&groups, 0.5, &mut rng);
            assert!(topology.is_symmetric());
        }
    }

    #[test]
    fn full_drop_probability_clears_everything() {
        let positions: Vec<Vec2> = (0..4).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let groups = k_nearest_groups(&positions, 1).unwrap();
        let mut rng = stream_rng(7, "drop-test", 1);
        let topology = random_link_drop(&groups, 1.0, &mut rng);
        assert_eq!(topology.edge_count(), 0);
        let full = random_link_drop(&groups, 0.0, &mut rng);
        assert_eq!(full, full_topology(&groups));
    }

    #[test]
    fn exchange_on_zero_topology_is_identity() {
        let states = vec![
            ConsensusState::new(0, [1.0, 2.0, 3.0]),
            ConsensusState::new(1, [4.0, 5.0, 6.0]),
        ];
        let (next, events) = gated_exchange(
            &states,
            &Topology::empty(2),
            0.5,
            3,
            ExchangeSemantics::EdgeRemoval,
        )
        .unwrap();
        assert_eq!(next, states);
        assert_eq!(events, 0);
    }

    #[test]
    fn mutual_pair_two_rounds_counts_four_events() {
        let states = vec![
            ConsensusState::new(0, [1.0, 0.0, 0.0]),
            ConsensusState::new(1, [3.0, 0.0, 0.0]),
        ];
        let topology = Topology::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        let (next, events) =
            gated_exchange(&states, &topology, 0.5, 2, ExchangeSemantics::EdgeRemoval).unwrap();
        assert_eq!(events, 4);
        // Half the resultant wrench (4, 0, 0): gain 1/2 on a pair averages
        // exactly, and further rounds hold steady.
        assert_abs_diff_eq!(next[0].value[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next[1].value[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_substitution_decays_isolated_estimates() {
        // Agent 0's only group member never opens a link; the literal
        // reading mixes in zeros and drags the estimate down.
        let groups = vec![
            NeighborGroup {
                agent_id: 0,
                members: vec![1],
            },
            NeighborGroup {
                agent_id: 1,
                members: vec![0],
            },
        ];
        let states = vec![
            ConsensusState::new(0, [2.0, 2.0, 2.0]),
            ConsensusState::new(1, [2.0, 2.0, 2.0]),
        ];
        let (next, events) = gated_exchange(
            &states,
            &Topology::empty(2),
            0.25,
            1,
            ExchangeSemantics::ZeroSubstitution { groups: &groups },
        )
        .unwrap();
        assert_eq!(events, 0);
        for s in &next {
            for d in 0..3 {
                assert_abs_diff_eq!(s.value[d], 1.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exchange_events_match_open_links() {
        let topology = Topology::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        let events = exchange_events(&topology);
        assert_eq!(events.len(), 2);
        assert!(events.contains(&CommEvent {
            receiver: 0,
            sender: 1
        }));
    }
}
