//! Task environments: spawn rules, observation construction, reward, and
//! the per-step protocol tying grouping, triggering, consensus, and physics
//! together.
//!
//! Each control step runs in a fixed order: group by distance, decide the
//! topology from the previous step's trigger outputs, reset the consensus
//! values to the freshly measured wrenches, run the gated exchange rounds,
//! evaluate the policies on observations that include the updated estimates,
//! and finally advance the physics for one control period.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::comms::{
    decide_topology, exchange_events, full_topology, gated_exchange, gated_one_shot_average,
    k_nearest_groups, random_link_drop, reset_local, ExchangeSemantics, NeighborGroup,
};
use crate::config::{CommMode, SpawnRule, TaskConfig};
use crate::consensus::ConsensusState;
use crate::episode::{EpisodeHeader, EpisodeLog, StepRecord, LOG_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::physics::{contact_query, step_world, AgentBody, Command, PayloadState, World};
use crate::planar::{wrap_angle, Pose2, Vec2, Wrench2};
use crate::rng::stream_rng;

/// Observation length fed to a policy: 9 task values plus the 3-component
/// consensus estimate. Independent of the team size.
pub const POLICY_INPUT_DIM: usize = 12;
/// Policy output length: linear command, angular command, trigger.
pub const ACTION_DIM: usize = 3;

const SPAWN_ATTEMPTS: usize = 1000;

/// Anything that maps a policy input to an action in `[-1, 1]^3`.
pub trait Policy {
    fn act(&mut self, input: &[f64; POLICY_INPUT_DIM]) -> [f64; ACTION_DIM];
}

/// Always outputs zeros. The zero trigger sits on the firing boundary, so
/// this policy communicates every step.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _input: &[f64; POLICY_INPUT_DIM]) -> [f64; ACTION_DIM] {
        [0.0; ACTION_DIM]
    }
}

/// Uniform random actions, seeded.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64, agent_index: u64) -> Self {
        Self {
            rng: stream_rng(seed, "random-policy", agent_index),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _input: &[f64; POLICY_INPUT_DIM]) -> [f64; ACTION_DIM] {
        [
            self.rng.random_range(-1.0..=1.0),
            self.rng.random_range(-1.0..=1.0),
            self.rng.random_range(-1.0..=1.0),
        ]
    }
}

/// Communication work for one control step, fixed before the policies run.
#[derive(Clone, Debug)]
pub struct StepPrep {
    pub groups: Vec<NeighborGroup>,
    pub topology: Topology,
    pub comm_events: Vec<[usize; 2]>,
}

/// Result of applying one joint action.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub record: StepRecord,
}

pub struct TaskEnv {
    config: TaskConfig,
    comm_mode: CommMode,
    seed: u64,
    world: World,
    consensus: Vec<ConsensusState>,
    /// Trigger outputs from the previous step; this step's topology is
    /// decided from these, never from the current step's actions.
    triggers: Vec<f64>,
    link_rng: ChaCha8Rng,
    step_index: usize,
    pending: Option<StepPrep>,
}

impl TaskEnv {
    pub fn new(config: &TaskConfig, comm_mode: CommMode, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut env = Self {
            config: config.clone(),
            comm_mode,
            seed,
            world: World::new(
                PayloadState::new(
                    config.payload.shape.vertices()?,
                    config.payload.mass,
                    config.payload.inertia,
                    Pose2::default(),
                    Pose2::default(),
                )?,
                Vec::new(),
            ),
            consensus: Vec::new(),
            triggers: Vec::new(),
            link_rng: stream_rng(seed, "link-drop", 0),
            step_index: 0,
            pending: None,
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Re-randomize the world per the task's spawn rule. Consensus values
    /// are zeroed and initial triggers are set to fire, since agents start
    /// with no information.
    pub fn reset(&mut self, seed: u64) -> Result<()> {
        self.seed = seed;
        let mut rng = stream_rng(seed, "spawn", 0);
        self.link_rng = stream_rng(seed, "link-drop", 0);

        let shape = self.config.payload.shape.vertices()?;
        let n = self.config.agents;
        let (payload_pose, desired, agent_positions) = match self.config.spawn {
            SpawnRule::Transport {
                region_min,
                region_max,
            } => {
                let sample = |rng: &mut ChaCha8Rng| {
                    Vec2::new(
                        rng.random_range(region_min[0]..=region_max[0]),
                        rng.random_range(region_min[1]..=region_max[1]),
                    )
                };
                let payload_position = sample(&mut rng);
                let desired_position = sample(&mut rng);
                let positions: Vec<Vec2> = (0..n).map(|_| sample(&mut rng)).collect();
                (
                    Pose2::new(payload_position, 0.0),
                    Pose2::new(desired_position, 0.0),
                    positions,
                )
            }
            SpawnRule::Rotation {
                center,
                yaw_min,
                yaw_max,
                ref desired_yaws,
                ref agent_spots,
            } => {
                let yaw = rng.random_range(yaw_min..=yaw_max);
                let desired_yaw = desired_yaws[rng.random_range(0..desired_yaws.len())];
                let positions: Vec<Vec2> = (0..n)
                    .map(|_| {
                        let spot = agent_spots[rng.random_range(0..agent_spots.len())];
                        Vec2::new(spot[0], spot[1])
                    })
                    .collect();
                (
                    Pose2::new(Vec2::new(center[0], center[1]), yaw),
                    Pose2::new(Vec2::new(center[0], center[1]), desired_yaw),
                    positions,
                )
            }
        };

        let mut payload = PayloadState::new(
            shape,
            self.config.payload.mass,
            self.config.payload.inertia,
            payload_pose,
            desired,
        )?;
        payload.pinned = self.config.spawn.is_rotation();

        let mut agents = Vec::with_capacity(n);
        for mut position in agent_positions {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let mut agent = AgentBody::new(
                Pose2::new(position, yaw),
                self.config.agent.radius,
                self.config.agent.mass,
                self.config.agent.inertia,
            )?
            .with_limits(
                self.config.commands.max_linear,
                self.config.commands.max_angular,
            );
            let mut attempts = 0;
            while contact_query(&payload, &agent).is_some() {
                attempts += 1;
                if attempts > SPAWN_ATTEMPTS {
                    return Err(Error::Config(
                        "could not place an agent clear of the payload; \
                         spawn region or spots leave no room"
                            .into(),
                    ));
                }
                position = match self.config.spawn {
                    SpawnRule::Transport {
                        region_min,
                        region_max,
                    } => Vec2::new(
                        rng.random_range(region_min[0]..=region_max[0]),
                        rng.random_range(region_min[1]..=region_max[1]),
                    ),
                    SpawnRule::Rotation { ref agent_spots, .. } => {
                        let spot = agent_spots[rng.random_range(0..agent_spots.len())];
                        Vec2::new(spot[0], spot[1])
                    }
                };
                agent.pose.position = position;
            }
            agents.push(agent);
        }

        self.world = World::new(payload, agents);
        self.world.contact = self.config.physics.contact;
        self.world.ground = self.config.physics.ground;
        self.world.substep = self.config.physics.substep;
        self.world.max_penetration = self.config.physics.max_penetration;

        self.consensus = (0..n).map(|i| ConsensusState::new(i, [0.0; 3])).collect();
        self.triggers = vec![1.0; n];
        self.step_index = 0;
        self.pending = None;
        Ok(())
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn comm_mode(&self) -> CommMode {
        self.comm_mode
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn consensus(&self) -> &[ConsensusState] {
        &self.consensus
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Task error [x - x*, y - y*, wrapped yaw error].
    pub fn task_error(&self) -> [f64; 3] {
        let payload = &self.world.payload;
        let dp = payload.pose.position - payload.desired.position;
        [
            dp.x,
            dp.y,
            wrap_angle(payload.pose.yaw - payload.desired.yaw),
        ]
    }

    /// Run the communication phases of one control step: grouping, topology
    /// decision from the previous triggers, consensus reset to the measured
    /// wrenches, and the gated exchange rounds. Must be followed by
    /// `apply_actions`.
    pub fn prepare_step(&mut self) -> Result<&StepPrep> {
        if self.pending.is_some() {
            return Err(Error::Sequence(
                "prepare_step called twice without apply_actions",
            ));
        }
        let positions: Vec<Vec2> = self
            .world
            .agents
            .iter()
            .map(|a| a.pose.position)
            .collect();
        let groups = k_nearest_groups(&positions, self.config.group_size)?;

        let topology = match self.comm_mode {
            CommMode::Full => full_topology(&groups),
            CommMode::Nocom => Topology::empty(self.config.agents),
            CommMode::Random => random_link_drop(&groups, 0.5, &mut self.link_rng),
            CommMode::Ours | CommMode::Etc => decide_topology(&self.triggers, &groups)?,
        };

        let wrenches: Vec<Wrench2> = self
            .world
            .agents
            .iter()
            .map(|a| a.applied_wrench)
            .collect();
        let local = reset_local(&wrenches);

        self.consensus = match self.comm_mode {
            CommMode::Etc => gated_one_shot_average(&local, &topology)?,
            _ => {
                let (states, _events) = gated_exchange(
                    &local,
                    &topology,
                    self.config.consensus_gain,
                    self.config.consensus_iterations(),
                    ExchangeSemantics::EdgeRemoval,
                )?;
                states
            }
        };

        let comm_events = exchange_events(&topology)
            .into_iter()
            .map(|e| [e.receiver, e.sender])
            .collect();
        self.pending = Some(StepPrep {
            groups,
            topology,
            comm_events,
        });
        Ok(self.pending.as_ref().unwrap())
    }

    /// Policy inputs for every agent: task error, payload twist, own pose,
    /// and the consensus estimate refreshed by `prepare_step`.
    pub fn observations(&self) -> Vec<[f64; POLICY_INPUT_DIM]> {
        let error = self.task_error();
        let twist = self.world.payload.twist;
        self.world
            .agents
            .iter()
            .zip(&self.consensus)
            .map(|(agent, c)| {
                [
                    error[0],
                    error[1],
                    error[2],
                    twist.linear.x,
                    twist.linear.y,
                    twist.angular,
                    agent.pose.position.x,
                    agent.pose.position.y,
                    wrap_angle(agent.pose.yaw),
                    c.value[0],
                    c.value[1],
                    c.value[2],
                ]
            })
            .collect()
    }

    /// Reward for agent `i` in the current (post-step) world under the given
    /// topology: negative error norm, a charge per open receive link, and a
    /// flat penalty when the agent strays from the payload. Returns the
    /// scalar and the three terms.
    pub fn compute_reward(&self, i: usize, topology: &Topology) -> (f64, [f64; 3]) {
        let error = self.task_error();
        let error_norm = (error[0] * error[0] + error[1] * error[1] + error[2] * error[2]).sqrt();
        let links = topology.degree(i) as f64;
        let comm_term = -self.config.reward.comm_weight * links;
        let distance = (self.world.agents[i].pose.position - self.world.payload.pose.position)
            .norm();
        let distance_term = if distance > self.config.reward.distance_threshold {
            -self.config.reward.distance_weight
        } else {
            0.0
        };
        let terms = [-error_norm, comm_term, distance_term];
        (terms.iter().sum(), terms)
    }

    /// Scale the policy outputs to commands, advance the physics one control
    /// period, and score the outcome. Actions are clamped to `[-1, 1]`;
    /// non-finite actions abort. The trigger components are kept for the
    /// next step's topology decision.
    pub fn apply_actions(&mut self, actions: &[[f64; ACTION_DIM]]) -> Result<StepOutcome> {
        let prep = self
            .pending
            .take()
            .ok_or(Error::Sequence("apply_actions called without prepare_step"))?;
        if actions.len() != self.config.agents {
            return Err(Error::Dimension {
                expected: self.config.agents,
                got: actions.len(),
            });
        }
        for action in actions {
            if !action.iter().all(|a| a.is_finite()) {
                return Err(Error::NonFinite("policy action"));
            }
        }

        for (agent, action) in self.world.agents.iter_mut().zip(actions) {
            agent.set_command(Command {
                linear: action[0].clamp(-1.0, 1.0) * self.config.commands.max_linear,
                angular: action[1].clamp(-1.0, 1.0) * self.config.commands.max_angular,
            });
        }
        step_world(&mut self.world, self.config.control_period)?;

        for (trigger, action) in self.triggers.iter_mut().zip(actions) {
            *trigger = action[2].clamp(-1.0, 1.0);
        }

        let mut rewards = Vec::with_capacity(self.config.agents);
        let mut reward_terms = Vec::with_capacity(self.config.agents);
        for i in 0..self.config.agents {
            let (r, terms) = self.compute_reward(i, &prep.topology);
            rewards.push(r);
            reward_terms.push(terms);
        }

        let resultant = crate::physics::resultant_wrench(&self.world.agents);
        let record = StepRecord {
            step: self.step_index,
            payload_pose: self.world.payload.pose.to_array(),
            payload_twist: self.world.payload.twist.to_array(),
            agent_poses: self.world.agents.iter().map(|a| a.pose.to_array()).collect(),
            wrenches: self
                .world
                .agents
                .iter()
                .map(|a| a.applied_wrench.to_array())
                .collect(),
            consensus: self.consensus.iter().map(|c| c.value).collect(),
            gamma: prep.topology.rows(),
            comm_events: prep.comm_events,
            actions: actions.to_vec(),
            rewards: rewards.clone(),
            reward_terms,
            error: self.task_error(),
            resultant: resultant.to_array(),
        };
        self.step_index += 1;
        Ok(StepOutcome { rewards, record })
    }

    fn header(&self) -> EpisodeHeader {
        EpisodeHeader {
            schema: LOG_SCHEMA_VERSION,
            task: if self.config.spawn.is_rotation() {
                "rotation".into()
            } else {
                "transport".into()
            },
            comm_mode: self.comm_mode,
            agents: self.config.agents,
            group_size: self.config.group_size,
            steps: self.config.steps,
            control_period: self.config.control_period,
            consensus_period: self.config.consensus_period,
            consensus_gain: self.config.consensus_gain,
            seed: self.seed,
            initial_payload: self.world.payload.pose.to_array(),
            desired: self.world.payload.desired.to_array(),
            initial_agents: self
                .world
                .agents
                .iter()
                .map(|a| a.pose.to_array())
                .collect(),
        }
    }
}

/// Play one full episode and collect the log.
pub fn run_episode(
    config: &TaskConfig,
    policies: &mut [Box<dyn Policy>],
    comm_mode: CommMode,
    seed: u64,
) -> Result<EpisodeLog> {
    if policies.len() != config.agents {
        return Err(Error::Dimension {
            expected: config.agents,
            got: policies.len(),
        });
    }
    let mut env = TaskEnv::new(config, comm_mode, seed)?;
    let header = env.header();
    let mut steps = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        env.prepare_step()?;
        let inputs = env.observations();
        let actions: Vec<[f64; ACTION_DIM]> = policies
            .iter_mut()
            .zip(&inputs)
            .map(|(policy, input)| policy.act(input))
            .collect();
        let outcome = env.apply_actions(&actions)?;
        steps.push(outcome.record);
    }
    Ok(EpisodeLog { header, steps })
}
