//! Run configuration: task definition, training hyperparameters, and
//! evaluation settings, loadable from TOML.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{isosceles_triangle, polygon_is_convex_ccw, rectangle, ContactParams, GroundParams};
use crate::planar::Vec2;

/// Who talks to whom each control step.
///
/// `Ours` runs the learned trigger; `Full` opens every in-group link;
/// `Nocom` opens none; `Etc` gates a single raw-measurement broadcast on the
/// trigger without running consensus iterations; `Random` opens in-group
/// links and then drops each undirected link with probability one half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    Full,
    Nocom,
    Etc,
    Random,
    Ours,
}

impl CommMode {
    pub const ALL: [CommMode; 5] = [
        CommMode::Full,
        CommMode::Nocom,
        CommMode::Etc,
        CommMode::Random,
        CommMode::Ours,
    ];
}

impl fmt::Display for CommMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CommMode::Full => "full",
            CommMode::Nocom => "nocom",
            CommMode::Etc => "etc",
            CommMode::Random => "random",
            CommMode::Ours => "ours",
        };
        f.write_str(name)
    }
}

impl FromStr for CommMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(CommMode::Full),
            "nocom" => Ok(CommMode::Nocom),
            "etc" => Ok(CommMode::Etc),
            "random" => Ok(CommMode::Random),
            "ours" => Ok(CommMode::Ours),
            other => Err(Error::Config(format!(
                "unknown comm mode '{other}' (expected full|nocom|etc|random|ours)"
            ))),
        }
    }
}

/// Payload footprint, resolved to body-frame vertices on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeConfig {
    IsoscelesTriangle { base: f64, side: f64 },
    Rectangle { width: f64, height: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl ShapeConfig {
    pub fn vertices(&self) -> Result<Vec<Vec2>> {
        let vertices = match *self {
            ShapeConfig::IsoscelesTriangle { base, side } => isosceles_triangle(base, side)?,
            ShapeConfig::Rectangle { width, height } => {
                if width <= 0.0 || height <= 0.0 {
                    return Err(Error::Config(format!(
                        "rectangle {width} x {height} must have positive sides"
                    )));
                }
                rectangle(width, height)
            }
            ShapeConfig::Polygon { ref vertices } => {
                let v: Vec<Vec2> = vertices.iter().map(|&[x, y]| Vec2::new(x, y)).collect();
                if !polygon_is_convex_ccw(&v) {
                    return Err(Error::Config(
                        "polygon must be convex and counterclockwise".into(),
                    ));
                }
                v
            }
        };
        Ok(vertices)
    }

    /// Largest vertex distance from the body origin.
    pub fn circumradius(&self) -> Result<f64> {
        Ok(self
            .vertices()?
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max))
    }
}

/// Where bodies start and what the goal is. The variant fixes the task kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpawnRule {
    /// Payload, agents, and the desired position all drawn uniformly from an
    /// axis-aligned region; desired yaw equals the initial yaw.
    Transport {
        region_min: [f64; 2],
        region_max: [f64; 2],
    },
    /// Payload pinned at `center` with initial yaw uniform in
    /// `[yaw_min, yaw_max]`; the desired yaw is drawn uniformly from
    /// `desired_yaws`; each agent lands on one of `agent_spots` with equal
    /// probability.
    Rotation {
        center: [f64; 2],
        yaw_min: f64,
        yaw_max: f64,
        desired_yaws: Vec<f64>,
        agent_spots: Vec<[f64; 2]>,
    },
}

impl SpawnRule {
    pub fn is_rotation(&self) -> bool {
        matches!(self, SpawnRule::Rotation { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    pub radius: f64,
    pub mass: f64,
    pub inertia: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            radius: 0.10,
            mass: 1.1,
            inertia: 5.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadParams {
    pub shape: ShapeConfig,
    pub mass: f64,
    pub inertia: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandBounds {
    pub max_linear: f64,
    pub max_angular: f64,
}

/// Weights of the three reward terms: error norm, per-link communication
/// charge, and the flat penalty for straying farther than
/// `distance_threshold` from the payload center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub comm_weight: f64,
    pub distance_weight: f64,
    pub distance_threshold: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            comm_weight: 0.02,
            distance_weight: 0.1,
            distance_threshold: 1.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    pub contact: ContactParams,
    pub ground: GroundParams,
    pub substep: f64,
    pub max_penetration: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            contact: ContactParams::default(),
            ground: GroundParams::default(),
            substep: 0.01,
            max_penetration: 0.5,
        }
    }
}

/// Everything that defines one task instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    /// Team size N.
    pub agents: usize,
    /// Neighbor group size K.
    pub group_size: usize,
    /// Control steps per episode.
    pub steps: usize,
    /// Control period, s.
    pub control_period: f64,
    /// Consensus iteration period, s; the iteration count per control step
    /// is `control_period / consensus_period`.
    pub consensus_period: f64,
    /// Averaging gain.
    pub consensus_gain: f64,
    pub spawn: SpawnRule,
    pub payload: PayloadParams,
    #[serde(default)]
    pub agent: AgentParams,
    pub commands: CommandBounds,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub physics: PhysicsParams,
}

impl TaskConfig {
    /// Two agents pushing a triangular payload toward a random goal pose.
    pub fn transport() -> Self {
        Self {
            agents: 2,
            group_size: 1,
            steps: 150,
            control_period: 0.1,
            consensus_period: 0.05,
            consensus_gain: 0.5,
            spawn: SpawnRule::Transport {
                region_min: [2.0, 2.0],
                region_max: [3.0, 3.0],
            },
            payload: PayloadParams {
                shape: ShapeConfig::IsoscelesTriangle {
                    base: 0.4,
                    side: 1.0,
                },
                mass: 10.0,
                inertia: 6.0e-2,
            },
            agent: AgentParams::default(),
            commands: CommandBounds {
                max_linear: 0.4,
                max_angular: 2.0,
            },
            reward: RewardParams::default(),
            physics: PhysicsParams::default(),
        }
    }

    /// Five agents spinning a pinned rectangular payload to a target yaw.
    pub fn rotation() -> Self {
        Self {
            agents: 5,
            group_size: 2,
            steps: 200,
            control_period: 0.1,
            consensus_period: 0.02,
            consensus_gain: 0.2,
            spawn: SpawnRule::Rotation {
                center: [2.0, 2.0],
                yaw_min: 0.4 * PI,
                yaw_max: 0.6 * PI,
                desired_yaws: vec![0.0, PI],
                agent_spots: vec![[1.35, 1.0], [1.35, 3.0]],
            },
            payload: PayloadParams {
                shape: ShapeConfig::Rectangle {
                    width: 1.4,
                    height: 0.3,
                },
                mass: 20.0,
                inertia: 7.3,
            },
            agent: AgentParams::default(),
            commands: CommandBounds {
                max_linear: 0.2,
                max_angular: 2.0,
            },
            reward: RewardParams::default(),
            physics: PhysicsParams::default(),
        }
    }

    /// Consensus iterations per control step.
    pub fn consensus_iterations(&self) -> usize {
        (self.control_period / self.consensus_period).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents < 2 {
            return Err(Error::Config(format!(
                "need at least 2 agents, got {}",
                self.agents
            )));
        }
        if self.group_size < 1 || self.group_size >= self.agents {
            return Err(Error::Config(format!(
                "group size {} must satisfy 1 <= K < N = {}",
                self.group_size, self.agents
            )));
        }
        if self.steps < 1 {
            return Err(Error::Config("episode needs at least one step".into()));
        }
        for (name, v) in [
            ("control_period", self.control_period),
            ("consensus_period", self.consensus_period),
            ("consensus_gain", self.consensus_gain),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        let iters = self.control_period / self.consensus_period;
        if (iters - iters.round()).abs() > 1e-9 || iters.round() < 1.0 {
            return Err(Error::Config(format!(
                "control period {} must be a whole multiple of consensus period {}",
                self.control_period, self.consensus_period
            )));
        }
        let substeps = self.control_period / self.physics.substep;
        if (substeps - substeps.round()).abs() > 1e-9 || substeps.round() < 1.0 {
            return Err(Error::Config(format!(
                "control period {} must be a whole multiple of the physics substep {}",
                self.control_period, self.physics.substep
            )));
        }
        if self.consensus_gain >= 2.0 / self.agents as f64 {
            log::warn!(
                "consensus gain {} is outside the guaranteed range (0, {:.3}) for {} agents",
                self.consensus_gain,
                2.0 / self.agents as f64,
                self.agents
            );
        }
        let circumradius = self.payload.shape.circumradius()?;
        if self.payload.mass <= 0.0 || self.payload.inertia <= 0.0 {
            return Err(Error::Config(
                "payload mass and inertia must be positive".into(),
            ));
        }
        if let SpawnRule::Transport {
            region_min,
            region_max,
        } = self.spawn
        {
            let width = region_max[0] - region_min[0];
            let height = region_max[1] - region_min[1];
            if width <= 0.0 || height <= 0.0 {
                return Err(Error::Config("spawn region has non-positive extent".into()));
            }
            if circumradius + 2.0 * self.agent.radius > width.min(height) {
                return Err(Error::Config(format!(
                    "spawn region {width} x {height} m cannot fit the payload \
                     (circumradius {circumradius:.3}) plus an agent"
                )));
            }
        }
        if let SpawnRule::Rotation {
            ref desired_yaws,
            ref agent_spots,
            yaw_min,
            yaw_max,
            ..
        } = self.spawn
        {
            if desired_yaws.is_empty() || agent_spots.is_empty() {
                return Err(Error::Config(
                    "rotation spawn needs desired yaws and agent spots".into(),
                ));
            }
            if yaw_max < yaw_min {
                return Err(Error::Config(format!(
                    "yaw range [{yaw_min}, {yaw_max}] is inverted"
                )));
            }
        }
        Ok(())
    }
}

/// Learner hyperparameters. Defaults are desk scale; the full-scale preset
/// files override episode count and batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub discount: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Soft target-network blend per update.
    pub target_rate: f64,
    pub hidden_layers: Vec<usize>,
    /// Exploration noise scale at episode 0, decayed linearly to
    /// `noise_end` by the final episode.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Episodes collected before any gradient update.
    pub warmup_episodes: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    /// Episodes between checkpoint files (0 disables periodic checkpoints;
    /// the final checkpoint is always written).
    pub checkpoint_every: usize,
    /// One actor/critic pair shared by all agents instead of per-agent nets.
    pub share_parameters: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            discount: 0.99,
            actor_lr: 1.0e-4,
            critic_lr: 1.0e-3,
            target_rate: 0.01,
            hidden_layers: vec![64, 64, 64, 64],
            noise_start: 0.3,
            noise_end: 0.05,
            warmup_episodes: 10,
            train_every: 1,
            checkpoint_every: 0,
            share_parameters: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 || self.batch_size < 1 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config(
                "episodes and batch size must be positive and the buffer must hold a batch".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) && self.discount != 1.0 {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1]",
                self.discount
            )));
        }
        if !(0.0..=1.0).contains(&self.target_rate) {
            return Err(Error::Config(format!(
                "target rate {} outside [0, 1]",
                self.target_rate
            )));
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.train_every == 0 {
            return Err(Error::Config("train_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Trials per evaluation cell.
    pub trials: usize,
    /// Yaw band counted as reaching the rotation goal, degrees.
    pub yaw_tolerance_deg: f64,
    /// Consecutive in-band steps required before the entry time counts.
    pub sustain_steps: usize,
    /// Final position error under this counts as transport success, m.
    pub position_threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            yaw_tolerance_deg: 10.0,
            sustain_steps: 5,
            position_threshold: 0.1,
            seed: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        if self.yaw_tolerance_deg <= 0.0 || self.position_threshold <= 0.0 {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.sustain_steps == 0 {
            return Err(Error::Config("sustain_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Top-level config file: a task plus optional training and evaluation
/// tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub task: TaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Config {
    pub fn transport() -> Self {
        Self {
            task: TaskConfig::transport(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn rotation() -> Self {
        Self {
            task: TaskConfig::rotation(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::TomlParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::TomlParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }
}
