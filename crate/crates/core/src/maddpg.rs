//! Multi-agent actor-critic training: per-agent actors with centralized
//! critics, replay, target networks, and the episode/update loop.
//!
//! Critics see every agent's observation and action, so they are only used
//! while training. Execution needs nothing but each agent's own actor; the
//! [`ActorPolicy`] adapter is the only bridge from a checkpoint to the
//! environment and carries no critic.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{Checkpoint, LearnerSnapshot};
use crate::config::{CommMode, Config, EvalConfig, TaskConfig, TrainConfig};
use crate::env::{Policy, TaskEnv, ACTION_DIM, POLICY_INPUT_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Matrix, Mlp, OutputActivation};
use crate::rng::{derive_seed, stream_rng};

/// One replay record: the joint state the team saw, what it did, and what
/// followed. Observations already contain each agent's consensus vector, so
/// replayed critic inputs match what the actors actually saw.
#[derive(Clone, Debug)]
pub struct Transition {
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<f64>,
    pub terminal: bool,
}

/// Ring buffer over transitions with a seeded uniform sampler.
pub struct ReplayBuffer {
    capacity: usize,
    agents: usize,
    slots: Vec<Transition>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, agents: usize, seed: u64) -> Result<Self> {
        if capacity == 0 || agents == 0 {
            return Err(Error::Config(
                "replay buffer needs positive capacity and team size".into(),
            ));
        }
        Ok(Self {
            capacity,
            agents,
            slots: Vec::new(),
            cursor: 0,
            rng: stream_rng(seed, "replay-sampler", 0),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        let n = self.agents;
        if transition.observations.len() != n * POLICY_INPUT_DIM
            || transition.next_observations.len() != n * POLICY_INPUT_DIM
            || transition.actions.len() != n * ACTION_DIM
            || transition.rewards.len() != n
        {
            return Err(Error::Dimension {
                expected: n * POLICY_INPUT_DIM,
                got: transition.observations.len(),
            });
        }
        if self.slots.len() < self.capacity {
            self.slots.push(transition);
        } else {
            self.slots[self.cursor] = transition;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.slots[index]
    }

    /// Uniform indices with replacement; errors until the buffer holds at
    /// least one batch.
    pub fn sample_indices(&mut self, batch: usize) -> Result<Vec<usize>> {
        if self.slots.len() < batch {
            return Err(Error::Training(format!(
                "replay holds {} transitions, batch needs {batch}",
                self.slots.len()
            )));
        }
        let len = self.slots.len();
        Ok((0..batch).map(|_| self.rng.random_range(0..len)).collect())
    }
}

/// One agent's trainable state: live and target copies of the actor and the
/// centralized critic, plus optimizer moments.
pub struct AgentLearner {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

pub fn actor_layer_sizes(hidden: &[usize]) -> Vec<usize> {
    let mut sizes = vec![POLICY_INPUT_DIM];
    sizes.extend_from_slice(hidden);
    sizes.push(ACTION_DIM);
    sizes
}

pub fn critic_layer_sizes(agents: usize, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = vec![agents * (POLICY_INPUT_DIM + ACTION_DIM)];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes
}

impl AgentLearner {
    /// Fresh learner for a team of `agents`; targets start equal to the
    /// live networks.
    pub fn new<R: Rng + ?Sized>(agents: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let actor = Mlp::new(&actor_layer_sizes(hidden), OutputActivation::Tanh, rng)?;
        let critic = Mlp::new(
            &critic_layer_sizes(agents, hidden),
            OutputActivation::Linear,
            rng,
        )?;
        let target_actor = actor.clone();
        let target_critic = critic.clone();
        let actor_opt = AdamState::new(actor.param_count());
        let critic_opt = AdamState::new(critic.param_count());
        Ok(Self {
            actor,
            critic,
            target_actor,
            target_critic,
            actor_opt,
            critic_opt,
        })
    }

    /// Actor forward plus Gaussian exploration, clipped to the unit box.
    /// `noise_scale` zero gives the deterministic policy.
    pub fn act<R: Rng + ?Sized>(
        &self,
        input: &[f64; POLICY_INPUT_DIM],
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<[f64; ACTION_DIM]> {
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy observation"));
        }
        let out = self.actor.forward(input)?;
        let mut action = [0.0; ACTION_DIM];
        for (a, y) in action.iter_mut().zip(&out) {
            let noise: f64 = rng.sample(StandardNormal);
            *a = (y + noise_scale * noise).clamp(-1.0, 1.0);
        }
        Ok(action)
    }

    pub fn snapshot(&self) -> LearnerSnapshot {
        LearnerSnapshot {
            actor_sizes: self.actor.sizes().to_vec(),
            critic_sizes: self.critic.sizes().to_vec(),
            actor: self.actor.params().to_vec(),
            critic: self.critic.params().to_vec(),
            target_actor: self.target_actor.params().to_vec(),
            target_critic: self.target_critic.params().to_vec(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
        }
    }

    pub fn restore(snapshot: &LearnerSnapshot) -> Result<Self> {
        Ok(Self {
            actor: Mlp::from_params(
                &snapshot.actor_sizes,
                OutputActivation::Tanh,
                snapshot.actor.clone(),
            )?,
            critic: Mlp::from_params(
                &snapshot.critic_sizes,
                OutputActivation::Linear,
                snapshot.critic.clone(),
            )?,
            target_actor: Mlp::from_params(
                &snapshot.actor_sizes,
                OutputActivation::Tanh,
                snapshot.target_actor.clone(),
            )?,
            target_critic: Mlp::from_params(
                &snapshot.critic_sizes,
                OutputActivation::Linear,
                snapshot.target_critic.clone(),
            )?,
            actor_opt: snapshot.actor_opt.clone(),
            critic_opt: snapshot.critic_opt.clone(),
        })
    }
}

/// Blend every target parameter toward the live value: a convex combination,
/// so targets stay within the span of old target and live.
pub fn soft_update(target: &mut Mlp, live: &Mlp, rate: f64) {
    let live_params = live.params();
    for (t, l) in target.params_mut().iter_mut().zip(live_params) {
        *t += rate * (l - *t);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UpdateParams {
    pub batch_size: usize,
    pub discount: f64,
    pub target_rate: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl UpdateParams {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            batch_size: cfg.batch_size,
            discount: cfg.discount,
            target_rate: cfg.target_rate,
            actor_lr: cfg.actor_lr,
            critic_lr: cfg.critic_lr,
        }
    }
}

/// Per-agent diagnostics from one gradient update.
#[derive(Clone, Debug)]
pub struct TrainStepReport {
    pub critic_loss: Vec<f64>,
    pub actor_value: Vec<f64>,
}

fn columns(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows, width);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
    }
    out
}

fn set_columns(dst: &mut Matrix, start: usize, src: &Matrix) {
    for r in 0..dst.rows {
        dst.row_mut(r)[start..start + src.cols].copy_from_slice(src.row(r));
    }
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

/// Per-agent block permutation that puts agent `i`'s block first and keeps
/// the rest in index order. Critics always see their own agent's data in the
/// leading slot; without this, a shared critic would receive identical joint
/// inputs for every agent while being asked to regress each agent's distinct
/// return.
fn own_first(src: &Matrix, i: usize, agents: usize, block: usize) -> Matrix {
    let mut out = Matrix::zeros(src.rows, src.cols);
    let order = std::iter::once(i).chain((0..agents).filter(|&j| j != i));
    for (pos, j) in order.enumerate() {
        for r in 0..src.rows {
            out.row_mut(r)[pos * block..(pos + 1) * block]
                .copy_from_slice(&src.row(r)[j * block..(j + 1) * block]);
        }
    }
    out
}

/// One gradient update for every agent slot from a shared minibatch.
///
/// Each critic regresses toward `r_i + discount * (1 - terminal) * Q'` with
/// joint target actions; each actor follows the critic's gradient through
/// its own action slot; targets are then soft-blended. Agents index into
/// `learners` modulo its length, which is how parameter sharing works.
/// Critic inputs are in own-first order (see `own_first`).
pub fn train_step(
    learners: &mut [AgentLearner],
    buffer: &mut ReplayBuffer,
    agents: usize,
    params: &UpdateParams,
) -> Result<TrainStepReport> {
    if learners.is_empty() || agents == 0 {
        return Err(Error::Training("no learners to update".into()));
    }
    let batch = params.batch_size;
    let indices = buffer.sample_indices(batch)?;
    let jo = agents * POLICY_INPUT_DIM;
    let ja = agents * ACTION_DIM;

    let mut obs = Matrix::zeros(batch, jo);
    let mut actions = Matrix::zeros(batch, ja);
    let mut next_obs = Matrix::zeros(batch, jo);
    let mut rewards = Matrix::zeros(batch, agents);
    let mut continues = vec![0.0; batch];
    for (row, &index) in indices.iter().enumerate() {
        let t = buffer.get(index);
        if t.observations.len() != jo || t.rewards.len() != agents {
            return Err(Error::Dimension {
                expected: jo,
                got: t.observations.len(),
            });
        }
        obs.row_mut(row).copy_from_slice(&t.observations);
        actions.row_mut(row).copy_from_slice(&t.actions);
        next_obs.row_mut(row).copy_from_slice(&t.next_observations);
        rewards.row_mut(row).copy_from_slice(&t.rewards);
        continues[row] = if t.terminal { 0.0 } else { 1.0 };
    }

    let mut report = TrainStepReport {
        critic_loss: Vec::with_capacity(agents),
        actor_value: Vec::with_capacity(agents),
    };

    for i in 0..agents {
        let slot = i % learners.len();

        // Joint next actions from the target actors, recomputed per agent
        // so parameter sharing sees the freshest targets.
        let mut next_actions = Matrix::zeros(batch, ja);
        for j in 0..agents {
            let source = &learners[j % learners.len()].target_actor;
            let obs_j = columns(&next_obs, j * POLICY_INPUT_DIM, POLICY_INPUT_DIM);
            let (act_j, _) = source.forward_batch(&obs_j)?;
            set_columns(&mut next_actions, j * ACTION_DIM, &act_j);
        }

        // Critic regression target.
        let next_input = hcat(
            &own_first(&next_obs, i, agents, POLICY_INPUT_DIM),
            &own_first(&next_actions, i, agents, ACTION_DIM),
        );
        let (q_next, _) = learners[slot].target_critic.forward_batch(&next_input)?;
        let mut targets = vec![0.0; batch];
        for row in 0..batch {
            targets[row] = rewards.row(row)[i]
                + params.discount * continues[row] * q_next.row(row)[0];
        }

        let obs_own_first = own_first(&obs, i, agents, POLICY_INPUT_DIM);
        let current_input = hcat(&obs_own_first, &own_first(&actions, i, agents, ACTION_DIM));
        let (q, critic_tape) = learners[slot].critic.forward_batch(&current_input)?;
        let mut q_grad = Matrix::zeros(batch, 1);
        let mut loss = 0.0;
        for row in 0..batch {
            let residual = q.row(row)[0] - targets[row];
            loss += residual * residual;
            q_grad.row_mut(row)[0] = 2.0 * residual / batch as f64;
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "critic loss for agent {i} diverged to {loss}"
            )));
        }
        let (critic_grads, _) = learners[slot].critic.backward(&critic_tape, &q_grad)?;
        {
            let learner = &mut learners[slot];
            adam_step(
                learner.critic.params_mut(),
                &critic_grads,
                &mut learner.critic_opt,
                params.critic_lr,
            )?;
        }

        // Deterministic policy gradient: differentiate the (just updated)
        // critic at the replayed joint state with agent i acting from its
        // live actor, then push the ascent direction through the actor.
        let obs_i = columns(&obs, i * POLICY_INPUT_DIM, POLICY_INPUT_DIM);
        let (live_actions, actor_tape) = learners[slot].actor.forward_batch(&obs_i)?;
        let mut mixed_actions = actions.clone();
        set_columns(&mut mixed_actions, i * ACTION_DIM, &live_actions);
        let policy_input = hcat(&obs_own_first, &own_first(&mixed_actions, i, agents, ACTION_DIM));
        let (q_policy, policy_tape) = learners[slot].critic.forward_batch(&policy_input)?;
        let value = q_policy.data.iter().sum::<f64>() / batch as f64;
        if !value.is_finite() {
            return Err(Error::Training(format!(
                "policy value for agent {i} diverged to {value}"
            )));
        }
        let ones = Matrix {
            rows: batch,
            cols: 1,
            data: vec![1.0 / batch as f64; batch],
        };
        let (_, input_grads) = learners[slot].critic.backward(&policy_tape, &ones)?;
        // Ascent on value = descent on -value. The live action occupies the
        // leading action block of the own-first layout.
        let mut action_grads = columns(&input_grads, jo, ACTION_DIM);
        for g in action_grads.data.iter_mut() {
            *g = -*g;
        }
        let (actor_grads, _) = learners[slot].actor.backward(&actor_tape, &action_grads)?;
        {
            let learner = &mut learners[slot];
            adam_step(
                learner.actor.params_mut(),
                &actor_grads,
                &mut learner.actor_opt,
                params.actor_lr,
            )?;
            soft_update(&mut learner.target_critic, &learner.critic, params.target_rate);
            soft_update(&mut learner.target_actor, &learner.actor, params.target_rate);
        }

        report.critic_loss.push(loss);
        report.actor_value.push(value);
    }
    Ok(report)
}

/// Decentralized-execution adapter: one agent's actor, optional Gaussian
/// noise, nothing else.
pub struct ActorPolicy {
    actor: Mlp,
    noise_scale: f64,
    rng: ChaCha8Rng,
}

impl ActorPolicy {
    pub fn new(actor: Mlp, noise_scale: f64, seed: u64, agent_index: u64) -> Self {
        Self {
            actor,
            noise_scale,
            rng: stream_rng(seed, "actor-policy", agent_index),
        }
    }
}

impl Policy for ActorPolicy {
    fn act(&mut self, input: &[f64; POLICY_INPUT_DIM]) -> [f64; ACTION_DIM] {
        let out = self
            .actor
            .forward(input)
            .expect("actor input dimension fixed by construction");
        let mut action = [0.0; ACTION_DIM];
        for (a, y) in action.iter_mut().zip(&out) {
            let noise: f64 = self.rng.sample(StandardNormal);
            *a = (y + self.noise_scale * noise).clamp(-1.0, 1.0);
        }
        action
    }
}

/// Build per-agent policies from a checkpoint. Teams larger than the
/// checkpoint reuse actors cyclically, which is what lets one trained team
/// size execute at another.
pub fn actor_policies(
    checkpoint: &Checkpoint,
    agents: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<Box<dyn Policy>>> {
    if checkpoint.learners.is_empty() {
        return Err(Error::Checkpoint("checkpoint holds no learners".into()));
    }
    let mut policies: Vec<Box<dyn Policy>> = Vec::with_capacity(agents);
    for i in 0..agents {
        let snapshot = &checkpoint.learners[i % checkpoint.learners.len()];
        let actor = Mlp::from_params(
            &snapshot.actor_sizes,
            OutputActivation::Tanh,
            snapshot.actor.clone(),
        )?;
        policies.push(Box::new(ActorPolicy::new(actor, noise_scale, seed, i as u64)));
    }
    Ok(policies)
}

fn exploration_noise(cfg: &TrainConfig, episode: u64) -> f64 {
    if cfg.episodes <= 1 {
        return cfg.noise_end;
    }
    let frac = episode as f64 / (cfg.episodes - 1) as f64;
    cfg.noise_start + (cfg.noise_end - cfg.noise_start) * frac.clamp(0.0, 1.0)
}

fn make_checkpoint(
    learners: &[AgentLearner],
    cfg: &TrainConfig,
    episodes_completed: u64,
) -> Checkpoint {
    Checkpoint {
        shared_parameters: cfg.share_parameters,
        episodes_completed,
        master_seed: cfg.seed,
        learners: learners.iter().map(AgentLearner::snapshot).collect(),
    }
}

/// Result paths from a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub episodes_completed: u64,
}

/// Full training loop: collect an episode with exploration, interleave
/// gradient updates, log a learning-curve row per episode (cumulative
/// goal-distance term kept separate from the full reward), and emit
/// checkpoints. `resume` restarts from a previous checkpoint's networks and
/// episode count; replayed experience is not persisted, so a resumed run
/// refills its buffer.
pub fn train(
    task: &TaskConfig,
    cfg: &TrainConfig,
    comm_mode: CommMode,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    task.validate()?;
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let n = task.agents;
    let learner_count = if cfg.share_parameters { 1 } else { n };
    let mut start_episode = 0u64;
    let mut learners: Vec<AgentLearner> = if let Some(path) = resume {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.learners.len() != learner_count {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} learners, run needs {learner_count}",
                ckpt.learners.len()
            )));
        }
        let expected_critic = critic_layer_sizes(n, &cfg.hidden_layers);
        for snapshot in &ckpt.learners {
            if snapshot.critic_sizes != expected_critic {
                return Err(Error::Checkpoint(format!(
                    "critic shape {:?} does not match configured {:?}",
                    snapshot.critic_sizes, expected_critic
                )));
            }
        }
        start_episode = ckpt.episodes_completed;
        ckpt.learners
            .iter()
            .map(AgentLearner::restore)
            .collect::<Result<_>>()?
    } else {
        (0..learner_count)
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, "learner-init", i as u64);
                AgentLearner::new(n, &cfg.hidden_layers, &mut rng)
            })
            .collect::<Result<_>>()?
    };
    let total_episodes = cfg.episodes as u64;
    if start_episode > total_episodes {
        return Err(Error::Training(format!(
            "checkpoint already at episode {start_episode}, run asks for {total_episodes}"
        )));
    }

    // Echo the configuration for provenance.
    let echo = Config {
        task: task.clone(),
        train: cfg.clone(),
        eval: EvalConfig::default(),
    };
    fs::write(out_dir.join("config.toml"), echo.to_toml_string()?)?;
    fs::write(
        out_dir.join("run.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "comm_mode": comm_mode.to_string(),
            "seed": cfg.seed,
            "starting_episode": start_episode,
        }))?,
    )?;

    let curve_path = out_dir.join("learning_curve.csv");
    let fresh_curve = start_episode == 0 || !curve_path.exists();
    let curve_file = fs::OpenOptions::new()
        .create(true)
        .append(!fresh_curve)
        .truncate(fresh_curve)
        .write(true)
        .open(&curve_path)?;
    let mut curve = csv::Writer::from_writer(curve_file);
    if fresh_curve {
        curve.write_record([
            "episode",
            "reward",
            "reward_goal",
            "reward_link",
            "reward_stray",
            "critic_loss",
            "actor_value",
            "noise",
            "updates",
        ])?;
    }

    let mut env = TaskEnv::new(task, comm_mode, cfg.seed)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, n, derive_seed(cfg.seed, "replay", 0))?;
    let update = UpdateParams::from_config(cfg);
    let mut global_step = start_episode * task.steps as u64;

    for episode in start_episode..total_episodes {
        env.reset(derive_seed(cfg.seed, "train-episode", episode))?;
        let noise = exploration_noise(cfg, episode);
        let mut noise_rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| stream_rng(cfg.seed, "explore", episode * n as u64 + i as u64))
            .collect();

        env.prepare_step()?;
        let mut observations = env.observations();
        let mut reward_sum = 0.0;
        let mut term_sums = [0.0; 3];
        let mut loss_sum = 0.0;
        let mut value_sum = 0.0;
        let mut updates = 0u64;

        // Warmup episodes seed the buffer with uniform random actions held
        // for a second or so at a time; a freshly initialized actor barely
        // moves, and per-step white noise random-walks in place instead of
        // crossing the arena.
        let warmup = episode < cfg.warmup_episodes as u64;
        let mut held = vec![[0.0f64; ACTION_DIM]; n];
        // After warmup, exploration adds Ornstein-Uhlenbeck noise to the
        // actor output: the correlation keeps a perturbation pointing the
        // same way long enough to produce sustained contact.
        let mut ou = vec![[0.0f64; ACTION_DIM]; n];
        const OU_THETA: f64 = 0.15;

        for t in 0..task.steps {
            let mut actions = Vec::with_capacity(n);
            for (i, rng) in noise_rngs.iter_mut().enumerate() {
                if warmup {
                    if t == 0 || rng.random_bool(0.1) {
                        held[i] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                    }
                    actions.push(held[i]);
                } else {
                    let learner = &learners[i % learners.len()];
                    let mean = learner.act(&observations[i], 0.0, rng)?;
                    let state = &mut ou[i];
                    let mut action = [0.0; ACTION_DIM];
                    for d in 0..ACTION_DIM {
                        let gauss: f64 = rng.sample(StandardNormal);
                        state[d] += OU_THETA * (0.0 - state[d]) + noise * gauss;
                        action[d] = (mean[d] + state[d]).clamp(-1.0, 1.0);
                    }
                    actions.push(action);
                }
            }
            let outcome = env.apply_actions(&actions)?;
            // Preparing the next step also yields the successor
            // observations for the final transition of the episode.
            env.prepare_step()?;
            let next_observations = env.observations();

            buffer.push(Transition {
                observations: observations.iter().flatten().copied().collect(),
                actions: actions.iter().flatten().copied().collect(),
                rewards: outcome.rewards.clone(),
                next_observations: next_observations.iter().flatten().copied().collect(),
                terminal: t + 1 == task.steps,
            })?;

            reward_sum += outcome.rewards.iter().sum::<f64>() / n as f64;
            for terms in &outcome.record.reward_terms {
                for (sum, term) in term_sums.iter_mut().zip(terms) {
                    *sum += term / n as f64;
                }
            }
            observations = next_observations;
            global_step += 1;

            if episode >= cfg.warmup_episodes as u64
                && buffer.len() >= cfg.batch_size
                && global_step % cfg.train_every as u64 == 0
            {
                let report = train_step(&mut learners, &mut buffer, n, &update)?;
                loss_sum += report.critic_loss.iter().sum::<f64>() / report.critic_loss.len() as f64;
                value_sum +=
                    report.actor_value.iter().sum::<f64>() / report.actor_value.len() as f64;
                updates += 1;
            }
        }

        let scale = 1.0_f64.max(updates as f64);
        curve.write_record([
            episode.to_string(),
            format!("{reward_sum:.6}"),
            format!("{:.6}", term_sums[0]),
            format!("{:.6}", term_sums[1]),
            format!("{:.6}", term_sums[2]),
            format!("{:.6}", loss_sum / scale),
            format!("{:.6}", value_sum / scale),
            format!("{noise:.6}"),
            updates.to_string(),
        ])?;
        curve.flush()?;

        if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every as u64 == 0 {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", episode + 1));
            make_checkpoint(&learners, cfg, episode + 1).save(path)?;
        }
    }

    let checkpoint_path = out_dir.join("checkpoint.ckpt");
    make_checkpoint(&learners, cfg, total_episodes).save(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint: checkpoint_path,
        curve: curve_path,
        episodes_completed: total_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;

    fn tiny_transition(agents: usize, seed: u64, reward: f64, terminal: bool) -> Transition {
        let mut rng = stream_rng(seed, "tiny-transition", 0);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        Transition {
            observations: draw(agents * POLICY_INPUT_DIM),
            actions: draw(agents * ACTION_DIM),
            rewards: vec![reward; agents],
            next_observations: draw(agents * POLICY_INPUT_DIM),
            terminal,
        }
    }

    #[test]
    fn zero_actor_with_zero_noise_is_still() {
        let sizes = actor_layer_sizes(&[8]);
        let actor = Mlp::from_params(
            &sizes,
            OutputActivation::Tanh,
            vec![0.0; param_count(&sizes)],
        )
        .unwrap();
        let mut learner = {
            let mut rng = stream_rng(1, "zero-actor", 0);
            AgentLearner::new(2, &[8], &mut rng).unwrap()
        };
        learner.actor = actor;
        let mut rng = stream_rng(1, "zero-actor-noise", 0);
        let action = learner.act(&[0.4; POLICY_INPUT_DIM], 0.0, &mut rng).unwrap();
        assert_eq!(action, [0.0; ACTION_DIM]);
    }

    #[test]
    fn deterministic_action_without_noise() {
        let mut rng = stream_rng(2, "det-act", 0);
        let learner = AgentLearner::new(2, &[16, 16], &mut rng).unwrap();
        let input = [0.37; POLICY_INPUT_DIM];
        let a = learner.act(&input, 0.0, &mut rng).unwrap();
        let b = learner.act(&input, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(learner
            .act(&[f64::NAN; POLICY_INPUT_DIM], 0.0, &mut rng)
            .is_err());
    }

    #[test]
    fn exploration_noise_std_matches_scale() {
        let zero_sizes = actor_layer_sizes(&[4]);
        let mut learner = {
            let mut rng = stream_rng(3, "noise-std", 0);
            AgentLearner::new(1, &[4], &mut rng).unwrap()
        };
        learner.actor = Mlp::from_params(
            &zero_sizes,
            OutputActivation::Tanh,
            vec![0.0; param_count(&zero_sizes)],
        )
        .unwrap();
        let mut rng = stream_rng(3, "noise-samples", 0);
        let scale = 0.1;
        let trials = 10_000;
        let mut sums = [0.0; ACTION_DIM];
        let mut squares = [0.0; ACTION_DIM];
        for _ in 0..trials {
            let a = learner.act(&[0.0; POLICY_INPUT_DIM], scale, &mut rng).unwrap();
            for k in 0..ACTION_DIM {
                sums[k] += a[k];
                squares[k] += a[k] * a[k];
            }
        }
        for k in 0..ACTION_DIM {
            let mean = sums[k] / trials as f64;
            let std = (squares[k] / trials as f64 - mean * mean).sqrt();
            assert!(
                (std - scale).abs() < 0.05 * scale,
                "coordinate {k} std {std}"
            );
        }
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut buffer = ReplayBuffer::new(4, 1, 9).unwrap();
        for id in 0..6 {
            let mut t = tiny_transition(1, id, id as f64, false);
            t.rewards[0] = id as f64;
            buffer.push(t).unwrap();
        }
        assert_eq!(buffer.len(), 4);
        let mut kept: Vec<f64> = (0..4).map(|i| buffer.get(i).rewards[0]).collect();
        kept.sort_by(f64::total_cmp);
        assert_eq!(kept, vec![2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn replay_rejects_small_samples_and_bad_shapes() {
        let mut buffer = ReplayBuffer::new(8, 2, 9).unwrap();
        assert!(buffer.sample_indices(1).is_err());
        assert!(buffer.push(tiny_transition(1, 0, 0.0, false)).is_err());
        buffer.push(tiny_transition(2, 0, 0.0, false)).unwrap();
        let indices = buffer.sample_indices(1).unwrap();
        assert!(indices.iter().all(|&i| i < buffer.len()));
    }

    #[test]
    fn full_target_rate_copies_live_networks() {
        let mut rng = stream_rng(4, "copy-rate", 0);
        let mut learners = vec![AgentLearner::new(1, &[8], &mut rng).unwrap()];
        let mut buffer = ReplayBuffer::new(64, 1, 4).unwrap();
        for i in 0..32 {
            buffer.push(tiny_transition(1, i, 0.5, i % 7 == 0)).unwrap();
        }
        let params = UpdateParams {
            batch_size: 16,
            discount: 0.9,
            target_rate: 1.0,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
        };
        train_step(&mut learners, &mut buffer, 1, &params).unwrap();
        assert_eq!(
            learners[0].target_actor.params(),
            learners[0].actor.params()
        );
        assert_eq!(
            learners[0].target_critic.params(),
            learners[0].critic.params()
        );
    }

    #[test]
    fn critic_fits_constant_reward_with_zero_discount() {
        let mut rng = stream_rng(5, "constant-fit", 0);
        let mut learners = vec![AgentLearner::new(1, &[32, 32], &mut rng).unwrap()];
        let mut buffer = ReplayBuffer::new(256, 1, 5).unwrap();
        for i in 0..128 {
            buffer.push(tiny_transition(1, i, 1.0, false)).unwrap();
        }
        let params = UpdateParams {
            batch_size: 64,
            discount: 0.0,
            target_rate: 0.05,
            actor_lr: 0.0,
            critic_lr: 1e-3,
        };
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            last = train_step(&mut learners, &mut buffer, 1, &params).unwrap().critic_loss[0];
        }
        assert!(last < 0.05 * 0.05, "critic loss {last}");
        let sample = buffer.get(7);
        let input: Vec<f64> = sample
            .observations
            .iter()
            .chain(&sample.actions)
            .copied()
            .collect();
        let q = learners[0].critic.forward(&input).unwrap()[0];
        assert!((q - 1.0).abs() < 0.05, "critic output {q}");
    }

    #[test]
    fn actor_finds_known_optimal_action() {
        // Reward -|a - a*|^2 on a fixed observation; the actor should walk
        // to a*.
        let target = [0.3, -0.5, 0.2];
        let mut rng = stream_rng(6, "bandit", 0);
        let observation: Vec<f64> = (0..POLICY_INPUT_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut learners = vec![AgentLearner::new(1, &[32, 32], &mut rng).unwrap()];
        let mut buffer = ReplayBuffer::new(4096, 1, 6).unwrap();
        for _ in 0..2048 {
            let action: Vec<f64> = (0..ACTION_DIM)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let reward = -action
                .iter()
                .zip(&target)
                .map(|(a, t)| (a - t) * (a - t))
                .sum::<f64>();
            buffer
                .push(Transition {
                    observations: observation.clone(),
                    actions: action,
                    rewards: vec![reward],
                    next_observations: observation.clone(),
                    terminal: true,
                })
                .unwrap();
        }
        let params = UpdateParams {
            batch_size: 32,
            discount: 0.99,
            target_rate: 0.01,
            actor_lr: 1e-3,
            critic_lr: 3e-3,
        };
        for _ in 0..5000 {
            train_step(&mut learners, &mut buffer, 1, &params).unwrap();
        }
        let fixed: [f64; POLICY_INPUT_DIM] = observation.as_slice().try_into().unwrap();
        let action = learners[0].act(&fixed, 0.0, &mut rng).unwrap();
        for (a, t) in action.iter().zip(&target) {
            assert!((a - t).abs() < 0.05, "action {action:?} vs {target:?}");
        }
    }

    #[test]
    fn shared_learner_agents_find_distinct_optima() {
        // Two agents share one learner; each sees its own fixed observation
        // and earns a reward that depends only on its own action. The shared
        // critic receives the same joint transition for both updates, so it
        // can only satisfy both regressions if the own-first input ordering
        // actually distinguishes whose update is running.
        let targets = [[0.6, -0.2, 0.4], [-0.5, 0.3, -0.7]];
        let mut rng = stream_rng(9, "shared-bandit", 0);
        let observations: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..POLICY_INPUT_DIM)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let joint_obs: Vec<f64> = observations.iter().flatten().copied().collect();
        let mut learners = vec![AgentLearner::new(2, &[32, 32], &mut rng).unwrap()];
        let mut buffer = ReplayBuffer::new(4096, 2, 9).unwrap();
        for _ in 0..2048 {
            let actions: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..ACTION_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let rewards: Vec<f64> = (0..2)
                .map(|i| {
                    -actions[i]
                        .iter()
                        .zip(&targets[i])
                        .map(|(a, t)| (a - t) * (a - t))
                        .sum::<f64>()
                })
                .collect();
            buffer
                .push(Transition {
                    observations: joint_obs.clone(),
                    actions: actions.into_iter().flatten().collect(),
                    rewards,
                    next_observations: joint_obs.clone(),
                    terminal: true,
                })
                .unwrap();
        }
        let params = UpdateParams {
            batch_size: 64,
            discount: 0.99,
            target_rate: 0.01,
            actor_lr: 1e-3,
            critic_lr: 3e-3,
        };
        for _ in 0..6000 {
            train_step(&mut learners, &mut buffer, 2, &params).unwrap();
        }
        // A slicing or ordering bug sends an agent toward the other's target
        // (distance ~1), so the tolerance only needs to separate "converged
        // near own optimum" from that.
        for (i, target) in targets.iter().enumerate() {
            let fixed: [f64; POLICY_INPUT_DIM] =
                observations[i].as_slice().try_into().unwrap();
            let action = learners[0].act(&fixed, 0.0, &mut rng).unwrap();
            for (a, t) in action.iter().zip(target) {
                assert!(
                    (a - t).abs() < 0.2,
                    "agent {i}: action {action:?} vs {target:?}"
                );
            }
        }
    }

    #[test]
    fn soft_update_is_convex() {
        let mut rng = stream_rng(7, "convex", 0);
        let live = Mlp::new(&[4, 8, 2], OutputActivation::Tanh, &mut rng).unwrap();
        let mut target = Mlp::new(&[4, 8, 2], OutputActivation::Tanh, &mut rng).unwrap();
        let before = target.params().to_vec();
        soft_update(&mut target, &live, 0.25);
        for ((t, b), l) in target.params().iter().zip(&before).zip(live.params()) {
            let low = b.min(*l) - 1e-12;
            let high = b.max(*l) + 1e-12;
            assert!(*t >= low && *t <= high);
        }
    }

    fn mini_configs() -> (TaskConfig, TrainConfig) {
        let mut task = TaskConfig::transport();
        task.steps = 8;
        let train = TrainConfig {
            episodes: 3,
            batch_size: 8,
            buffer_capacity: 512,
            hidden_layers: vec![8, 8],
            warmup_episodes: 1,
            checkpoint_every: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        (task, train)
    }

    #[test]
    fn training_runs_are_reproducible() {
        let (task, train_cfg) = mini_configs();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        train(&task, &train_cfg, CommMode::Ours, dir_a.path(), None).unwrap();
        train(&task, &train_cfg, CommMode::Ours, dir_b.path(), None).unwrap();
        let curve_a = fs::read(dir_a.path().join("learning_curve.csv")).unwrap();
        let curve_b = fs::read(dir_b.path().join("learning_curve.csv")).unwrap();
        assert_eq!(curve_a, curve_b);
        let ckpt_a = fs::read(dir_a.path().join("checkpoint.ckpt")).unwrap();
        let ckpt_b = fs::read(dir_b.path().join("checkpoint.ckpt")).unwrap();
        assert_eq!(ckpt_a, ckpt_b);
    }

    #[test]
    fn training_resumes_from_checkpoint() {
        let (task, mut train_cfg) = mini_configs();
        let dir = tempfile::tempdir().unwrap();
        train_cfg.episodes = 2;
        let first = train(&task, &train_cfg, CommMode::Full, dir.path(), None).unwrap();
        assert_eq!(first.episodes_completed, 2);
        train_cfg.episodes = 4;
        let resumed = train(
            &task,
            &train_cfg,
            CommMode::Full,
            dir.path(),
            Some(&first.checkpoint),
        )
        .unwrap();
        assert_eq!(resumed.episodes_completed, 4);
        let ckpt = Checkpoint::load(&resumed.checkpoint).unwrap();
        assert_eq!(ckpt.episodes_completed, 4);
        let rows = fs::read_to_string(resumed.curve).unwrap();
        assert_eq!(rows.lines().count(), 1 + 4);
    }

    #[test]
    #[ignore = "throughput probe for sizing training runs; run on demand"]
    fn train_step_throughput() {
        let mut rng = stream_rng(30, "bench", 0);
        let agents = 2;
        let hidden = [64usize, 64, 64, 64];
        let mut learners: Vec<AgentLearner> = (0..agents)
            .map(|_| AgentLearner::new(agents, &hidden, &mut rng).unwrap())
            .collect();
        let mut buffer = ReplayBuffer::new(4096, agents, 30).unwrap();
        for i in 0..1024 {
            buffer.push(tiny_transition(agents, i as u64, -0.5, i % 150 == 0)).unwrap();
        }
        let params = UpdateParams {
            batch_size: 256,
            discount: 0.99,
            target_rate: 0.01,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
        };
        let start = std::time::Instant::now();
        let rounds = 200;
        for _ in 0..rounds {
            train_step(&mut learners, &mut buffer, agents, &params).unwrap();
        }
        let elapsed = start.elapsed().as_secs_f64();
        println!(
            "{rounds} updates in {elapsed:.2} s ({:.1} updates/s, {:.2} ms each)",
            rounds as f64 / elapsed,
            1e3 * elapsed / rounds as f64
        );
    }

    #[test]
    fn checkpoint_policies_execute_for_other_team_sizes() {
        let mut rng = stream_rng(8, "resize", 0);
        let learners: Vec<AgentLearner> = (0..5)
            .map(|_| AgentLearner::new(5, &[8], &mut rng).unwrap())
            .collect();
        let cfg = TrainConfig {
            hidden_layers: vec![8],
            ..TrainConfig::default()
        };
        let ckpt = make_checkpoint(&learners, &cfg, 0);
        for agents in [3, 8] {
            let mut policies = actor_policies(&ckpt, agents, 0.0, 1).unwrap();
            assert_eq!(policies.len(), agents);
            let action = policies[agents - 1].act(&[0.1; POLICY_INPUT_DIM]);
            assert!(action.iter().all(|a| a.is_finite()));
        }
    }
}
