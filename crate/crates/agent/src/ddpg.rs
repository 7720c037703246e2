//! Deterministic policy gradient agent: actor/critic with target networks,
//! uniform replay, TD targets from the targets, soft updates, and an
//! encoder trained through the critic loss on the freshest transition.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use feederlab_tensor::{AdamState, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

use crate::encoder::Encoder;
use crate::env::{ActionBounds, Environment, SegmentSet};

#[derive(Debug, Clone)]
pub struct DdpgConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub encoder_lr: f64,
    pub gamma: f64,
    /// Soft-update smoothing of the target networks.
    pub rho: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions collected before updates start.
    pub warmup_transitions: usize,
    /// Exploration noise std on the normalized action.
    pub noise_std: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Streaming encoder update period in steps (0 disables).
    pub encoder_update_every: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            hidden_width: 400,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            encoder_lr: 3e-4,
            gamma: 0.99,
            rho: 0.01,
            batch_size: 256,
            replay_capacity: 1_000_000,
            warmup_transitions: 1_000,
            noise_std: 0.1,
            grad_clip: 10.0,
            encoder_update_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling over the filled region.
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    insert: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            data: Vec::new(),
            capacity: capacity.max(1),
            insert: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.insert] = t;
        }
        self.insert = (self.insert + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n)
            .map(|_| rng.random_range(0..self.data.len()))
            .collect()
    }
}

/// Plain fully-connected stack registered in a parameter store.
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let w = store.add_uniform(
                format!("{prefix}.w{i}"),
                &[dims[i], dims[i + 1]],
                dims[i],
                rng,
            );
            let b = store.add_uniform(format!("{prefix}.b{i}"), &[dims[i + 1]], dims[i], rng);
            layers.push((w, b));
        }
        Self {
            layers,
            dims: dims.to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("nonempty dims")
    }

    /// Forward with parameters taken live from the tape's own store.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        self.forward_impl(tape, x, None)
    }

    /// Forward with parameters injected as constants from `frozen` (used
    /// when differentiating through this network w.r.t. something else).
    pub fn forward_frozen(
        &self,
        tape: &mut Tape,
        x: Var,
        frozen: &ParamStore,
    ) -> Result<Var, TensorError> {
        self.forward_impl(tape, x, Some(frozen))
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        mut x: Var,
        frozen: Option<&ParamStore>,
    ) -> Result<Var, TensorError> {
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = match frozen {
                None => (tape.param(*w), tape.param(*b)),
                Some(store) => (
                    tape.constant(store.value(*w).clone()),
                    tape.constant(store.value(*b).clone()),
                ),
            };
            x = tape.matmul(x, wv)?;
            x = tape.add_row_broadcast(x, bv)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// Actor, critic, their targets, optimizer states, and the shared encoder.
pub struct DdpgAgent {
    pub config: DdpgConfig,
    pub bounds: ActionBounds,
    actor: Mlp,
    critic: Mlp,
    pub actor_store: ParamStore,
    pub critic_store: ParamStore,
    pub actor_target: ParamStore,
    pub critic_target: ParamStore,
    actor_adam: AdamState,
    critic_adam: AdamState,
    encoder_adam: Option<AdamState>,
    encoder: Rc<RefCell<Encoder>>,
    pub replay: ReplayBuffer,
    noise_rng: ChaCha12Rng,
    action_center: Vec<f64>,
    action_half: Vec<f64>,
}

impl DdpgAgent {
    pub fn new(
        state_dim: usize,
        bounds: ActionBounds,
        encoder: Rc<RefCell<Encoder>>,
        config: DdpgConfig,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let action_dim = bounds.dim();
        let mut actor_dims = vec![state_dim];
        actor_dims.extend(std::iter::repeat_n(
            config.hidden_width,
            config.hidden_layers,
        ));
        actor_dims.push(action_dim);
        let mut critic_dims = vec![state_dim + action_dim];
        critic_dims.extend(std::iter::repeat_n(
            config.hidden_width,
            config.hidden_layers,
        ));
        critic_dims.push(1);

        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", &actor_dims, &mut rng);
        let mut critic_store = ParamStore::new();
        let critic = Mlp::new(&mut critic_store, "critic", &critic_dims, &mut rng);
        let actor_target = actor_store.clone();
        let critic_target = critic_store.clone();

        let actor_adam = AdamState::new(&actor_store, config.actor_lr);
        let critic_adam = AdamState::new(&critic_store, config.critic_lr);
        let encoder_adam = encoder
            .borrow()
            .store()
            .map(|s| AdamState::new(s, config.encoder_lr));

        let action_center: Vec<f64> = bounds
            .low
            .iter()
            .zip(&bounds.high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let action_half: Vec<f64> = bounds
            .low
            .iter()
            .zip(&bounds.high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();

        Self {
            replay: ReplayBuffer::new(config.replay_capacity),
            config,
            bounds,
            actor,
            critic,
            actor_store,
            critic_store,
            actor_target,
            critic_target,
            actor_adam,
            critic_adam,
            encoder_adam,
            encoder,
            noise_rng: ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
            action_center,
            action_half,
        }
    }

    pub fn encoder(&self) -> Rc<RefCell<Encoder>> {
        Rc::clone(&self.encoder)
    }

    pub fn trains_encoder(&self) -> bool {
        self.config.encoder_update_every > 0 && self.encoder_adam.is_some()
    }

    /// Deterministic policy output; Gaussian noise on the normalized action
    /// when exploring, clipped back into the box.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Vec<f64> {
        let mut normalized = self.normalized_batch(&self.actor_store, state, 1);
        if explore && self.config.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.config.noise_std).expect("valid noise std");
            for u in normalized.iter_mut() {
                *u = (*u + normal.sample(&mut self.noise_rng)).clamp(-1.0, 1.0);
            }
        }
        let mut action = self.scale_row(&normalized);
        self.bounds.clamp(&mut action);
        action
    }

    /// Actor tanh outputs for `rows` stacked states (flattened input).
    fn normalized_batch(&self, params: &ParamStore, states: &[f64], rows: usize) -> Vec<f64> {
        let ds = states.len() / rows;
        let mut tape = Tape::new(params);
        let x = tape.constant(Tensor::new(vec![rows, ds], states.to_vec()).expect("states"));
        let u = self
            .actor
            .forward(&mut tape, x)
            .expect("actor dims match state");
        let t = tape.tanh(u);
        tape.value(t).data().to_vec()
    }

    fn scale_row(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .enumerate()
            .map(|(i, u)| {
                self.action_center[i % self.action_center.len()]
                    + self.action_half[i % self.action_half.len()] * u
            })
            .collect()
    }

    /// Critic value Q(s, a) under the given parameter set.
    pub fn q_value(&self, params: &ParamStore, state: &[f64], action: &[f64]) -> f64 {
        let mut input = state.to_vec();
        input.extend_from_slice(action);
        let mut tape = Tape::new(params);
        let x = tape.constant(Tensor::new(vec![1, input.len()], input).expect("critic input"));
        let q = self
            .critic
            .forward(&mut tape, x)
            .expect("critic dims match state/action");
        tape.value(q).item()
    }

    /// TD targets from the target networks: q = r + gamma Q'(s', pi'(s'));
    /// terminal transitions use the reward alone.
    pub fn td_targets(&self, batch: &[Transition]) -> Vec<f64> {
        let b = batch.len();
        let ds = batch[0].state.len();
        let da = batch[0].action.len();
        let mut next_states = Vec::with_capacity(b * ds);
        for tr in batch {
            next_states.extend_from_slice(&tr.next_state);
        }
        let normalized = self.normalized_batch(&self.actor_target, &next_states, b);
        let actions = self.scale_row(&normalized);

        let mut input = Vec::with_capacity(b * (ds + da));
        for (i, tr) in batch.iter().enumerate() {
            input.extend_from_slice(&tr.next_state);
            input.extend_from_slice(&actions[i * da..(i + 1) * da]);
        }
        let mut tape = Tape::new(&self.critic_target);
        let x = tape.constant(Tensor::new(vec![b, ds + da], input).expect("critic input"));
        let q = self
            .critic
            .forward(&mut tape, x)
            .expect("critic dims match batch");
        let q_next = tape.value(q).data();

        batch
            .iter()
            .zip(q_next)
            .map(|(tr, q)| {
                if tr.terminal {
                    tr.reward
                } else {
                    tr.reward + self.config.gamma * q
                }
            })
            .collect()
    }

    /// One critic step on the batch; returns the mean squared TD error.
    pub fn update_critic(&mut self, batch: &[Transition], targets: &[f64]) -> f64 {
        let b = batch.len();
        let ds = batch[0].state.len();
        let da = batch[0].action.len();
        let mut input = Vec::with_capacity(b * (ds + da));
        for tr in batch {
            input.extend_from_slice(&tr.state);
            input.extend_from_slice(&tr.action);
        }
        let mut tape = Tape::new(&self.critic_store);
        let x = tape.constant(Tensor::new(vec![b, ds + da], input).expect("batch input"));
        let q = self
            .critic
            .forward(&mut tape, x)
            .expect("critic dims match batch");
        let t = tape.constant(Tensor::new(vec![b, 1], targets.to_vec()).expect("targets"));
        let d = tape.sub(q, t).expect("same shape");
        let sq = tape.mul(d, d).expect("same shape");
        let loss = tape.reduce_mean(sq);
        let loss_value = tape.value(loss).item();
        let mut grads = tape.backward(loss).expect("scalar loss");
        drop(tape);
        grads.clip_global_norm(self.config.grad_clip);
        self.critic_adam.step(&mut self.critic_store, &grads);
        loss_value
    }

    /// Deterministic policy gradient step (ascend mean Q(s, pi(s))) followed
    /// by soft target updates.
    pub fn update_actor_and_targets(&mut self, batch: &[Transition]) {
        let b = batch.len();
        let ds = batch[0].state.len();
        let mut states = Vec::with_capacity(b * ds);
        for tr in batch {
            states.extend_from_slice(&tr.state);
        }
        let mut tape = Tape::new(&self.actor_store);
        let s = tape.constant(Tensor::new(vec![b, ds], states).expect("batch states"));
        let u = self
            .actor
            .forward(&mut tape, s)
            .expect("actor dims match batch");
        let t = tape.tanh(u);
        let half = tape.constant(Tensor::from_vec(self.action_half.clone()));
        let center = tape.constant(Tensor::from_vec(self.action_center.clone()));
        let scaled = tape.mul_row_broadcast(t, half).expect("bounds dims");
        let a = tape.add_row_broadcast(scaled, center).expect("bounds dims");
        let sa = tape.concat(&[s, a], 1).expect("state/action concat");
        let q = self
            .critic
            .forward_frozen(&mut tape, sa, &self.critic_store)
            .expect("critic dims");
        let mean_q = tape.reduce_mean(q);
        let objective = tape.scale(mean_q, -1.0);
        let mut grads = tape.backward(objective).expect("scalar objective");
        drop(tape);
        grads.clip_global_norm(self.config.grad_clip);
        self.actor_adam.step(&mut self.actor_store, &grads);

        self.soft_update_targets();
    }

    pub fn soft_update_targets(&mut self) {
        self.actor_target
            .soft_update_from(&self.actor_store, self.config.rho);
        self.critic_target
            .soft_update_from(&self.critic_store, self.config.rho);
    }

    /// Train the encoder through the critic loss on the freshest transition:
    /// the critic consumes [node features, encoder(segments)] with critic
    /// weights frozen, so only encoder parameters move.
    pub fn update_encoder(
        &mut self,
        segments: &SegmentSet,
        raw_features: &[f64],
        action: &[f64],
        td_target: f64,
    ) {
        if self.encoder_adam.is_none() {
            return;
        }
        let encoder_rc = Rc::clone(&self.encoder);
        let mut encoder = encoder_rc.borrow_mut();
        let grads = {
            let Some(store) = encoder.store() else {
                return;
            };
            let mut tape = Tape::new(store);
            let y = match encoder
                .forward(&mut tape, segments)
                .expect("segment shapes match encoder")
            {
                Some(y) => y,
                None => return,
            };
            let x = tape.constant(
                Tensor::new(vec![1, raw_features.len()], raw_features.to_vec())
                    .expect("features"),
            );
            let a = tape
                .constant(Tensor::new(vec![1, action.len()], action.to_vec()).expect("action"));
            let s = tape.concat(&[x, y], 1).expect("state assembly");
            let sa = tape.concat(&[s, a], 1).expect("critic input");
            let q = self
                .critic
                .forward_frozen(&mut tape, sa, &self.critic_store)
                .expect("critic dims");
            let target = tape.constant(Tensor::new(vec![1, 1], vec![td_target]).expect("target"));
            let d = tape.sub(q, target).expect("same shape");
            let sq = tape.mul(d, d).expect("same shape");
            let loss = tape.reduce_mean(sq);
            tape.backward(loss).expect("scalar loss")
        };
        let mut grads = grads;
        grads.clip_global_norm(self.config.grad_clip);
        let store = match &mut *encoder {
            Encoder::MgAstgcn(e) => &mut e.store,
            Encoder::Mlp(e) => &mut e.store,
            Encoder::None => return,
        };
        self.encoder_adam
            .as_mut()
            .expect("checked above")
            .step(store, &grads);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentCheckpointError {
    #[error(transparent)]
    Io(#[from] feederlab_tensor::checkpoint::CheckpointError),
    #[error("checkpoint does not match the configured agent: {0}")]
    Mismatch(String),
}

impl DdpgAgent {
    /// Persist all four networks (and the encoder, when it has parameters)
    /// under `dir`, one checkpoint directory each.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), AgentCheckpointError> {
        use feederlab_tensor::checkpoint::save;
        save(&self.actor_store, &dir.join("actor"))?;
        save(&self.critic_store, &dir.join("critic"))?;
        save(&self.actor_target, &dir.join("actor_target"))?;
        save(&self.critic_target, &dir.join("critic_target"))?;
        if let Some(store) = self.encoder.borrow().store() {
            save(store, &dir.join("encoder"))?;
        }
        Ok(())
    }

    /// Restore networks (and encoder) saved by `save`. The agent must be
    /// constructed with the same architecture first.
    pub fn load_parameters(&mut self, dir: &std::path::Path) -> Result<(), AgentCheckpointError> {
        use feederlab_tensor::checkpoint::load;
        let restore = |dst: &mut ParamStore, sub: &str| -> Result<(), AgentCheckpointError> {
            let src = load(&dir.join(sub))?;
            let same_layout = dst.len() == src.len()
                && dst
                    .iter()
                    .zip(src.iter())
                    .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
            if !same_layout {
                return Err(AgentCheckpointError::Mismatch(sub.to_string()));
            }
            dst.copy_from(&src);
            Ok(())
        };
        restore(&mut self.actor_store, "actor")?;
        restore(&mut self.critic_store, "critic")?;
        restore(&mut self.actor_target, "actor_target")?;
        restore(&mut self.critic_target, "critic_target")?;
        let encoder_rc = Rc::clone(&self.encoder);
        let mut encoder = encoder_rc.borrow_mut();
        let store = match &mut *encoder {
            Encoder::MgAstgcn(e) => Some(&mut e.store),
            Encoder::Mlp(e) => Some(&mut e.store),
            Encoder::None => None,
        };
        if let Some(store) = store {
            restore(store, "encoder")?;
        }
        Ok(())
    }

    /// Exploration noise stream state for exact resume.
    pub fn noise_state(&self) -> ([u8; 32], u128) {
        (self.noise_rng.get_seed(), self.noise_rng.get_word_pos())
    }

    pub fn restore_noise_state(&mut self, seed: [u8; 32], word_pos: u128) {
        self.noise_rng = ChaCha12Rng::from_seed(seed);
        self.noise_rng.set_word_pos(word_pos);
    }
}

/// Per-episode returns plus running means over a 100-episode window.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub episode_rewards: Vec<f64>,
    pub window_means: Vec<f64>,
    pub critic_losses: Vec<f64>,
    pub steps: usize,
}

/// Training loop: act with exploration noise, store the transition, then one
/// critic step, one actor step, and soft target updates per control step.
pub fn train(
    env: &mut Environment,
    agent: &mut DdpgAgent,
    episodes: usize,
    master_seed: u64,
) -> TrainLog {
    train_observed(env, agent, episodes, master_seed, |_, _, _, _| {})
}

/// `train` with a per-step observer `(episode, step, action, record)`.
pub fn train_observed(
    env: &mut Environment,
    agent: &mut DdpgAgent,
    episodes: usize,
    master_seed: u64,
    mut on_step: impl FnMut(usize, usize, &[f64], &crate::env::StepRecord),
) -> TrainLog {
    let mut log = TrainLog::default();
    let mut sample_rng = ChaCha12Rng::seed_from_u64(master_seed ^ 0x517c_c1b7_2722_0a95);
    let max_steps = env.config().max_episode_steps;
    let encoder_dim = agent.encoder().borrow().output_dim();

    for episode in 0..episodes {
        let mut state = env.reset(master_seed.wrapping_add(episode as u64));
        let mut episode_reward = 0.0;
        for step in 0..max_steps {
            let action = agent.act(&state, true);
            let segments = agent.trains_encoder().then(|| env.build_segments());
            let dispatch = env.action_to_dispatch(&action);
            let rec = env.step(&dispatch);
            on_step(episode, step, &action, &rec);
            episode_reward += rec.reward;

            let transition = Transition {
                state: state.clone(),
                action: action.clone(),
                reward: rec.reward,
                next_state: rec.state.clone(),
                terminal: rec.terminated,
            };
            agent.replay.push(transition.clone());
            let raw_features: Vec<f64> = state[..state.len() - encoder_dim].to_vec();
            state = rec.state;

            if agent.replay.len() >= agent.config.warmup_transitions.max(agent.config.batch_size)
            {
                let idx = agent
                    .replay
                    .sample_indices(agent.config.batch_size, &mut sample_rng);
                let batch: Vec<Transition> =
                    idx.iter().map(|&i| agent.replay.get(i).clone()).collect();
                let targets = agent.td_targets(&batch);
                let loss = agent.update_critic(&batch, &targets);
                log.critic_losses.push(loss);
                agent.update_actor_and_targets(&batch);

                if agent.config.encoder_update_every > 0
                    && log.steps % agent.config.encoder_update_every == 0
                {
                    if let Some(segments) = &segments {
                        let td = agent.td_targets(std::slice::from_ref(&transition))[0];
                        agent.update_encoder(segments, &raw_features, &action, td);
                    }
                }
            }
            log.steps += 1;
            if rec.terminated {
                break;
            }
        }
        log.episode_rewards.push(episode_reward);
        let window = &log.episode_rewards[log.episode_rewards.len().saturating_sub(100)..];
        log.window_means
            .push(window.iter().sum::<f64>() / window.len() as f64);
    }
    log
}
