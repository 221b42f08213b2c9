//! TD3 training: twin critics, replay buffer, target networks, delayed
//! actor updates and the environment loop.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actor::{ActorError, ActorParams, DenseActor, EnvSpec, ForwardTrace};
use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointError};
use crate::envs::{Env, EnvError};
use crate::grad::{self, ActorGrads};
use crate::math::{soft_update, Activation, Adam, MathError, Mlp, MlpCache, MlpGrads, ParamBlocks, RealArray, RngStream, StreamId};

const CRITIC_INIT: StreamId = StreamId::Custom(0xC217);

#[derive(Debug, thiserror::Error)]
pub enum Td3Error {
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("transition has wrong dimensions: {0}")]
    Dim(String),
    #[error("non-finite {what} at update {update}; offending batch dumped ({} bytes)", dump.len())]
    NonFinite { what: String, update: u64, dump: String },
    #[error("bad training config: {0}")]
    Config(String),
    #[error("environment failure at step {step}: {source}")]
    Env {
        step: u64,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("run log i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub gamma: f64,
    /// Learning rate for the spiking actor.
    pub actor_lr: f64,
    /// Learning rate for the dense baseline actor.
    pub dense_actor_lr: f64,
    pub critic_lr: f64,
    pub explore_sigma: f64,
    pub smooth_sigma: f64,
    pub noise_clip: f64,
    pub tau: f64,
    pub batch: usize,
    pub policy_delay: u64,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub critic_hidden: Vec<usize>,
    /// Stop once an evaluation reaches this mean return.
    pub stop_at_return: Option<f64>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 1e-4,
            dense_actor_lr: 1e-3,
            critic_lr: 1e-3,
            explore_sigma: 0.1,
            smooth_sigma: 0.2,
            noise_clip: 0.5,
            tau: 0.005,
            batch: 100,
            policy_delay: 2,
            buffer_capacity: 1_000_000,
            warmup_steps: 10_000,
            total_steps: 1_000_000,
            eval_every: 10_000,
            eval_episodes: 10,
            critic_hidden: CriticParams::HIDDEN.to_vec(),
            stop_at_return: None,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), Td3Error> {
        let bad = |m: &str| Err(Td3Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("dense_actor_lr", self.dense_actor_lr),
            ("critic_lr", self.critic_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Td3Error::Config(format!("{name} must be positive")));
            }
        }
        // Zero noise is allowed so runs can be made fully deterministic.
        for (name, x) in [
            ("explore_sigma", self.explore_sigma),
            ("smooth_sigma", self.smooth_sigma),
            ("noise_clip", self.noise_clip),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Td3Error::Config(format!("{name} must be non-negative")));
            }
        }
        if self.batch == 0 || self.policy_delay == 0 || self.buffer_capacity == 0 {
            return bad("batch, policy_delay and buffer_capacity must be positive");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return bad("critic_hidden needs at least one non-empty layer");
        }
        Ok(())
    }
}

/// Two independent Q networks `(N+M) → hidden… → 1` with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub q1: Mlp,
    pub q2: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticGrads {
    pub q1: MlpGrads,
    pub q2: MlpGrads,
}

fn prefixed<'a>(tag: &str, blocks: Vec<(String, &'a RealArray)>) -> Vec<(String, &'a RealArray)> {
    blocks.into_iter().map(|(n, b)| (format!("{tag}.{n}"), b)).collect()
}

impl ParamBlocks for CriticParams {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        let mut v = prefixed("q1", self.q1.blocks());
        v.extend(prefixed("q2", self.q2.blocks()));
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        let mut v = self.q1.blocks_mut();
        v.extend(self.q2.blocks_mut());
        v
    }
}

impl ParamBlocks for CriticGrads {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        let mut v = prefixed("q1", self.q1.blocks());
        v.extend(prefixed("q2", self.q2.blocks()));
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        let mut v = self.q1.blocks_mut();
        v.extend(self.q2.blocks_mut());
        v
    }
}

/// Row-wise concatenation `[s | a]`.
pub fn critic_input(states: &[f64], actions: &[f64], batch: usize, n: usize, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (n + m));
    for b in 0..batch {
        out.extend_from_slice(&states[b * n..(b + 1) * n]);
        out.extend_from_slice(&actions[b * m..(b + 1) * m]);
    }
    out
}

/// Q value of a single state-action pair.
pub fn critic_forward(s: &[f64], a: &[f64], critic: &Mlp) -> f64 {
    critic.forward(&critic_input(s, a, 1, s.len(), a.len()))[0]
}

impl CriticParams {
    pub const HIDDEN: [usize; 2] = [256, 256];

    pub fn new(spec: &EnvSpec, hidden: &[usize], rng: &mut RngStream) -> Self {
        let mut dims = vec![spec.n + spec.m];
        dims.extend(hidden);
        dims.push(1);
        let q1 = Mlp::new(&dims, Activation::Relu, Activation::Identity, rng);
        let q2 = Mlp::new(&dims, Activation::Relu, Activation::Identity, rng);
        Self { q1, q2 }
    }

    /// Both critics on a `[B × (N+M)]` input.
    pub fn forward_batch(&self, sa: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        (self.q1.forward_batch(sa, batch), self.q2.forward_batch(sa, batch))
    }

    /// Loss `mean (Q1−y)² + mean (Q2−y)²` and its gradients.
    pub fn loss_and_grads(&self, sa: &[f64], y: &[f64]) -> (f64, CriticGrads) {
        let batch = y.len();
        let inv = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut half = |net: &Mlp| {
            let cache = net.forward_cached(sa, batch);
            let g: Vec<f64> = cache.output().iter().zip(y).map(|(q, t)| 2.0 * (q - t) * inv).collect();
            loss += cache.output().iter().zip(y).map(|(q, t)| (q - t) * (q - t)).sum::<f64>() * inv;
            net.backward(&cache, &g).0
        };
        let q1 = half(&self.q1);
        let q2 = half(&self.q2);
        (loss, CriticGrads { q1, q2 })
    }
}

/// Anything TD3 can train as the actor.
pub trait Policy: ParamBlocks + Clone {
    type Grads: ParamBlocks;
    type Tape;

    fn env_spec(&self) -> &EnvSpec;
    fn act_batch(&self, states: &[f64], batch: usize) -> Result<Vec<f64>, ActorError>;
    /// Forward pass that keeps what the backward pass needs.
    fn act_recorded(&self, states: &[f64], batch: usize) -> Result<(Vec<f64>, Self::Tape), ActorError>;
    /// Parameter gradients of `Σ dl_da·a` over the recorded batch.
    fn grads(&self, tape: &Self::Tape, dl_da: &[f64]) -> Result<Self::Grads, ActorError>;
    fn learning_rate(&self, cfg: &Td3Config) -> f64;
    fn to_checkpoint(&self) -> Checkpoint;
}

impl Policy for ActorParams {
    type Grads = ActorGrads;
    type Tape = ForwardTrace;

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn act_batch(&self, states: &[f64], batch: usize) -> Result<Vec<f64>, ActorError> {
        Ok(self.forward_batch(states, batch)?.actions)
    }

    fn act_recorded(&self, states: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardTrace), ActorError> {
        let trace = self.forward_batch(states, batch)?;
        Ok((trace.actions.clone(), trace))
    }

    fn grads(&self, tape: &ForwardTrace, dl_da: &[f64]) -> Result<ActorGrads, ActorError> {
        grad::backward(self, tape, dl_da)
    }

    fn learning_rate(&self, cfg: &Td3Config) -> f64 {
        cfg.actor_lr
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::Spiking(self.clone())
    }
}

impl Policy for DenseActor {
    type Grads = MlpGrads;
    type Tape = MlpCache;

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn act_batch(&self, states: &[f64], batch: usize) -> Result<Vec<f64>, ActorError> {
        self.forward_batch(states, batch)
    }

    fn act_recorded(&self, states: &[f64], batch: usize) -> Result<(Vec<f64>, MlpCache), ActorError> {
        if states.len() != batch * self.spec.n {
            return Err(ActorError::StateDim {
                expected: batch * self.spec.n,
                got: states.len(),
            });
        }
        let cache = self.net.forward_cached(states, batch);
        let mut a = cache.output().to_vec();
        self.scale(&mut a);
        Ok((a, cache))
    }

    fn grads(&self, tape: &MlpCache, dl_da: &[f64]) -> Result<MlpGrads, ActorError> {
        let m = self.spec.m;
        if dl_da.len() != tape.batch * m {
            return Err(ActorError::TraceMismatch(format!(
                "dl_da has {} entries, expected {}",
                dl_da.len(),
                tape.batch * m
            )));
        }
        let g: Vec<f64> = dl_da
            .iter()
            .enumerate()
            .map(|(k, g)| g * 0.5 * (self.spec.high[k % m] - self.spec.low[k % m]))
            .collect();
        Ok(self.net.backward(tape, &g).0)
    }

    fn learning_rate(&self, cfg: &Td3Config) -> f64 {
        cfg.dense_actor_lr
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::Dense(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
}

/// Sampled minibatch, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Batch {
    pub size: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub s2: Vec<f64>,
    /// 1.0 for terminal transitions.
    pub done: Vec<f64>,
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    n: usize,
    m: usize,
    capacity: usize,
    len: usize,
    head: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    s2: Vec<f64>,
    done: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(n: usize, m: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            n,
            m,
            capacity,
            len: 0,
            head: 0,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            s2: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), Td3Error> {
        if t.s.len() != self.n || t.s2.len() != self.n || t.a.len() != self.m {
            return Err(Td3Error::Dim(format!(
                "s {} / a {} / s' {}, buffer holds N = {}, M = {}",
                t.s.len(),
                t.a.len(),
                t.s2.len(),
                self.n,
                self.m
            )));
        }
        if !t.r.is_finite() {
            return Err(Td3Error::Dim(format!("reward {} is not finite", t.r)));
        }
        let (n, m, i) = (self.n, self.m, self.head);
        let done = if t.done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.s.extend_from_slice(&t.s);
            self.a.extend_from_slice(&t.a);
            self.r.push(t.r);
            self.s2.extend_from_slice(&t.s2);
            self.done.push(done);
            self.len += 1;
        } else {
            self.s[i * n..(i + 1) * n].copy_from_slice(&t.s);
            self.a[i * m..(i + 1) * m].copy_from_slice(&t.a);
            self.r[i] = t.r;
            self.s2[i * n..(i + 1) * n].copy_from_slice(&t.s2);
            self.done[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    fn slot(&self, k: usize) -> usize {
        if self.len < self.capacity {
            k
        } else {
            (self.head + k) % self.capacity
        }
    }

    /// The `k`-th oldest stored transition.
    pub fn get(&self, k: usize) -> Option<Transition> {
        if k >= self.len {
            return None;
        }
        let (i, n, m) = (self.slot(k), self.n, self.m);
        Some(Transition {
            s: self.s[i * n..(i + 1) * n].to_vec(),
            a: self.a[i * m..(i + 1) * m].to_vec(),
            r: self.r[i],
            s2: self.s2[i * n..(i + 1) * n].to_vec(),
            done: self.done[i] != 0.0,
        })
    }

    /// Storage slots drawn uniformly with replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut RngStream) -> Result<Vec<usize>, Td3Error> {
        if self.len == 0 {
            return Err(Td3Error::EmptyBuffer);
        }
        Ok((0..k).map(|_| rng.below(self.len)).collect())
    }

    pub fn sample(&self, k: usize, rng: &mut RngStream) -> Result<Batch, Td3Error> {
        let idx = self.sample_indices(k, rng)?;
        let (n, m) = (self.n, self.m);
        let mut b = Batch {
            size: k,
            s: Vec::with_capacity(k * n),
            a: Vec::with_capacity(k * m),
            r: Vec::with_capacity(k),
            s2: Vec::with_capacity(k * n),
            done: Vec::with_capacity(k),
        };
        for i in idx {
            b.s.extend_from_slice(&self.s[i * n..(i + 1) * n]);
            b.a.extend_from_slice(&self.a[i * m..(i + 1) * m]);
            b.r.push(self.r[i]);
            b.s2.extend_from_slice(&self.s2[i * n..(i + 1) * n]);
            b.done.push(self.done[i]);
        }
        Ok(b)
    }
}

/// Clipped double-Q target with target-policy smoothing.
pub fn td3_target<P: Policy>(
    batch: &Batch,
    target_actor: &P,
    target_critics: &CriticParams,
    cfg: &Td3Config,
    rng: &mut RngStream,
) -> Result<Vec<f64>, ActorError> {
    let spec = target_actor.env_spec();
    let (n, m) = (spec.n, spec.m);
    let mut a2 = target_actor.act_batch(&batch.s2, batch.size)?;
    for a in a2.iter_mut() {
        let eps = (cfg.smooth_sigma * rng.normal()).clamp(-cfg.noise_clip, cfg.noise_clip);
        *a += eps;
    }
    spec.clamp(&mut a2);
    let sa = critic_input(&batch.s2, &a2, batch.size, n, m);
    let (q1, q2) = target_critics.forward_batch(&sa, batch.size);
    Ok((0..batch.size)
        .map(|b| batch.r[b] + cfg.gamma * (1.0 - batch.done[b]) * q1[b].min(q2[b]))
        .collect())
}

/// Live and target networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct Td3Nets<P: Policy> {
    pub actor: P,
    pub actor_target: P,
    pub critic: CriticParams,
    pub critic_target: CriticParams,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    /// Number of `td3_update` calls so far.
    pub updates: u64,
    pub actor_updates: u64,
}

impl<P: Policy> Td3Nets<P> {
    pub fn new(actor: P, critic: CriticParams, cfg: &Td3Config) -> Self {
        let actor_opt = Adam::new(&actor, actor.learning_rate(cfg));
        let critic_opt = Adam::new(&critic, cfg.critic_lr);
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            updates: 0,
            actor_updates: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub critic: f64,
    pub actor: Option<f64>,
}

fn non_finite(what: impl Into<String>, update: u64, batch: &Batch) -> Td3Error {
    Td3Error::NonFinite {
        what: what.into(),
        update,
        dump: serde_json::to_string(batch).unwrap_or_else(|e| format!("unserializable batch: {e}")),
    }
}

fn adam_failure(e: MathError, net: &str, update: u64, batch: &Batch) -> Td3Error {
    match e {
        MathError::NonFinite { block } => non_finite(format!("{net} gradient in {block}"), update, batch),
        other => Td3Error::Config(format!("{net} optimizer: {other}")),
    }
}

/// One critic step and, every `policy_delay` calls, one actor step followed
/// by soft target updates.
pub fn td3_update<P: Policy>(
    nets: &mut Td3Nets<P>,
    batch: &Batch,
    cfg: &Td3Config,
    rng: &mut RngStream,
) -> Result<Losses, Td3Error> {
    nets.updates += 1;
    let update = nets.updates;
    let spec = nets.actor.env_spec().clone();
    let (n, m, bsz) = (spec.n, spec.m, batch.size);

    let y = td3_target(batch, &nets.actor_target, &nets.critic_target, cfg, rng)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("critic target", update, batch));
    }
    let sa = critic_input(&batch.s, &batch.a, bsz, n, m);
    let (critic_loss, cgrads) = nets.critic.loss_and_grads(&sa, &y);
    if !critic_loss.is_finite() {
        return Err(non_finite("critic loss", update, batch));
    }
    nets.critic_opt
        .step(&mut nets.critic, &cgrads)
        .map_err(|e| adam_failure(e, "critic", update, batch))?;

    if update % cfg.policy_delay != 0 {
        return Ok(Losses {
            critic: critic_loss,
            actor: None,
        });
    }

    let (actions, tape) = nets.actor.act_recorded(&batch.s, bsz)?;
    let sa = critic_input(&batch.s, &actions, bsz, n, m);
    let cache = nets.critic.q1.forward_cached(&sa, bsz);
    let actor_loss = -cache.output().iter().sum::<f64>() / bsz as f64;
    if !actor_loss.is_finite() {
        return Err(non_finite("actor loss", update, batch));
    }
    let (_, g_in) = nets.critic.q1.backward(&cache, &vec![-1.0 / bsz as f64; bsz]);
    let dl_da: Vec<f64> = g_in.chunks_exact(n + m).flat_map(|row| row[n..].iter().copied()).collect();
    let agrads = nets.actor.grads(&tape, &dl_da)?;
    nets.actor_opt
        .step(&mut nets.actor, &agrads)
        .map_err(|e| adam_failure(e, "actor", update, batch))?;
    nets.actor_updates += 1;

    soft_update(&mut nets.actor_target, &nets.actor, cfg.tau);
    soft_update(&mut nets.critic_target, &nets.critic, cfg.tau);
    Ok(Losses {
        critic: critic_loss,
        actor: Some(actor_loss),
    })
}

/// Reset seeds used by [`evaluate`] for a given evaluation seed.
pub fn eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = RngStream::new(seed, StreamId::Evaluation);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

/// Mean undiscounted return of the deterministic policy.
pub fn evaluate<P: Policy>(actor: &P, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<f64, Td3Error> {
    let cap = env.episode_cap();
    let mut total = 0.0;
    for (k, reset_seed) in eval_seeds(seed, episodes).into_iter().enumerate() {
        let ctx = |source| Td3Error::Env { step: k as u64, source };
        let mut s = env.reset(reset_seed).map_err(ctx)?;
        for _ in 0..cap {
            let a = actor.act_batch(&s, 1)?;
            let st = env.step(&a).map_err(ctx)?;
            total += st.reward;
            s = st.obs;
            if st.done {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub eval_mean_reward: f64,
    /// Mean over the updates since the previous row; `None` if there were none.
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl RunLog {
    pub const HEADER: &'static str = "step,eval_mean_reward,actor_loss,critic_loss,wall_seconds";

    pub fn csv_line(row: &LogRow) -> String {
        format!(
            "{},{},{},{},{}",
            row.step,
            row.eval_mean_reward,
            opt_field(row.actor_loss),
            opt_field(row.critic_loss),
            row.wall_seconds
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", Self::csv_line(row));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == Self::HEADER => {}
            other => return Err(format!("unexpected run log header {other:?}")),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 fields, got {}", i + 2, f.len()));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            let opt = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
            rows.push(LogRow {
                step: f[0].trim().parse().map_err(|e| format!("line {}: {e}", i + 2))?,
                eval_mean_reward: num(f[1])?,
                actor_loss: opt(f[2])?,
                critic_loss: opt(f[3])?,
                wall_seconds: num(f[4])?,
            });
        }
        Ok(Self { rows })
    }

    /// Best evaluation over the run.
    pub fn max_eval(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.eval_mean_reward).reduce(f64::max)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Writes zero wall times so reruns produce identical logs.
    pub strict: bool,
    /// Directory receiving `run_log.csv` and the checkpoints.
    pub out_dir: Option<PathBuf>,
}

pub struct TrainResult<P: Policy> {
    pub log: RunLog,
    pub initial: Checkpoint,
    pub final_checkpoint: Checkpoint,
    pub nets: Td3Nets<P>,
    pub env_steps: u64,
}

pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const INITIAL_CHECKPOINT: &str = "checkpoint_initial.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";

struct LogSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogSink {
    fn open(dir: &Path) -> Result<Self, Td3Error> {
        let path = dir.join(RUN_LOG_FILE);
        let io = |source| Td3Error::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(out, "{}", RunLog::HEADER).map_err(io)?;
        out.flush().map_err(io)?;
        Ok(Self { path, out })
    }

    fn write(&mut self, row: &LogRow) -> Result<(), Td3Error> {
        let r = writeln!(self.out, "{}", RunLog::csv_line(row)).and_then(|_| self.out.flush());
        r.map_err(|source| Td3Error::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.count > 0).then(|| self.sum / self.count as f64);
        *self = Self::default();
        out
    }
}

/// Full TD3 loop: warmup with uniform actions, noisy actor actions after,
/// one update per environment step, periodic evaluation on `eval_env`.
///
/// An episode that ends because it hit the environment's step cap is stored
/// as non-terminal.
pub fn train<P: Policy>(
    actor: P,
    env: &mut dyn Env,
    eval_env: &mut dyn Env,
    cfg: &Td3Config,
    opts: &RunOptions,
) -> Result<TrainResult<P>, Td3Error> {
    cfg.validate()?;
    let spec = actor.env_spec().clone();
    if env.spec() != spec || eval_env.spec() != spec {
        return Err(Td3Error::Config(format!(
            "actor built for {spec:?}, environment reports {:?}",
            env.spec()
        )));
    }
    let seed = opts.seed;
    let mut init_rng = RngStream::new(seed, CRITIC_INIT);
    let critic = CriticParams::new(&spec, &cfg.critic_hidden, &mut init_rng);
    let mut nets = Td3Nets::new(actor, critic, cfg);
    let initial = nets.actor.to_checkpoint();

    let mut sink = None;
    if let Some(dir) = &opts.out_dir {
        sink = Some(LogSink::open(dir)?);
        save_checkpoint(&initial, &dir.join(INITIAL_CHECKPOINT))?;
    }

    let mut env_seeds = RngStream::new(seed, StreamId::Env);
    let mut explore = RngStream::new(seed, StreamId::Exploration);
    let mut sampler = RngStream::new(seed, StreamId::Sampler);
    let mut smoothing = RngStream::new(seed, StreamId::TargetNoise);
    let mut buffer = ReplayBuffer::new(spec.n, spec.m, cfg.buffer_capacity);
    let cap = env.episode_cap();
    let clock = Instant::now();

    let mut log = RunLog::default();
    let (mut actor_loss, mut critic_loss) = (Mean::default(), Mean::default());
    let mut s = Vec::new();
    let mut episode_steps = 0usize;
    let mut need_reset = true;
    let mut step = 0u64;

    while step < cfg.total_steps {
        step += 1;
        let env_err = |source| Td3Error::Env { step, source };
        if need_reset {
            s = env.reset(env_seeds.next_u64()).map_err(env_err)?;
            episode_steps = 0;
        }
        let mut a = if step <= cfg.warmup_steps {
            (0..spec.m)
                .map(|j| explore.uniform_range(spec.low[j], spec.high[j]))
                .collect()
        } else {
            let mut a = nets.actor.act_batch(&s, 1)?;
            for x in a.iter_mut() {
                *x += cfg.explore_sigma * explore.normal();
            }
            a
        };
        spec.clamp(&mut a);
        let st = env.step(&a).map_err(env_err)?;
        episode_steps += 1;
        let truncated = episode_steps >= cap;
        let terminal = st.done && !truncated;
        buffer.push(&Transition {
            s: std::mem::take(&mut s),
            a,
            r: st.reward,
            s2: st.obs.clone(),
            done: terminal,
        })?;
        s = st.obs;
        need_reset = st.done || truncated;

        if step > cfg.warmup_steps {
            let batch = buffer.sample(cfg.batch, &mut sampler)?;
            let losses = td3_update(&mut nets, &batch, cfg, &mut smoothing)?;
            critic_loss.add(losses.critic);
            if let Some(l) = losses.actor {
                actor_loss.add(l);
            }
        }

        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            let mean = evaluate(&nets.actor, eval_env, cfg.eval_episodes, seed)?;
            let row = LogRow {
                step,
                eval_mean_reward: mean,
                actor_loss: actor_loss.take(),
                critic_loss: critic_loss.take(),
                wall_seconds: if opts.strict { 0.0 } else { clock.elapsed().as_secs_f64() },
            };
            if let Some(sink) = sink.as_mut() {
                sink.write(&row)?;
            }
            log.rows.push(row);
            if cfg.stop_at_return.is_some_and(|t| mean >= t) {
                break;
            }
        }
    }

    let final_checkpoint = nets.actor.to_checkpoint();
    if let Some(dir) = &opts.out_dir {
        save_checkpoint(&final_checkpoint, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainResult {
        log,
        initial,
        final_checkpoint,
        nets,
        env_steps: step,
    })
}
