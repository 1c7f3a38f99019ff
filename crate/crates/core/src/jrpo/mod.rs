//! Joint-ratio policy optimisation over recurrent rollouts.
//!
//! The surrogate uses a single importance ratio per timestep: the product of
//! every agent's ratio, computed as the exponential of the summed log-ratio.
//! All agents share the team advantage. A per-agent mode (each agent's ratio
//! clipped on its own, surrogates averaged over agents) is available as the
//! baseline.

mod buffer;
mod loss;

pub use buffer::{Chunk, RolloutBuffer, SeqBatch, Targets, TrajectoryStep};
pub use loss::{policy_loss_graph, replay_log_probs, value_loss_graph, LossOutput, LossStats};

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::math;
use crate::nn::{AdamState, Gradients, Graph, PolicyNet, ValueNet};
use crate::{Error, Result};

/// Log-ratios are clamped to this magnitude before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig {
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gae.gamma", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("gae.lambda", "must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RatioMode {
    /// One ratio per timestep: the product over agents.
    Joint,
    /// One ratio per agent, surrogates averaged over agents.
    PerAgent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ClipConfig {
    pub epsilon: f64,
    pub ratio_mode: RatioMode,
    /// Value-clip range; `f64::INFINITY` disables clipping.
    pub value_clip: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            epsilon: 0.2,
            ratio_mode: RatioMode::Joint,
            value_clip: 0.2,
            entropy_coef: 0.01,
            max_grad_norm: 10.0,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("clip.epsilon", "must be > 0"));
        }
        if !(self.value_clip > 0.0) {
            return Err(Error::config("clip.value_clip", "must be > 0"));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(Error::config("clip.entropy_coef", "must be >= 0"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("clip.max_grad_norm", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatches: usize,
    pub bptt: usize,
    pub lr: f64,
    pub value_lr: f64,
    pub normalize_advantages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            minibatches: 4,
            bptt: 25,
            lr: AdamState::DEFAULT_LR,
            value_lr: AdamState::DEFAULT_LR,
            normalize_advantages: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.minibatches == 0 {
            return Err(Error::config("train.minibatches", "must be >= 1"));
        }
        if self.bptt == 0 {
            return Err(Error::config("train.bptt", "must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.value_lr >= 0.0 && self.value_lr.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Generalised advantage estimation over one contiguous sequence.
///
/// `bootstrap` is the value of the state following the last step; it is
/// ignored when that step is terminal.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, cfg: &GaeConfig) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + cfg.gamma * next_value * live - values[t];
        next_adv = delta + cfg.gamma * cfg.lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Product of per-agent ratios, computed as `exp(Σ (new − old))` with the
/// log-ratio clamped to ±[`LOG_RATIO_CLAMP`].
pub fn joint_ratio(new_log_probs: &[f64], old_log_probs: &[f64]) -> f64 {
    let s: f64 = new_log_probs.iter().zip(old_log_probs).map(|(n, o)| n - o).sum();
    math::exp(s.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
}

/// Clipped surrogate `min(r·Â, clip(r, 1−ε, 1+ε)·Â)` of one element.
pub fn clipped_surrogate(ratio: f64, adv: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * adv).min(clipped * adv)
}

/// Clipped value loss: mean of `max((v − R)², (v_old + clip(v − v_old) − R)²)`.
pub fn value_loss(new: &[f64], returns: &[f64], old: &[f64], clip: f64) -> f64 {
    let n = new.len();
    if n == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let unclipped = (new[i] - returns[i]) * (new[i] - returns[i]);
        let v = old[i] + (new[i] - old[i]).clamp(-clip, clip);
        let clipped = (v - returns[i]) * (v - returns[i]);
        s += unclipped.max(clipped);
    }
    s / n as f64
}

/// Fans independent work items out over workers. Results come back in item
/// order regardless of scheduling, which keeps sharded updates
/// deterministic.
pub trait Parallel {
    fn workers(&self) -> usize;
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync;
}

/// Runs everything on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl Parallel for Serial {
    fn workers(&self) -> usize {
        1
    }

    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync,
    {
        items.into_iter().map(f).collect()
    }
}

/// Per-update training metrics.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub grad_norm: f64,
    pub value_grad_norm: f64,
    pub ratio_clamp_events: u64,
    pub samples: usize,
    pub minibatch_steps: usize,
}

/// Policy and value networks with their optimisers.
#[derive(Clone, Debug)]
pub struct Learner {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub policy_opt: AdamState,
    pub value_opt: AdamState,
}

impl Learner {
    pub fn new(policy: PolicyNet, value: ValueNet, cfg: &TrainConfig) -> Self {
        let policy_opt = AdamState::new(policy.params(), cfg.lr);
        let value_opt = AdamState::new(value.params(), cfg.value_lr);
        Learner {
            policy,
            value,
            policy_opt,
            value_opt,
        }
    }
}

struct ShardResult {
    policy_grads: Gradients,
    value_grads: Gradients,
    stats: LossStats,
}

/// Runs `cfg.epochs` passes over the buffer. Each pass shuffles the BPTT
/// windows into `cfg.minibatches` minibatches; every minibatch re-runs the
/// networks from the stored entry hidden states, takes one clipped Adam step
/// on each network, and the behaviour log-probs stay those of the rollout.
pub fn train_epoch<R: Rng + ?Sized, P: Parallel>(
    learner: &mut Learner,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    clip: &ClipConfig,
    gae: &GaeConfig,
    rng: &mut R,
    exec: &P,
) -> Result<UpdateMetrics> {
    if buffer.is_empty() {
        return Ok(UpdateMetrics::default());
    }
    if buffer.bptt() != cfg.bptt {
        return Err(Error::Precondition("buffer BPTT length differs from the training config".into()));
    }
    let targets = buffer.advantages(gae, cfg.normalize_advantages);
    let mut windows = buffer.windows();
    let per_mb = windows.len().div_ceil(cfg.minibatches);
    let mut metrics = UpdateMetrics {
        samples: buffer.total_steps(),
        ..UpdateMetrics::default()
    };
    let mut totals = LossStats::default();
    let mut norm_sum = 0.0;
    let mut vnorm_sum = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        windows.shuffle(rng);
        for mb in windows.chunks(per_mb) {
            let shards = exec.workers().clamp(1, mb.len());
            let per_shard = mb.len().div_ceil(shards);
            let denom = (mb.len() * cfg.bptt) as f64;
            let parts: Vec<&[(usize, usize)]> = mb.chunks(per_shard).collect();
            let policy = &learner.policy;
            let value = &learner.value;
            let results = exec.map(parts, |part| -> Result<ShardResult> {
                let batch = buffer.batch(part, &targets)?;
                let mut g = Graph::new(policy.params());
                let out = policy_loss_graph(&mut g, policy, &batch, clip, denom)?;
                let policy_grads = g.backward(out.loss)?;
                let mut stats = out.stats;
                drop(g);
                let mut g = Graph::new(value.params());
                let vout = value_loss_graph(&mut g, value, &batch, clip.value_clip, denom)?;
                let value_grads = g.backward(vout.loss)?;
                stats.value_sum = vout.stats.value_sum;
                Ok(ShardResult {
                    policy_grads,
                    value_grads,
                    stats,
                })
            });
            let mut pg = Gradients::zeros_like(learner.policy.params());
            let mut vg = Gradients::zeros_like(learner.value.params());
            for r in results {
                let r = r?;
                pg.add_assign(&r.policy_grads);
                vg.add_assign(&r.value_grads);
                totals.add(&r.stats);
            }
            learner.policy.params_mut().set_grads(pg)?;
            norm_sum += learner.policy.params_mut().clip_grad_norm(clip.max_grad_norm);
            learner.policy_opt.step(learner.policy.params_mut())?;
            learner.value.params_mut().set_grads(vg)?;
            vnorm_sum += learner.value.params_mut().clip_grad_norm(clip.max_grad_norm);
            learner.value_opt.step(learner.value.params_mut())?;
            learner.policy.params_mut().clear_grads();
            learner.value.params_mut().clear_grads();
            steps += 1;
        }
    }
    let n = totals.steps.max(1) as f64;
    let rows = totals.ratio_count.max(1) as f64;
    let agent_rows = totals.agent_rows.max(1) as f64;
    metrics.policy_loss = -totals.surrogate_sum / n - clip.entropy_coef * totals.entropy_sum / agent_rows;
    metrics.value_loss = totals.value_sum / n;
    metrics.entropy = totals.entropy_sum / agent_rows;
    metrics.clip_fraction = totals.clipped as f64 / rows;
    metrics.mean_ratio = totals.ratio_sum / rows;
    metrics.grad_norm = norm_sum / steps.max(1) as f64;
    metrics.value_grad_norm = vnorm_sum / steps.max(1) as f64;
    metrics.ratio_clamp_events = totals.clamp_events;
    metrics.minibatch_steps = steps;
    Ok(metrics)
}

/// Random toy batch for gradient checks: `steps`-long windows of two
/// sequences with an episode boundary after the first step.
pub fn toy_batch<R: Rng + ?Sized>(spec: &crate::nn::NetworkSpec, steps: usize, rng: &mut R) -> SeqBatch {
    buffer::toy_batch(spec, steps, rng)
}
