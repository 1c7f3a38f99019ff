use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{compute_gae, GaeConfig};
use crate::math;
use crate::nn::{NetworkSpec, RecurrentState};
use crate::{Error, Result};

/// One recorded team decision.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryStep {
    /// Agent-major observations, `agents × obs_width`.
    pub obs: Vec<f64>,
    pub global: Vec<f64>,
    pub actions: Vec<usize>,
    /// Behaviour log-probabilities of `actions`.
    pub old_log_probs: Vec<f64>,
    /// Agent-major legal masks, `agents × num_actions`.
    pub masks: Vec<bool>,
    /// Policy recurrent state of each agent before this step.
    pub policy_states: Vec<RecurrentState>,
    /// Value recurrent state before this step.
    pub value_state: RecurrentState,
    /// Shared team reward received after this step.
    pub reward: f64,
    pub value: f64,
    /// The episode ended after this step.
    pub done: bool,
}

impl TrajectoryStep {
    pub fn agents(&self) -> usize {
        self.actions.len()
    }
}

/// Contiguous steps from one environment instance. Episodes may continue
/// past the end; `bootstrap_value` is the value of the state that follows.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Chunk {
    pub steps: Vec<TrajectoryStep>,
    pub bootstrap_value: f64,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Advantage and return targets, per chunk and step.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

/// Chunks collected for one update. Every chunk length is a multiple of the
/// BPTT length, so windows never straddle a chunk boundary.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    chunks: Vec<Chunk>,
    bptt: usize,
    agents: usize,
}

impl RolloutBuffer {
    pub fn new(bptt: usize) -> Self {
        RolloutBuffer {
            chunks: Vec::new(),
            bptt: bptt.max(1),
            agents: 0,
        }
    }

    pub fn bptt(&self) -> usize {
        self.bptt
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.chunks.iter().map(Chunk::len).sum()
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
    }

    pub fn push(&mut self, chunk: Chunk) -> Result<()> {
        if chunk.is_empty() || chunk.len() % self.bptt != 0 {
            return Err(Error::Precondition(format!(
                "chunk of {} steps is not a positive multiple of the BPTT length {}",
                chunk.len(),
                self.bptt
            )));
        }
        let n = chunk.steps[0].agents();
        if self.agents != 0 && n != self.agents {
            return Err(Error::Shape(format!("chunk with {n} agents in a buffer of {}", self.agents)));
        }
        for (t, s) in chunk.steps.iter().enumerate() {
            if s.agents() != n || s.old_log_probs.len() != n || s.policy_states.len() != n {
                return Err(Error::Shape(format!("step {t} has an inconsistent agent count")));
            }
            if s.old_log_probs.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("behaviour log-prob at step {t}")));
            }
        }
        self.agents = n;
        self.chunks.push(chunk);
        Ok(())
    }

    /// `(chunk, start)` of every BPTT window.
    pub fn windows(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ci, c) in self.chunks.iter().enumerate() {
            for s in (0..c.len()).step_by(self.bptt) {
                out.push((ci, s));
            }
        }
        out
    }

    /// GAE targets, with advantages optionally standardised over the whole
    /// buffer.
    pub fn advantages(&self, cfg: &GaeConfig, normalize: bool) -> Targets {
        let mut advantages = Vec::with_capacity(self.chunks.len());
        let mut returns = Vec::with_capacity(self.chunks.len());
        for c in &self.chunks {
            let r: Vec<f64> = c.steps.iter().map(|s| s.reward).collect();
            let v: Vec<f64> = c.steps.iter().map(|s| s.value).collect();
            let d: Vec<bool> = c.steps.iter().map(|s| s.done).collect();
            let (a, ret) = compute_gae(&r, &v, &d, c.bootstrap_value, cfg);
            advantages.push(a);
            returns.push(ret);
        }
        if normalize {
            let n = self.total_steps() as f64;
            let mean = advantages.iter().flatten().sum::<f64>() / n;
            let var = advantages.iter().flatten().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let scale = 1.0 / (math::sqrt(var) + 1e-8);
            for a in advantages.iter_mut().flatten() {
                *a = (*a - mean) * scale;
            }
        }
        Targets { advantages, returns }
    }

    /// Gathers windows into a time-major batch.
    pub fn batch(&self, windows: &[(usize, usize)], targets: &Targets) -> Result<SeqBatch> {
        let n = self.agents;
        let len = self.bptt;
        let m = windows.len();
        let mut b = SeqBatch::empty(m, len, n);
        for &(ci, start) in windows {
            let chunk = self.chunks.get(ci).ok_or_else(|| Error::Precondition("window outside buffer".into()))?;
            let entry = &chunk.steps[start];
            for s in &entry.policy_states {
                b.policy_h0.extend_from_slice(&s.h);
                b.policy_c0.extend_from_slice(&s.c);
            }
            b.value_h0.extend_from_slice(&entry.value_state.h);
            b.value_c0.extend_from_slice(&entry.value_state.c);
            b.player_ids.extend(0..n);
            for t in 0..len {
                let s = &chunk.steps[start + t];
                b.obs[t].extend_from_slice(&s.obs);
                b.masks[t].extend_from_slice(&s.masks);
                b.actions[t].extend_from_slice(&s.actions);
                b.old_log_probs[t].extend_from_slice(&s.old_log_probs);
                b.globals[t].extend_from_slice(&s.global);
                b.advantages[t].push(targets.advantages[ci][start + t]);
                b.returns[t].push(targets.returns[ci][start + t]);
                b.old_values[t].push(s.value);
                let reset = t > 0 && chunk.steps[start + t - 1].done;
                b.resets[t].push(if reset { 0.0 } else { 1.0 });
            }
        }
        Ok(b)
    }
}

/// Time-major minibatch of BPTT windows. Row `w·agents + i` of each
/// per-agent array belongs to agent `i` of window `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    pub windows: usize,
    pub len: usize,
    pub agents: usize,
    pub player_ids: Vec<usize>,
    pub policy_h0: Vec<f64>,
    pub policy_c0: Vec<f64>,
    pub value_h0: Vec<f64>,
    pub value_c0: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub actions: Vec<Vec<usize>>,
    pub old_log_probs: Vec<Vec<f64>>,
    pub globals: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub old_values: Vec<Vec<f64>>,
    /// Multiplier applied to the recurrent state entering step `t` (0 after
    /// an episode boundary).
    pub resets: Vec<Vec<f64>>,
}

impl SeqBatch {
    fn empty(windows: usize, len: usize, agents: usize) -> Self {
        fn per_t<T: Clone>(len: usize) -> Vec<Vec<T>> {
            vec![Vec::new(); len]
        }
        SeqBatch {
            windows,
            len,
            agents,
            player_ids: Vec::new(),
            policy_h0: Vec::new(),
            policy_c0: Vec::new(),
            value_h0: Vec::new(),
            value_c0: Vec::new(),
            obs: per_t(len),
            masks: per_t(len),
            actions: per_t(len),
            old_log_probs: per_t(len),
            globals: per_t(len),
            advantages: per_t(len),
            returns: per_t(len),
            old_values: per_t(len),
            resets: per_t(len),
        }
    }

    /// Number of team timesteps (`windows × len`).
    pub fn rows(&self) -> usize {
        self.windows * self.len
    }
}

pub(super) fn toy_batch<R: Rng + ?Sized>(spec: &NetworkSpec, steps: usize, rng: &mut R) -> SeqBatch {
    let windows = 2;
    let n = spec.num_agents;
    let a = spec.num_actions;
    let hw = spec.hidden_width;
    let gauss = |rng: &mut R, k: usize, s: f64| -> Vec<f64> {
        (0..k).map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng)).collect()
    };
    let mut b = SeqBatch::empty(windows, steps, n);
    b.player_ids = (0..windows).flat_map(|_| 0..n).collect();
    b.policy_h0 = gauss(rng, windows * n * hw, 0.5);
    b.policy_c0 = gauss(rng, windows * n * hw, 0.5);
    b.value_h0 = gauss(rng, windows * hw, 0.5);
    b.value_c0 = gauss(rng, windows * hw, 0.5);
    for t in 0..steps {
        b.obs[t] = gauss(rng, windows * n * spec.obs_width(), 1.0);
        b.globals[t] = gauss(rng, windows * spec.global_state_width, 1.0);
        for _ in 0..windows * n {
            let mut row: Vec<bool> = (0..a).map(|_| rng.random_bool(0.7)).collect();
            let forced = rng.random_range(0..a);
            row[forced] = true;
            let legal: Vec<usize> = (0..a).filter(|&j| row[j]).collect();
            b.actions[t].push(legal[rng.random_range(0..legal.len())]);
            b.masks[t].extend(row);
        }
        b.old_log_probs[t] = gauss(rng, windows * n, 0.3).into_iter().map(|x| x - 1.0).collect();
        b.advantages[t] = gauss(rng, windows, 1.0);
        b.returns[t] = gauss(rng, windows, 1.0);
        b.old_values[t] = gauss(rng, windows, 1.0);
        b.resets[t] = (0..windows).map(|w| if t == 1 && w == 0 { 0.0 } else { 1.0 }).collect();
    }
    b
}
