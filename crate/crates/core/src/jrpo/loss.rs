use alloc::format;
use alloc::vec::Vec;

use super::{ClipConfig, RatioMode, SeqBatch, LOG_RATIO_CLAMP};
use crate::nn::{Graph, PolicyNet, ValueNet, Var};
use crate::{Error, Result};

/// Unnormalised sums gathered while building a loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossStats {
    /// Σ min(r·Â, clip(r)·Â) over team timesteps (agent-averaged in
    /// per-agent mode).
    pub surrogate_sum: f64,
    /// Σ entropy over agent rows.
    pub entropy_sum: f64,
    pub value_sum: f64,
    pub ratio_sum: f64,
    pub ratio_count: u64,
    pub clipped: u64,
    pub clamp_events: u64,
    /// Team timesteps.
    pub steps: u64,
    /// Agent-timestep rows.
    pub agent_rows: u64,
}

impl LossStats {
    pub fn add(&mut self, o: &LossStats) {
        self.surrogate_sum += o.surrogate_sum;
        self.entropy_sum += o.entropy_sum;
        self.value_sum += o.value_sum;
        self.ratio_sum += o.ratio_sum;
        self.ratio_count += o.ratio_count;
        self.clipped += o.clipped;
        self.clamp_events += o.clamp_events;
        self.steps += o.steps;
        self.agent_rows += o.agent_rows;
    }
}

pub struct LossOutput {
    pub loss: Var,
    pub stats: LossStats,
}

fn accumulate(g: &mut Graph, total: Option<Var>, term: Var) -> Result<Var> {
    match total {
        Some(t) => g.add(t, term),
        None => Ok(term),
    }
}

/// Records the clipped-surrogate policy loss with entropy bonus:
/// `−Σ surrogate / denom − c_ent · Σ entropy / (denom · agents)`.
///
/// `denom` is the number of team timesteps the caller averages over, so
/// shards of one minibatch can be summed.
pub fn policy_loss_graph(
    g: &mut Graph,
    net: &PolicyNet,
    batch: &SeqBatch,
    clip: &ClipConfig,
    denom: f64,
) -> Result<LossOutput> {
    let n = batch.agents;
    let w = batch.windows;
    let rows = w * n;
    let hw = net.spec().hidden_width;
    let eps = clip.epsilon;
    let mut h = g.constant(rows, hw, batch.policy_h0.clone())?;
    let mut c = g.constant(rows, hw, batch.policy_c0.clone())?;
    let mut stats = LossStats::default();
    let mut surr_total = None;
    let mut plogp_total = None;
    for t in 0..batch.len {
        if t > 0 && batch.resets[t].iter().any(|&f| f != 1.0) {
            let f: Vec<f64> = (0..rows).map(|r| batch.resets[t][r / n]).collect();
            h = g.scale_rows(h, &f)?;
            c = g.scale_rows(c, &f)?;
        }
        let step = net.step_graph(g, &batch.obs[t], &batch.player_ids, h, c, &batch.masks[t])?;
        h = step.h;
        c = step.c;
        let lp = g.pick(step.log_probs, &batch.actions[t])?;
        let old = g.constant(rows, 1, batch.old_log_probs[t].clone())?;
        let d = g.sub(lp, old)?;
        let term = match clip.ratio_mode {
            RatioMode::Joint => {
                let s = g.sum_groups(d, n)?;
                stats.clamp_events += g.value(s).iter().filter(|x| x.abs() > LOG_RATIO_CLAMP).count() as u64;
                let s = g.clamp(s, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
                let r = g.exp(s);
                record_ratios(g, r, t, &mut stats, eps)?;
                let a = g.constant(w, 1, batch.advantages[t].clone())?;
                let m = surrogate(g, r, a, eps)?;
                g.sum_all(m)
            }
            RatioMode::PerAgent => {
                stats.clamp_events += g.value(d).iter().filter(|x| x.abs() > LOG_RATIO_CLAMP).count() as u64;
                let s = g.clamp(d, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
                let r = g.exp(s);
                record_ratios(g, r, t, &mut stats, eps)?;
                let adv: Vec<f64> = (0..rows).map(|r| batch.advantages[t][r / n]).collect();
                let a = g.constant(rows, 1, adv)?;
                let m = surrogate(g, r, a, eps)?;
                let m = g.sum_groups(m, n)?;
                let m = g.scale(m, 1.0 / n as f64);
                g.sum_all(m)
            }
        };
        stats.surrogate_sum += g.scalar(term);
        surr_total = Some(accumulate(g, surr_total, term)?);
        let p = g.exp(step.log_probs);
        let pl = g.mul(p, step.log_probs)?;
        let pl = g.sum_all(pl);
        stats.entropy_sum -= g.scalar(pl);
        plogp_total = Some(accumulate(g, plogp_total, pl)?);
        stats.steps += w as u64;
        stats.agent_rows += rows as u64;
    }
    let (Some(surr), Some(plogp)) = (surr_total, plogp_total) else {
        return Err(Error::Precondition("empty sequence batch".into()));
    };
    let a = g.scale(surr, -1.0 / denom);
    let b = g.scale(plogp, clip.entropy_coef / (denom * n as f64));
    let loss = g.add(a, b)?;
    Ok(LossOutput { loss, stats })
}

fn surrogate(g: &mut Graph, r: Var, a: Var, eps: f64) -> Result<Var> {
    let s1 = g.mul(r, a)?;
    let rc = g.clamp(r, 1.0 - eps, 1.0 + eps);
    let s2 = g.mul(rc, a)?;
    g.min(s1, s2)
}

fn record_ratios(g: &Graph, r: Var, t: usize, stats: &mut LossStats, eps: f64) -> Result<()> {
    for (i, &x) in g.value(r).iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("importance ratio at step {t}, row {i}")));
        }
        stats.ratio_sum += x;
        stats.ratio_count += 1;
        if (x - 1.0).abs() > eps {
            stats.clipped += 1;
        }
    }
    Ok(())
}

/// Records the clipped value loss `Σ max((v − R)², (v_old + clip(v − v_old) − R)²) / denom`.
pub fn value_loss_graph(
    g: &mut Graph,
    net: &ValueNet,
    batch: &SeqBatch,
    clip_range: f64,
    denom: f64,
) -> Result<LossOutput> {
    let w = batch.windows;
    let hw = net.spec().hidden_width;
    let mut h = g.constant(w, hw, batch.value_h0.clone())?;
    let mut c = g.constant(w, hw, batch.value_c0.clone())?;
    let mut stats = LossStats::default();
    let mut total = None;
    for t in 0..batch.len {
        if t > 0 && batch.resets[t].iter().any(|&f| f != 1.0) {
            h = g.scale_rows(h, &batch.resets[t])?;
            c = g.scale_rows(c, &batch.resets[t])?;
        }
        if batch.globals[t].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("global state at step {t}")));
        }
        let step = net.step_graph(g, &batch.globals[t], w, h, c)?;
        h = step.h;
        c = step.c;
        let ret = g.constant(w, 1, batch.returns[t].clone())?;
        let old = g.constant(w, 1, batch.old_values[t].clone())?;
        let d1 = g.sub(step.value, ret)?;
        let u = g.square(d1);
        let dv = g.sub(step.value, old)?;
        let cl = g.clamp(dv, -clip_range, clip_range);
        let vc = g.add(old, cl)?;
        let d2 = g.sub(vc, ret)?;
        let q = g.square(d2);
        let m = g.max(u, q)?;
        let term = g.sum_all(m);
        stats.value_sum += g.scalar(term);
        total = Some(accumulate(g, total, term)?);
        stats.steps += w as u64;
    }
    let total = total.ok_or_else(|| Error::Precondition("empty sequence batch".into()))?;
    let loss = g.scale(total, 1.0 / denom);
    Ok(LossOutput { loss, stats })
}

fn reset_rows(batch: &SeqBatch, t: usize, per: usize) -> Option<Vec<f64>> {
    if t == 0 || batch.resets[t].iter().all(|&f| f == 1.0) {
        return None;
    }
    Some((0..batch.windows * per).map(|r| batch.resets[t][r / per]).collect())
}

/// Log-probabilities of the batch actions under `net`, re-run from the
/// stored entry states; `[t][window · agents + agent]`.
pub fn replay_log_probs(net: &PolicyNet, batch: &SeqBatch) -> Result<Vec<Vec<f64>>> {
    let n = batch.agents;
    let rows = batch.windows * n;
    let hw = net.spec().hidden_width;
    let mut g = Graph::new(net.params());
    let mut h = g.constant(rows, hw, batch.policy_h0.clone())?;
    let mut c = g.constant(rows, hw, batch.policy_c0.clone())?;
    let mut out = Vec::with_capacity(batch.len);
    for t in 0..batch.len {
        if let Some(f) = reset_rows(batch, t, n) {
            h = g.scale_rows(h, &f)?;
            c = g.scale_rows(c, &f)?;
        }
        let step = net.step_graph(&mut g, &batch.obs[t], &batch.player_ids, h, c, &batch.masks[t])?;
        h = step.h;
        c = step.c;
        let lp = g.pick(step.log_probs, &batch.actions[t])?;
        out.push(g.value(lp).to_vec());
    }
    Ok(out)
}
