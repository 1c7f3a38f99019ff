//! Run configuration and the learner-side training loop.
//!
//! [`Trainer`] owns the networks, optimisers and self-play controller. It
//! hands out [`Broadcast`]s for actors, consumes their trajectory messages
//! one update at a time, runs the gate evaluations and moves the self-play
//! state machine. [`Trainer::run_serial`] drives actors on the calling
//! thread; the `spf` crate runs the same protocol over worker threads.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::arena::minimax::TicTacToeOracle;
use crate::env::{Env, EnvConfig};
use crate::jrpo::{train_epoch, ClipConfig, GaeConfig, Learner, Parallel, RolloutBuffer, Serial, TrainConfig, UpdateMetrics};
use crate::nn::{NetworkSpec, PolicyNet, ValueNet};
use crate::rollout::{
    ActMode, Actor, ActorConfig, Controller, MatchRecord, OpponentPlan, OpponentTag, PlanEntry, VersionedChunk,
};
use crate::selfplay::{
    estimate_winrate, Clock, GateOpponents, OpponentChoice, OpponentPool, Phase, Promotion, SelfPlay, SelfPlayConfig,
};
use crate::{derive_seed, rng_from_seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetworkConfig {
    pub encoder_width: usize,
    pub hidden_width: usize,
    pub id_embed_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_width: 64,
            hidden_width: 64,
            id_embed_width: 8,
        }
    }
}

/// Fixed opponent used to track progress independently of the pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProbeOpponent {
    Scripted,
    Random,
    Minimax,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ProbeConfig {
    pub opponent: ProbeOpponent,
    /// Difficulty of probe games; `None` uses the hardest level.
    pub level: Option<u32>,
    pub games: usize,
    /// Updates between probes.
    pub every: u64,
    pub mode: ActMode,
    /// Stop the run once a probe reaches this win rate.
    pub stop_at: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            opponent: ProbeOpponent::Scripted,
            level: None,
            games: 200,
            every: 10,
            mode: ActMode::Greedy,
            stop_at: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RunConfig {
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub clip: ClipConfig,
    pub gae: GaeConfig,
    pub actor: ActorConfig,
    pub selfplay: SelfPlayConfig,
    pub num_actors: usize,
    /// Recorded decision steps per update.
    pub buffer_steps: usize,
    pub budget_env_steps: u64,
    pub seed: u64,
    pub out_dir: String,
    /// Updates an actor may run ahead of the learner without waiting; 0
    /// makes every update use data from the current parameters only.
    pub max_version_lag: u64,
    pub learner_threads: usize,
    /// Updates between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub probe: Option<ProbeConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::TicTacToe,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            clip: ClipConfig::default(),
            gae: GaeConfig::default(),
            actor: ActorConfig::default(),
            selfplay: SelfPlayConfig::default(),
            num_actors: 1,
            buffer_steps: 16_384,
            budget_env_steps: 1_000_000,
            seed: 0,
            out_dir: String::from("runs/default"),
            max_version_lag: 0,
            learner_threads: 1,
            checkpoint_every: 0,
            probe: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actors == 0 {
            return Err(Error::config("num_actors", "must be at least 1"));
        }
        if self.budget_env_steps == 0 {
            return Err(Error::config("budget_env_steps", "must be at least 1"));
        }
        if self.buffer_steps == 0 {
            return Err(Error::config("buffer_steps", "must be at least 1"));
        }
        if self.learner_threads == 0 {
            return Err(Error::config("learner_threads", "must be at least 1"));
        }
        self.train.validate()?;
        self.clip.validate()?;
        self.gae.validate()?;
        self.actor.validate(self.train.bptt)?;
        self.selfplay.validate()?;
        let env = self.env.build()?;
        let max = env.max_level();
        if max > 0 && self.selfplay.start_level > max {
            return Err(Error::config("selfplay.start_level", format!("exceeds the maximum level {max}")));
        }
        if let Some(p) = &self.probe {
            if p.games == 0 || p.every == 0 {
                return Err(Error::config("probe", "games and every must be positive"));
            }
            if p.opponent == ProbeOpponent::Scripted && env.as_goalrush().is_none() {
                return Err(Error::config("probe.opponent", "scripted opponents exist only in goal_rush"));
            }
            if p.opponent == ProbeOpponent::Minimax && self.env != EnvConfig::TicTacToe {
                return Err(Error::config("probe.opponent", "the minimax oracle plays only tic_tac_toe"));
            }
        }
        self.network_spec()?.validate()
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let env = self.env.build()?;
        Ok(env.spec().network_spec(
            self.network.encoder_width,
            self.network.hidden_width,
            self.network.id_embed_width,
        ))
    }

    /// Recorded steps each actor contributes per update.
    pub fn actor_share(&self) -> usize {
        self.buffer_steps.div_ceil(self.num_actors)
    }

    /// Actor generation for a learner version. Actors are rebuilt from a
    /// fresh seed whenever this changes, which happens exactly at
    /// checkpoint boundaries, so a resumed run sees the same actors as an
    /// uninterrupted one.
    pub fn actor_epoch(&self, version: u64) -> u64 {
        if self.checkpoint_every == 0 {
            0
        } else {
            version / self.checkpoint_every
        }
    }

    pub fn actor_seed(&self, actor: usize, epoch: u64) -> u64 {
        derive_seed(derive_seed(self.seed, 0xAC00 + actor as u64), epoch)
    }
}

/// Parameters and opponent plan for one learner version.
#[derive(Clone, Debug)]
pub struct Broadcast {
    pub version: u64,
    pub actor_epoch: u64,
    pub policy: Arc<PolicyNet>,
    pub value: Arc<ValueNet>,
    pub plan: OpponentPlan,
    pub level: u32,
}

/// Output of one actor for one update.
#[derive(Clone, Debug)]
pub struct TrajectoryMessage {
    pub actor: usize,
    pub version: u64,
    pub chunks: Vec<VersionedChunk>,
    pub matches: Vec<MatchRecord>,
    pub env_steps: u64,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpdateReport {
    pub update: u64,
    pub env_steps: u64,
    pub stage: u8,
    pub phase: String,
    pub level: u32,
    pub pool_size: usize,
    pub episodes: usize,
    pub train_score: Option<f64>,
    pub metrics: UpdateMetrics,
    pub gate_p_win: Option<f64>,
    pub promotion: Option<Promotion>,
    pub probe_p_win: Option<f64>,
    /// Fraction of all consumed steps whose version lag exceeded one.
    pub stale_fraction: f64,
}

/// Learner-side counters that survive a checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Counters {
    pub version: u64,
    pub env_steps: u64,
    pub consumed_steps: u64,
    pub stale_steps: u64,
    pub probe_hit: Option<u64>,
    pub last_probe: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    ProbeTarget,
}

/// Summary returned when a run stops.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalReport {
    pub stop: StopReason,
    pub env_steps: u64,
    pub updates: u64,
    pub phase: Phase,
    /// Stage 1 ended with every curriculum level passed.
    pub curriculum_complete: bool,
    /// The phase in force when the run stopped never passed its gate.
    pub stage_incomplete: bool,
    pub pool_size: usize,
    pub probe_hit: Option<u64>,
}

pub struct Trainer {
    cfg: RunConfig,
    spec: NetworkSpec,
    pub learner: Learner,
    selfplay: SelfPlay,
    counters: Counters,
    nets: BTreeMap<u64, Arc<PolicyNet>>,
    oracle: Option<Arc<TicTacToeOracle>>,
    clock: Option<fn() -> u64>,
    gate_override: Option<fn(&Trainer) -> f64>,
}

impl Trainer {
    /// Fresh run: networks initialised from the run seed, π₀ in the pool.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.network_spec()?;
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x1417));
        let policy = PolicyNet::new(&spec, &mut rng)?;
        let value = ValueNet::new(&spec, &mut rng)?;
        let learner = Learner::new(policy, value, &cfg.train);
        let max_level = cfg.env.build()?.max_level();
        let selfplay = SelfPlay::new(cfg.selfplay.clone(), max_level, learner.policy.to_blob(), Clock::default())?;
        Trainer::assemble(cfg, spec, learner, selfplay, Counters::default())
    }

    /// Rebuilds a trainer from checkpointed parts.
    pub fn restore(cfg: RunConfig, learner: Learner, selfplay: SelfPlay, counters: Counters) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.network_spec()?;
        if learner.policy.spec() != &spec || learner.value.spec() != &spec {
            return Err(Error::SpecMismatch {
                expected: spec.fingerprint(),
                found: learner.policy.spec().fingerprint(),
            });
        }
        if selfplay.config() != &cfg.selfplay {
            return Err(Error::Precondition("checkpointed self-play settings differ from the config".into()));
        }
        Trainer::assemble(cfg, spec, learner, selfplay, counters)
    }

    fn assemble(cfg: RunConfig, spec: NetworkSpec, learner: Learner, selfplay: SelfPlay, counters: Counters) -> Result<Self> {
        let mut t = Trainer {
            cfg,
            spec,
            learner,
            selfplay,
            counters,
            nets: BTreeMap::new(),
            oracle: None,
            clock: None,
            gate_override: None,
        };
        for s in t.selfplay.pool().snapshots() {
            t.nets.insert(s.id, Arc::new(PolicyNet::from_blob(&s.blob, &t.spec)?));
        }
        Ok(t)
    }

    /// Source of snapshot timestamps (seconds); without one they are 0.
    pub fn set_clock(&mut self, clock: fn() -> u64) {
        self.clock = Some(clock);
    }

    /// Replaces gate evaluations by a fixed function, for exercising the
    /// state machine without training to a threshold.
    pub fn set_gate_override(&mut self, f: fn(&Trainer) -> f64) {
        self.gate_override = Some(f);
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn selfplay(&self) -> &SelfPlay {
        &self.selfplay
    }

    pub fn pool(&self) -> &OpponentPool {
        self.selfplay.pool()
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn version(&self) -> u64 {
        self.counters.version
    }

    pub fn env_steps(&self) -> u64 {
        self.counters.env_steps
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        if self.counters.probe_hit.is_some() && self.cfg.probe.as_ref().is_some_and(|p| p.stop_at.is_some()) {
            Some(StopReason::ProbeTarget)
        } else if self.counters.env_steps >= self.cfg.budget_env_steps {
            Some(StopReason::Budget)
        } else {
            None
        }
    }

    pub fn final_report(&self) -> FinalReport {
        let phase = self.selfplay.phase();
        let curriculum_complete = self.selfplay.max_level() > 0 && phase.stage() == 2;
        let last_promotion_update = self.selfplay.promotions().last().map(|p| p.update);
        FinalReport {
            stop: self.stop_reason().unwrap_or(StopReason::Budget),
            env_steps: self.counters.env_steps,
            updates: self.counters.version,
            phase,
            curriculum_complete,
            stage_incomplete: last_promotion_update != Some(self.counters.version),
            pool_size: self.pool().len(),
            probe_hit: self.counters.probe_hit,
        }
    }

    fn snapshot_net(&self, index: usize) -> Result<Arc<PolicyNet>> {
        let id = self.pool().get(index).ok_or(Error::EmptyPool)?.id;
        self.nets
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::Precondition(format!("snapshot {id} is not decoded")))
    }

    fn oracle(&mut self) -> Arc<TicTacToeOracle> {
        self.oracle.get_or_insert_with(|| Arc::new(TicTacToeOracle::new())).clone()
    }

    /// Opponent distribution for the next update's training episodes.
    /// Snapshots play stochastically.
    pub fn plan(&self) -> Result<OpponentPlan> {
        let plan = match self.selfplay.opponents() {
            OpponentChoice::Scripted { .. } => OpponentPlan::single(Controller::Scripted, OpponentTag::Scripted),
            OpponentChoice::Pool(w) => {
                let mut entries = Vec::new();
                for (i, &weight) in w.iter().enumerate() {
                    if weight > 0.0 {
                        entries.push(PlanEntry {
                            weight,
                            controller: Controller::Policy {
                                net: self.snapshot_net(i)?,
                                mode: ActMode::Stochastic,
                            },
                            tag: OpponentTag::Snapshot(self.pool().snapshots()[i].id),
                        });
                    }
                }
                OpponentPlan { entries }
            }
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn broadcast(&self) -> Result<Broadcast> {
        Ok(Broadcast {
            version: self.counters.version,
            actor_epoch: self.cfg.actor_epoch(self.counters.version),
            policy: Arc::new(self.learner.policy.clone()),
            value: Arc::new(self.learner.value.clone()),
            plan: self.plan()?,
            level: self.selfplay.level(),
        })
    }

    /// Builds the actor with id `actor` for the given generation.
    pub fn build_actor(cfg: &RunConfig, actor: usize, epoch: u64) -> Result<Actor> {
        Actor::new(&cfg.env, cfg.actor, cfg.network.hidden_width, cfg.actor_seed(actor, epoch))
    }

    /// One actor's share of an update.
    pub fn act(actor: &mut Actor, id: usize, b: &Broadcast, share: usize) -> Result<TrajectoryMessage> {
        actor.set_plan(b.plan.clone())?;
        actor.set_level(b.level)?;
        let r = actor.collect(&b.policy, &b.value, b.version, share)?;
        Ok(TrajectoryMessage {
            actor: id,
            version: b.version,
            chunks: r.chunks,
            matches: r.matches,
            env_steps: r.env_steps,
        })
    }

    fn seed_for(&self, label: u64) -> u64 {
        derive_seed(derive_seed(self.cfg.seed, label), self.counters.version)
    }

    /// Win rate of the current policy against the current gate opponents.
    /// The candidate samples its actions, opponents play greedily.
    pub fn gate_winrate(&mut self) -> Result<f64> {
        if let Some(f) = self.gate_override {
            return Ok(f(self));
        }
        let gate = self.selfplay.gate();
        let opponents: Vec<Controller> = match &gate.opponents {
            GateOpponents::Scripted => alloc::vec![Controller::Scripted],
            GateOpponents::Snapshots(idx) => idx
                .iter()
                .map(|&i| {
                    Ok(Controller::Policy {
                        net: self.snapshot_net(i)?,
                        mode: ActMode::Greedy,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let candidate = Controller::policy(self.learner.policy.clone(), ActMode::Stochastic);
        let level = (self.selfplay.max_level() > 0).then_some(gate.level);
        let w = estimate_winrate(
            &self.cfg.env,
            level,
            &candidate,
            &opponents,
            self.cfg.selfplay.eval_games,
            self.cfg.selfplay.draw_weight,
            self.seed_for(0x6A7E),
        )?;
        // Set-level rate: games-weighted mean of per-opponent rates, with
        // opponents that drew no game counted as one even game.
        let mut num = 0.0;
        let mut den = 0.0;
        for rec in &w.per_opponent {
            match rec.rate(self.cfg.selfplay.draw_weight) {
                Some(p) => {
                    num += p * rec.games() as f64;
                    den += rec.games() as f64;
                }
                None => {
                    num += 0.5;
                    den += 1.0;
                }
            }
        }
        Ok(num / den)
    }

    /// Win rate of the current policy against the configured probe.
    pub fn probe_winrate(&mut self) -> Result<Option<f64>> {
        let Some(p) = self.cfg.probe.clone() else {
            return Ok(None);
        };
        let opp = match p.opponent {
            ProbeOpponent::Scripted => Controller::Scripted,
            ProbeOpponent::Random => Controller::Random,
            ProbeOpponent::Minimax => Controller::Minimax(self.oracle()),
        };
        let max = self.selfplay.max_level();
        let level = (max > 0).then(|| p.level.unwrap_or(max));
        let me = Controller::policy(self.learner.policy.clone(), p.mode);
        let w = estimate_winrate(
            &self.cfg.env,
            level,
            &me,
            &[opp],
            p.games,
            self.cfg.selfplay.draw_weight,
            self.seed_for(0x960B),
        )?;
        Ok(Some(w.p_win))
    }

    /// Trains on one update's worth of messages, which must be in a
    /// deterministic order (the drivers sort by actor id).
    pub fn consume<P: Parallel>(&mut self, messages: Vec<TrajectoryMessage>, exec: &P) -> Result<UpdateReport> {
        let mut buffer = RolloutBuffer::new(self.cfg.train.bptt);
        let mut episodes = 0;
        let mut score = 0.0;
        for m in messages {
            if m.version > self.counters.version {
                return Err(Error::Precondition(format!(
                    "message from version {} ahead of learner {}",
                    m.version, self.counters.version
                )));
            }
            for c in m.chunks {
                let steps = c.chunk.len() as u64;
                self.counters.consumed_steps += steps;
                if self.counters.version - c.version > 1 {
                    self.counters.stale_steps += steps;
                }
                buffer.push(c.chunk)?;
            }
            for r in &m.matches {
                self.selfplay.record(r.opponent, r.result);
                score += r.result.score(self.cfg.selfplay.draw_weight);
            }
            episodes += m.matches.len();
            self.counters.env_steps += m.env_steps;
        }
        let mut rng = rng_from_seed(self.seed_for(0x7EA1));
        let metrics = train_epoch(
            &mut self.learner,
            &buffer,
            &self.cfg.train,
            &self.cfg.clip,
            &self.cfg.gae,
            &mut rng,
            exec,
        )?;
        self.counters.version += 1;
        let version = self.counters.version;

        let mut gate_p_win = None;
        let mut promotion = None;
        if version % self.cfg.selfplay.eval_every == 0 {
            let p = self.gate_winrate()?;
            gate_p_win = Some(p);
            let clock = Clock {
                env_steps: self.counters.env_steps,
                update: version,
                timestamp: self.clock.map_or(0, |f| f()),
            };
            let blob = self.learner.policy.to_blob();
            promotion = self.selfplay.advance(p, || blob, clock);
            if let Some(id) = promotion.and_then(|p| p.snapshot) {
                self.nets.insert(id, Arc::new(self.learner.policy.clone()));
            }
        }
        let mut probe_p_win = None;
        if let Some(every) = self.cfg.probe.as_ref().map(|p| p.every) {
            if version % every == 0 {
                probe_p_win = self.probe_winrate()?;
                self.counters.last_probe = probe_p_win;
                let target = self.cfg.probe.as_ref().and_then(|p| p.stop_at).unwrap_or(f64::INFINITY);
                if self.counters.probe_hit.is_none() && probe_p_win.is_some_and(|p| p >= target) {
                    self.counters.probe_hit = Some(self.counters.env_steps);
                }
            }
        }
        let phase = self.selfplay.phase();
        Ok(UpdateReport {
            update: version,
            env_steps: self.counters.env_steps,
            stage: phase.stage(),
            phase: phase.name().into(),
            level: self.selfplay.level(),
            pool_size: self.pool().len(),
            episodes,
            train_score: (episodes > 0).then(|| score / episodes as f64),
            metrics,
            gate_p_win,
            promotion,
            probe_p_win,
            stale_fraction: if self.counters.consumed_steps == 0 {
                0.0
            } else {
                self.counters.stale_steps as f64 / self.counters.consumed_steps as f64
            },
        })
    }

    /// Runs actors and learner alternately on this thread until the run
    /// stops or `max_updates` more updates are done.
    pub fn run_serial(&mut self, max_updates: Option<u64>, mut sink: impl FnMut(&UpdateReport)) -> Result<FinalReport> {
        let mut actors: Vec<Actor> = Vec::new();
        let mut epoch = None;
        let mut done = 0;
        while self.stop_reason().is_none() && max_updates.is_none_or(|m| done < m) {
            let b = self.broadcast()?;
            if epoch != Some(b.actor_epoch) {
                actors = (0..self.cfg.num_actors)
                    .map(|i| Trainer::build_actor(&self.cfg, i, b.actor_epoch))
                    .collect::<Result<_>>()?;
                epoch = Some(b.actor_epoch);
            }
            let share = self.cfg.actor_share();
            let msgs = actors
                .iter_mut()
                .enumerate()
                .map(|(i, a)| Trainer::act(a, i, &b, share))
                .collect::<Result<Vec<_>>>()?;
            let report = self.consume(msgs, &Serial)?;
            sink(&report);
            done += 1;
        }
        Ok(self.final_report())
    }
}
