//! Opponent pool, opponent samplers and the two-stage self-play controller.
//!
//! Stage 1 walks the difficulty levels of the environment, gated against
//! the scripted opponent; every pass freezes a snapshot. Stage 2 alternates
//! a Step 1 phase, gated against the newest snapshot, with a Step 2 phase,
//! gated against the whole pool, and freezes a snapshot after each Step 2
//! pass. The four strategies differ only in how training opponents are
//! drawn during the two steps.

mod pool;

pub use pool::{
    challenge_weights, f_hard, generalize_probs, sample_challenge, sample_generalize, OpponentPool, PairRecord,
    Snapshot, SnapshotMeta, SnapshotStage,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{EnvConfig, GameResult};
use crate::rollout::{run_episodes, Controller, EpisodeSpec, MatchRecord, OpponentTag};
use crate::{derive_seed, rng_from_seed, Error, Result};

/// How training opponents are drawn in stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Strategy {
    /// Always the newest snapshot.
    Newest,
    /// Recent/older mixture in both steps.
    Challenge,
    /// Hardness-weighted in both steps.
    Generalize,
    /// Challenge in Step 1, Generalize in Step 2.
    #[default]
    ChallengeGeneralize,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ChallengeGeneralize,
        Strategy::Challenge,
        Strategy::Generalize,
        Strategy::Newest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Newest => "newest",
            Strategy::Challenge => "challenge",
            Strategy::Generalize => "generalize",
            Strategy::ChallengeGeneralize => "challenge_generalize",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config("selfplay.strategy", format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SelfPlayConfig {
    pub strategy: Strategy,
    /// Win rate needed to pass a curriculum level.
    pub eta_stage1: f64,
    /// Win rate against the newest snapshot that ends Step 1.
    pub eta_step1: f64,
    /// Win rate against the whole pool that ends Step 2.
    pub eta_step2: f64,
    /// Probability that the Challenge sampler picks the recent window.
    pub recent_prob: f64,
    /// Number of newest snapshots forming the recent window.
    pub recent_window: usize,
    /// Games per gate evaluation.
    pub eval_games: usize,
    /// Updates between gate evaluations.
    pub eval_every: u64,
    pub draw_weight: f64,
    /// Curriculum levels below this use the scripted opponent, the rest the
    /// newest snapshot; `None` scripts every level.
    pub scripted_until: Option<u32>,
    /// First curriculum level. Setting it to the maximum trains flat at the
    /// hardest difficulty.
    pub start_level: u32,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            strategy: Strategy::ChallengeGeneralize,
            eta_stage1: 0.7,
            eta_step1: 0.7,
            eta_step2: 0.6,
            recent_prob: 0.8,
            recent_window: 1,
            eval_games: 200,
            eval_every: 5,
            draw_weight: 0.5,
            scripted_until: None,
            start_level: 0,
        }
    }
}

impl SelfPlayConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("selfplay.eta_stage1", self.eta_stage1),
            ("selfplay.eta_step1", self.eta_step1),
            ("selfplay.eta_step2", self.eta_step2),
            ("selfplay.draw_weight", self.draw_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.recent_prob > 0.0 && self.recent_prob <= 1.0) {
            return Err(Error::config("selfplay.recent_prob", "must lie in (0, 1]"));
        }
        if self.recent_window == 0 {
            return Err(Error::config("selfplay.recent_window", "must be positive"));
        }
        if self.eval_games == 0 {
            return Err(Error::config("selfplay.eval_games", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("selfplay.eval_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "phase", rename_all = "snake_case"))]
pub enum Phase {
    Curriculum { level: u32 },
    /// Stage 2, Step 1.
    Challenge,
    /// Stage 2, Step 2.
    Generalize,
}

impl Phase {
    pub fn stage(self) -> u8 {
        match self {
            Phase::Curriculum { .. } => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Curriculum { .. } => "curriculum",
            Phase::Challenge => "step1",
            Phase::Generalize => "step2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    Scripted { level: u32 },
    Newest,
    Challenge,
    Generalize,
}

/// Training opponents for the current phase.
#[derive(Clone, Debug, PartialEq)]
pub enum OpponentChoice {
    Scripted { level: u32 },
    /// Sampling weights over pool indices.
    Pool(Vec<f64>),
}

/// Opponents of the current gate evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum GateOpponents {
    Scripted,
    /// Pool indices, played uniformly.
    Snapshots(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub threshold: f64,
    pub level: u32,
    pub opponents: GateOpponents,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Promotion {
    pub from: Phase,
    pub to: Phase,
    pub p_win: f64,
    /// Id of the snapshot frozen by this promotion.
    pub snapshot: Option<u64>,
    pub env_steps: u64,
    pub update: u64,
}

/// Where a promotion happened, supplied by the caller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Clock {
    pub env_steps: u64,
    pub update: u64,
    pub timestamp: u64,
}

/// The self-play state machine. It owns the pool and decides which
/// opponents the learner trains and is gated against.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfPlay {
    cfg: SelfPlayConfig,
    max_level: u32,
    pool: OpponentPool,
    phase: Phase,
    promotions: Vec<Promotion>,
}

impl SelfPlay {
    /// Starts a run with `initial` as snapshot π₀.
    pub fn new(cfg: SelfPlayConfig, max_level: u32, initial: Vec<u8>, clock: Clock) -> Result<Self> {
        cfg.validate()?;
        if max_level > 0 && cfg.start_level > max_level {
            return Err(Error::config(
                "selfplay.start_level",
                format!("{} exceeds the maximum level {max_level}", cfg.start_level),
            ));
        }
        let mut pool = OpponentPool::new();
        pool.push(
            initial,
            SnapshotMeta {
                stage: SnapshotStage::Initial,
                level: cfg.start_level.min(max_level),
                env_steps: clock.env_steps,
                update: clock.update,
                timestamp: clock.timestamp,
            },
        );
        let phase = if max_level > 0 {
            Phase::Curriculum {
                level: cfg.start_level,
            }
        } else {
            Phase::Challenge
        };
        Ok(SelfPlay {
            cfg,
            max_level,
            pool,
            phase,
            promotions: Vec::new(),
        })
    }

    /// Restores a persisted state.
    pub fn from_parts(
        cfg: SelfPlayConfig,
        max_level: u32,
        pool: OpponentPool,
        phase: Phase,
        promotions: Vec<Promotion>,
    ) -> Result<Self> {
        cfg.validate()?;
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        if let Phase::Curriculum { level } = phase {
            if level > max_level || max_level == 0 {
                return Err(Error::Precondition(format!("curriculum level {level} out of range")));
            }
        }
        Ok(SelfPlay {
            cfg,
            max_level,
            pool,
            phase,
            promotions,
        })
    }

    pub fn config(&self) -> &SelfPlayConfig {
        &self.cfg
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn pool(&self) -> &OpponentPool {
        &self.pool
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn promotions(&self) -> &[Promotion] {
        &self.promotions
    }

    /// Id the current training candidate will receive when frozen.
    pub fn candidate(&self) -> u64 {
        self.pool.next_id()
    }

    /// Difficulty the environments run at.
    pub fn level(&self) -> u32 {
        match self.phase {
            Phase::Curriculum { level } => level,
            _ => self.max_level,
        }
    }

    fn scripted_level(&self, level: u32) -> bool {
        self.cfg.scripted_until.is_none_or(|u| level < u)
    }

    fn newest_only(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.pool.len()];
        if let Some(x) = w.last_mut() {
            *x = 1.0;
        }
        w
    }

    /// Sampling probabilities of the Generalize sampler for the candidate.
    pub fn generalize_weights(&self) -> Vec<f64> {
        generalize_probs(&self.candidate_p_hat())
    }

    pub fn challenge_weights(&self) -> Vec<f64> {
        challenge_weights(self.pool.len(), self.cfg.recent_window, self.cfg.recent_prob)
    }

    /// Sampler in force for the current phase and strategy.
    pub fn sampler(&self) -> Sampler {
        use Strategy::*;
        match (self.phase, self.cfg.strategy) {
            (Phase::Curriculum { level }, _) if self.scripted_level(level) => Sampler::Scripted { level },
            (Phase::Curriculum { .. }, _) | (_, Newest) => Sampler::Newest,
            (Phase::Challenge, Challenge | ChallengeGeneralize) | (Phase::Generalize, Challenge) => Sampler::Challenge,
            (Phase::Challenge, Generalize) | (Phase::Generalize, Generalize | ChallengeGeneralize) => {
                Sampler::Generalize
            }
        }
    }

    fn candidate_p_hat(&self) -> Vec<f64> {
        let c = self.candidate();
        self.pool
            .snapshots()
            .iter()
            .map(|s| self.pool.p_hat(c, s.id, self.cfg.draw_weight))
            .collect()
    }

    /// Training opponents for the current phase and strategy.
    pub fn opponents(&self) -> OpponentChoice {
        OpponentChoice::Pool(match self.sampler() {
            Sampler::Scripted { level } => return OpponentChoice::Scripted { level },
            Sampler::Newest => self.newest_only(),
            Sampler::Challenge => self.challenge_weights(),
            Sampler::Generalize => self.generalize_weights(),
        })
    }

    /// Draws one training opponent as a pool index; `None` means scripted.
    pub fn sample_opponent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<usize>> {
        match self.sampler() {
            Sampler::Scripted { .. } => Ok(None),
            Sampler::Newest => Ok(Some(self.pool.len() - 1)),
            Sampler::Challenge => {
                sample_challenge(self.pool.len(), self.cfg.recent_window, self.cfg.recent_prob, rng).map(Some)
            }
            Sampler::Generalize => sample_generalize(&self.candidate_p_hat(), rng).map(Some),
        }
    }

    /// What the candidate must beat to leave the current phase.
    pub fn gate(&self) -> Gate {
        let newest = vec![self.pool.len() - 1];
        let (threshold, opponents) = match self.phase {
            Phase::Curriculum { level } => (
                self.cfg.eta_stage1,
                if self.scripted_level(level) {
                    GateOpponents::Scripted
                } else {
                    GateOpponents::Snapshots(newest)
                },
            ),
            Phase::Challenge => (self.cfg.eta_step1, GateOpponents::Snapshots(newest)),
            Phase::Generalize => (self.cfg.eta_step2, GateOpponents::Snapshots((0..self.pool.len()).collect())),
        };
        Gate {
            threshold,
            level: self.level(),
            opponents,
        }
    }

    /// Adds training or evaluation results against pool snapshots to the
    /// candidate's win table. Other opponents are ignored.
    pub fn record(&mut self, opponent: OpponentTag, result: GameResult) {
        if let OpponentTag::Snapshot(j) = opponent {
            let c = self.candidate();
            self.pool.record(c, j, result);
        }
    }

    pub fn record_matches(&mut self, matches: &[MatchRecord]) {
        for m in matches {
            self.record(m.opponent, m.result);
        }
    }

    /// Applies a gate result. When `p_win` clears the threshold the phase
    /// advances and, where the algorithm freezes the candidate, `blob` is
    /// appended to the pool.
    pub fn advance(&mut self, p_win: f64, blob: impl FnOnce() -> Vec<u8>, clock: Clock) -> Option<Promotion> {
        let gate = self.gate();
        if !(p_win > gate.threshold) {
            return None;
        }
        let from = self.phase;
        let (to, freeze) = match from {
            Phase::Curriculum { level } if level < self.max_level => (Phase::Curriculum { level: level + 1 }, true),
            Phase::Curriculum { .. } => (Phase::Challenge, true),
            Phase::Challenge => (Phase::Generalize, false),
            Phase::Generalize => (Phase::Challenge, true),
        };
        let snapshot = freeze.then(|| {
            self.pool.push(
                blob(),
                SnapshotMeta {
                    stage: if from.stage() == 1 {
                        SnapshotStage::Curriculum
                    } else {
                        SnapshotStage::SelfPlay
                    },
                    level: gate.level,
                    env_steps: clock.env_steps,
                    update: clock.update,
                    timestamp: clock.timestamp,
                },
            )
        });
        self.phase = to;
        let p = Promotion {
            from,
            to,
            p_win,
            snapshot,
            env_steps: clock.env_steps,
            update: clock.update,
        };
        self.promotions.push(p);
        Some(p)
    }
}

/// Outcome of a batch of evaluation games.
#[derive(Clone, Debug, PartialEq)]
pub struct WinRate {
    pub p_win: f64,
    pub total: PairRecord,
    /// Per opponent, in the order given.
    pub per_opponent: Vec<PairRecord>,
}

/// Estimates the win rate of `candidate` over `games` games against
/// opponents drawn uniformly from `opponents`. First move alternates, so
/// in turn-based games each side is taken equally often.
pub fn estimate_winrate(
    env: &EnvConfig,
    level: Option<u32>,
    candidate: &Controller,
    opponents: &[Controller],
    games: usize,
    w_draw: f64,
    seed: u64,
) -> Result<WinRate> {
    if games == 0 {
        return Err(Error::Precondition("win-rate estimate needs at least one game".into()));
    }
    if opponents.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = rng_from_seed(derive_seed(seed, 0x5A4E));
    let specs: Vec<EpisodeSpec> = (0..games)
        .map(|g| EpisodeSpec {
            opponent: rng.random_range(0..opponents.len()),
            first_mover: g % 2,
            seed: derive_seed(seed, g as u64),
        })
        .collect();
    let out = run_episodes(env, level, candidate, opponents, &specs, games.min(256), seed)?;
    let mut total = PairRecord::default();
    let mut per_opponent = vec![PairRecord::default(); opponents.len()];
    for (s, o) in specs.iter().zip(&out) {
        total.add(o.result);
        per_opponent[s.opponent].add(o.result);
    }
    Ok(WinRate {
        p_win: total.rate(w_draw).unwrap_or(0.5),
        total,
        per_opponent,
    })
}
