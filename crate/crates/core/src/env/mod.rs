//! Two-team Dec-POMDP environments.
//!
//! Every environment exposes two teams of agents. Team 0 is the controlled
//! (learning) team, team 1 the opponent. Both teams receive their own
//! [`TeamView`] in their own frame of reference, so one shared policy can play
//! either side. Turn-based board games are one agent per team where the idle
//! team's only legal action is the no-op.

mod board;
mod goalrush;
mod shaping;

use alloc::vec::Vec;

use rand::Rng;

pub use board::{encode_board, BoardGame, BoardKind};
pub use goalrush::{
    GoalRush, GoalRushAction, GoalRushConfig, GOALRUSH_ACTIONS, GOALRUSH_HEIGHT, GOALRUSH_WIDTH,
};
pub use shaping::{default_goalrush_rules, shape_rewards, ShapingKind, ShapingRule};

use crate::{derive_seed, Error, Result};

/// Terminal result from team 0's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GameResult {
    Win,
    Loss,
    Draw,
}

impl GameResult {
    /// The same result seen from `team`.
    pub fn for_team(self, team: usize) -> GameResult {
        match (team, self) {
            (0, r) | (_, r @ GameResult::Draw) => r,
            (_, GameResult::Win) => GameResult::Loss,
            (_, GameResult::Loss) => GameResult::Win,
        }
    }

    pub fn flip(self) -> GameResult {
        self.for_team(1)
    }

    /// Score with draws weighted by `w_draw`.
    pub fn score(self, w_draw: f64) -> f64 {
        match self {
            GameResult::Win => 1.0,
            GameResult::Loss => 0.0,
            GameResult::Draw => w_draw,
        }
    }
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecPomdpSpec {
    pub agents_per_team: usize,
    pub num_actions: usize,
    pub obs_parts: Vec<usize>,
    pub global_state_width: usize,
    pub max_episode_len: usize,
    pub turn_based: bool,
}

impl DecPomdpSpec {
    pub fn obs_width(&self) -> usize {
        self.obs_parts.iter().sum()
    }

    pub fn network_spec(&self, encoder_width: usize, hidden_width: usize, id_embed_width: usize) -> crate::nn::NetworkSpec {
        crate::nn::NetworkSpec {
            obs_parts: self.obs_parts.clone(),
            encoder_width,
            hidden_width,
            num_actions: self.num_actions,
            num_agents: self.agents_per_team,
            id_embed_width,
            global_state_width: self.global_state_width,
        }
    }
}

/// What one team sees: per-agent observations (row-major, agent-major),
/// the team-frame global state, and per-agent legal masks.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamView {
    pub obs: Vec<f64>,
    pub global: Vec<f64>,
    pub masks: Vec<bool>,
}

impl TeamView {
    pub fn agent_mask(&self, agent: usize, num_actions: usize) -> &[bool] {
        &self.masks[agent * num_actions..(agent + 1) * num_actions]
    }

    /// If every agent has exactly one legal action, returns those actions.
    /// Such steps carry no decision and are not recorded for learning.
    pub fn forced_actions(&self, num_actions: usize) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.masks.len() / num_actions);
        for row in self.masks.chunks(num_actions) {
            let mut legal = row.iter().enumerate().filter(|(_, &m)| m).map(|(a, _)| a);
            let first = legal.next()?;
            if legal.next().is_some() {
                return None;
            }
            out.push(first);
        }
        Some(out)
    }
}

/// Per-team events used by reward shaping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TeamEvents {
    /// The team holds the carrier token at the end of the step.
    pub holding: bool,
    /// The team scored after completing at least one pass in the possession.
    pub pass_before_goal: bool,
    /// Two teammates stand on the same or neighbouring cells.
    pub grouped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub teams: [TeamView; 2],
    /// Game-rule rewards before shaping.
    pub base_rewards: [f64; 2],
    /// Shaped rewards; always `rewards[0] + rewards[1] == 0`.
    pub rewards: [f64; 2],
    pub done: bool,
    pub result: Option<GameResult>,
    /// Steps taken since the last reset.
    pub step: usize,
    pub events: [TeamEvents; 2],
}

pub trait Env {
    fn spec(&self) -> &DecPomdpSpec;
    fn reset(&mut self, seed: u64) -> StepOutcome;
    /// Advances one step with both teams' joint actions.
    fn step(&mut self, team0: &[usize], team1: &[usize]) -> Result<StepOutcome>;
    /// Chooses which team moves (board games) or kicks off (GoalRush) after
    /// the next reset.
    fn set_first_mover(&mut self, team: usize);
    fn first_mover(&self) -> usize;
    fn is_done(&self) -> bool;
    /// Flat absolute-frame state, for replay traces.
    fn state_vector(&self) -> Vec<f64>;
}

/// Checks every submitted action against the team masks.
pub(crate) fn check_actions(
    views: &[TeamView; 2],
    actions: [&[usize]; 2],
    agents: usize,
    num_actions: usize,
) -> Result<()> {
    for team in 0..2 {
        if actions[team].len() != agents {
            return Err(Error::Shape(alloc::format!(
                "team {team} submitted {} actions for {agents} agents",
                actions[team].len()
            )));
        }
        for (agent, &action) in actions[team].iter().enumerate() {
            if action >= num_actions || !views[team].masks[agent * num_actions + action] {
                return Err(Error::IllegalAction { team, agent, action });
            }
        }
    }
    Ok(())
}

/// Uniformly random legal action for every agent of a view.
pub fn random_legal_actions<R: Rng + ?Sized>(view: &TeamView, num_actions: usize, rng: &mut R) -> Vec<usize> {
    view.masks
        .chunks(num_actions)
        .map(|row| {
            let n = row.iter().filter(|&&m| m).count();
            let mut k = rng.random_range(0..n);
            for (a, &m) in row.iter().enumerate() {
                if m {
                    if k == 0 {
                        return a;
                    }
                    k -= 1;
                }
            }
            unreachable!("mask has no legal entry")
        })
        .collect()
}

/// Maximum number of re-resets when a warm-up ends the episode.
pub const STAGGER_RETRIES: u64 = 8;

/// Reset followed by `k ~ U{0..=k_max}` uniformly random legal joint actions.
///
/// A warm-up that finishes the episode is retried from a fresh reset (seeded
/// from `seed` and the attempt number) up to [`STAGGER_RETRIES`] times, after
/// which the plain reset is returned.
pub fn staggered_reset<E: Env + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    seed: u64,
    k_max: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    let first = env.reset(seed);
    if k_max == 0 {
        return Ok(first);
    }
    let a = env.spec().num_actions;
    let mut out = first;
    for attempt in 0..=STAGGER_RETRIES {
        if attempt > 0 {
            out = env.reset(derive_seed(seed, attempt));
        }
        let k = rng.random_range(0..=k_max);
        let mut ended = false;
        for _ in 0..k {
            let a0 = random_legal_actions(&out.teams[0], a, rng);
            let a1 = random_legal_actions(&out.teams[1], a, rng);
            out = env.step(&a0, &a1)?;
            if out.done {
                ended = true;
                break;
            }
        }
        if !ended {
            return Ok(out);
        }
    }
    Ok(env.reset(seed))
}

/// Curriculum difficulty of the opposing team.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DifficultyConfig {
    pub level: u32,
    pub max_level: u32,
    /// Probability that an opposing agent's action is applied in a step.
    pub opponent_strength: f64,
    /// 1 places the kickoff carrier next to the goal, 0 far from it.
    pub placement_bias: f64,
}

/// Number of difficulty transitions (ten levels, 0 through 9).
pub const DEFAULT_MAX_LEVEL: u32 = 9;

impl DifficultyConfig {
    /// Linear interpolation: strength `level / max`, bias `1 − level / max`.
    pub fn from_level(level: u32, max_level: u32) -> Result<Self> {
        if level > max_level {
            return Err(Error::config("env.level", "level exceeds max_level"));
        }
        let frac = if max_level == 0 { 1.0 } else { level as f64 / max_level as f64 };
        Ok(DifficultyConfig {
            level,
            max_level,
            opponent_strength: frac,
            placement_bias: 1.0 - frac,
        })
    }

    pub fn hardest(max_level: u32) -> Self {
        Self::from_level(max_level, max_level).expect("level == max")
    }
}

/// Any of the built-in environments.
#[derive(Clone, Debug)]
pub enum GameEnv {
    Board(BoardGame),
    GoalRush(GoalRush),
}

impl GameEnv {
    pub fn as_board(&self) -> Option<&BoardGame> {
        match self {
            GameEnv::Board(b) => Some(b),
            GameEnv::GoalRush(_) => None,
        }
    }

    pub fn as_goalrush(&self) -> Option<&GoalRush> {
        match self {
            GameEnv::GoalRush(g) => Some(g),
            GameEnv::Board(_) => None,
        }
    }

    pub fn as_goalrush_mut(&mut self) -> Option<&mut GoalRush> {
        match self {
            GameEnv::GoalRush(g) => Some(g),
            GameEnv::Board(_) => None,
        }
    }

    /// Levels available for curriculum training (0 for board games).
    pub fn max_level(&self) -> u32 {
        match self {
            GameEnv::Board(_) => 0,
            GameEnv::GoalRush(g) => g.difficulty().max_level,
        }
    }

    pub fn set_level(&mut self, level: u32) -> Result<()> {
        match self {
            GameEnv::Board(_) if level == 0 => Ok(()),
            GameEnv::Board(_) => Err(Error::config("env.level", "board games have no difficulty levels")),
            GameEnv::GoalRush(g) => {
                let max = g.difficulty().max_level;
                g.set_difficulty(DifficultyConfig::from_level(level, max)?);
                Ok(())
            }
        }
    }
}

impl Env for GameEnv {
    fn spec(&self) -> &DecPomdpSpec {
        match self {
            GameEnv::Board(e) => e.spec(),
            GameEnv::GoalRush(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> StepOutcome {
        match self {
            GameEnv::Board(e) => e.reset(seed),
            GameEnv::GoalRush(e) => e.reset(seed),
        }
    }

    fn step(&mut self, team0: &[usize], team1: &[usize]) -> Result<StepOutcome> {
        match self {
            GameEnv::Board(e) => e.step(team0, team1),
            GameEnv::GoalRush(e) => e.step(team0, team1),
        }
    }

    fn set_first_mover(&mut self, team: usize) {
        match self {
            GameEnv::Board(e) => e.set_first_mover(team),
            GameEnv::GoalRush(e) => e.set_first_mover(team),
        }
    }

    fn first_mover(&self) -> usize {
        match self {
            GameEnv::Board(e) => e.first_mover(),
            GameEnv::GoalRush(e) => e.first_mover(),
        }
    }

    fn is_done(&self) -> bool {
        match self {
            GameEnv::Board(e) => e.is_done(),
            GameEnv::GoalRush(e) => e.is_done(),
        }
    }

    fn state_vector(&self) -> Vec<f64> {
        match self {
            GameEnv::Board(e) => e.state_vector(),
            GameEnv::GoalRush(e) => e.state_vector(),
        }
    }
}

/// Environment selection as it appears in the run configuration.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum EnvConfig {
    TicTacToe,
    ConnectFour,
    GoalRush(GoalRushConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<GameEnv> {
        Ok(match self {
            EnvConfig::TicTacToe => GameEnv::Board(BoardGame::new(BoardKind::TicTacToe)),
            EnvConfig::ConnectFour => GameEnv::Board(BoardGame::new(BoardKind::ConnectFour)),
            EnvConfig::GoalRush(cfg) => GameEnv::GoalRush(GoalRush::new(cfg.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::TicTacToe => "tic_tac_toe",
            EnvConfig::ConnectFour => "connect_four",
            EnvConfig::GoalRush(_) => "goal_rush",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn result_perspective() {
        assert_eq!(GameResult::Win.for_team(1), GameResult::Loss);
        assert_eq!(GameResult::Draw.for_team(1), GameResult::Draw);
        assert_eq!(GameResult::Loss.for_team(0), GameResult::Loss);
        assert_eq!(GameResult::Draw.score(0.5), 0.5);
    }

    #[test]
    fn difficulty_is_monotone() {
        let mut prev = DifficultyConfig::from_level(0, 9).unwrap();
        assert_eq!(prev.opponent_strength, 0.0);
        assert_eq!(prev.placement_bias, 1.0);
        for l in 1..=9 {
            let d = DifficultyConfig::from_level(l, 9).unwrap();
            assert!(d.opponent_strength >= prev.opponent_strength);
            assert!(d.placement_bias <= prev.placement_bias);
            prev = d;
        }
        assert_eq!(prev.opponent_strength, 1.0);
        assert!(DifficultyConfig::from_level(10, 9).is_err());
    }

    #[test]
    fn stagger_zero_is_plain_reset() {
        for cfg in [EnvConfig::TicTacToe, EnvConfig::GoalRush(GoalRushConfig::default())] {
            let mut a = cfg.build().unwrap();
            let mut b = cfg.build().unwrap();
            let plain = a.reset(11);
            let st = staggered_reset(&mut b, 11, 0, &mut rng_from_seed(3)).unwrap();
            assert_eq!(plain, st);
        }
    }

    #[test]
    fn stagger_is_deterministic_and_bounded() {
        let cfg = EnvConfig::GoalRush(GoalRushConfig::default());
        for seed in 0..50 {
            let mut a = cfg.build().unwrap();
            let mut b = cfg.build().unwrap();
            let x = staggered_reset(&mut a, seed, 3, &mut rng_from_seed(seed)).unwrap();
            let y = staggered_reset(&mut b, seed, 3, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(x, y);
            assert!(x.step <= 3);
            assert!(!x.done);
        }
    }

    #[test]
    fn forced_actions_detects_single_legal() {
        let v = TeamView {
            obs: Vec::new(),
            global: Vec::new(),
            masks: alloc::vec![false, false, true, true, true, false],
        };
        assert_eq!(v.forced_actions(3), None);
        let v = TeamView {
            obs: Vec::new(),
            global: Vec::new(),
            masks: alloc::vec![false, false, true],
        };
        assert_eq!(v.forced_actions(3), Some(alloc::vec![2]));
    }
}
