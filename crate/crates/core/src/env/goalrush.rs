//! GoalRush: an 11×7 two-team gridworld with a single carrier token.
//!
//! Each team attacks the goal cell in the middle of the far edge. All agent
//! observations and actions are expressed in the agent's team frame, where
//! "forward" points at the goal being attacked; team 1's frame is the point
//! reflection of the grid.
//!
//! Step order: the carrier's pass or shot resolves first (from pre-move
//! positions), then every other chosen move is applied simultaneously, then
//! a carrier sharing its cell with an opponent is tackled.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use super::shaping::{default_goalrush_rules, shape_rewards, ShapingRule};
use super::{check_actions, DecPomdpSpec, DifficultyConfig, Env, GameResult, StepOutcome, TeamEvents, TeamView};
use crate::{Error, Result};

pub const GOALRUSH_WIDTH: i32 = 11;
pub const GOALRUSH_HEIGHT: i32 = 7;
pub const GOALRUSH_ACTIONS: usize = 8;

const GOAL: (i32, i32) = (GOALRUSH_WIDTH - 1, GOALRUSH_HEIGHT / 2);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum GoalRushAction {
    Forward = 0,
    Back = 1,
    Left = 2,
    Right = 3,
    PassForward = 4,
    PassLeft = 5,
    PassRight = 6,
    Shoot = 7,
}

impl GoalRushAction {
    pub const ALL: [GoalRushAction; GOALRUSH_ACTIONS] = [
        GoalRushAction::Forward,
        GoalRushAction::Back,
        GoalRushAction::Left,
        GoalRushAction::Right,
        GoalRushAction::PassForward,
        GoalRushAction::PassLeft,
        GoalRushAction::PassRight,
        GoalRushAction::Shoot,
    ];

    pub fn from_index(a: usize) -> Option<Self> {
        Self::ALL.get(a).copied()
    }

    fn delta(self) -> Option<(i32, i32)> {
        match self {
            GoalRushAction::Forward => Some((1, 0)),
            GoalRushAction::Back => Some((-1, 0)),
            GoalRushAction::Left => Some((0, 1)),
            GoalRushAction::Right => Some((0, -1)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GoalRushConfig {
    pub agents_per_team: usize,
    pub max_steps: usize,
    /// Starting difficulty level.
    pub level: u32,
    pub max_level: u32,
    pub shaping: Vec<ShapingRule>,
}

impl Default for GoalRushConfig {
    fn default() -> Self {
        GoalRushConfig {
            agents_per_team: 3,
            max_steps: 64,
            level: 0,
            max_level: super::DEFAULT_MAX_LEVEL,
            shaping: default_goalrush_rules(),
        }
    }
}

impl GoalRushConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents_per_team == 0 || self.agents_per_team > 5 {
            return Err(Error::config("env.agents_per_team", "must be in 1..=5"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps", "must be >= 1"));
        }
        if self.level > self.max_level {
            return Err(Error::config("env.level", "level exceeds max_level"));
        }
        if self.shaping.iter().any(|r| !r.magnitude.is_finite()) {
            return Err(Error::config("env.shaping", "magnitudes must be finite"));
        }
        Ok(())
    }
}

type Pos = (i32, i32);

fn in_bounds(p: Pos) -> bool {
    p.0 >= 0 && p.0 < GOALRUSH_WIDTH && p.1 >= 0 && p.1 < GOALRUSH_HEIGHT
}

/// Absolute ↔ team frame (an involution).
fn frame(team: usize, p: Pos) -> Pos {
    if team == 0 {
        p
    } else {
        (GOALRUSH_WIDTH - 1 - p.0, GOALRUSH_HEIGHT - 1 - p.1)
    }
}

fn chebyshev(a: Pos, b: Pos) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn manhattan(a: Pos, b: Pos) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

#[derive(Clone, Debug)]
pub struct GoalRush {
    cfg: GoalRushConfig,
    spec: DecPomdpSpec,
    difficulty: DifficultyConfig,
    /// Absolute positions per team.
    pos: [Vec<Pos>; 2],
    carrier: (usize, usize),
    passed: [bool; 2],
    steps: usize,
    done: bool,
    result: Option<GameResult>,
    first_mover: usize,
    rng: crate::Rng,
}

impl GoalRush {
    pub fn new(cfg: GoalRushConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.agents_per_team;
        let spec = DecPomdpSpec {
            agents_per_team: k,
            num_actions: GOALRUSH_ACTIONS,
            obs_parts: vec![3, k, 4, 2 * (k - 1).max(1), 2 * k, 4],
            global_state_width: 6 * k + 1,
            max_episode_len: cfg.max_steps,
            turn_based: false,
        };
        let difficulty = DifficultyConfig::from_level(cfg.level, cfg.max_level)?;
        let mut env = GoalRush {
            spec,
            difficulty,
            pos: [vec![(0, 0); k], vec![(0, 0); k]],
            carrier: (0, 0),
            passed: [false; 2],
            steps: 0,
            done: false,
            result: None,
            first_mover: 0,
            rng: crate::rng_from_seed(0),
            cfg,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &GoalRushConfig {
        &self.cfg
    }

    pub fn difficulty(&self) -> DifficultyConfig {
        self.difficulty
    }

    pub fn set_difficulty(&mut self, d: DifficultyConfig) {
        self.difficulty = d;
    }

    pub fn positions(&self, team: usize) -> &[Pos] {
        &self.pos[team]
    }

    /// `(team, agent)` holding the carrier token.
    pub fn carrier(&self) -> (usize, usize) {
        self.carrier
    }

    /// Places agents explicitly (absolute coordinates). For tests and probes.
    pub fn set_state(&mut self, team0: &[Pos], team1: &[Pos], carrier: (usize, usize)) -> Result<StepOutcome> {
        let k = self.cfg.agents_per_team;
        if team0.len() != k
            || team1.len() != k
            || carrier.0 > 1
            || carrier.1 >= k
            || !team0.iter().chain(team1).all(|&p| in_bounds(p))
        {
            return Err(Error::Precondition("invalid GoalRush state".into()));
        }
        self.pos = [team0.to_vec(), team1.to_vec()];
        self.carrier = carrier;
        self.passed = [false; 2];
        self.steps = 0;
        self.done = false;
        self.result = None;
        Ok(self.outcome([0.0; 2], [TeamEvents::default(); 2]))
    }

    fn frame_pos(&self, team: usize, agent: usize) -> Pos {
        frame(team, self.pos[team][agent])
    }

    /// Teammate that a pass in `dir` from `agent` would target.
    fn pass_target(&self, team: usize, agent: usize, dir: GoalRushAction) -> Option<usize> {
        let p = self.frame_pos(team, agent);
        let mut best: Option<(i32, usize)> = None;
        for j in 0..self.cfg.agents_per_team {
            if j == agent {
                continue;
            }
            let q = self.frame_pos(team, j);
            let (dx, dy) = (q.0 - p.0, q.1 - p.1);
            let inside = match dir {
                GoalRushAction::PassForward => dx > 0 && dy.abs() <= dx,
                GoalRushAction::PassLeft => dy > 0 && dx.abs() <= dy,
                GoalRushAction::PassRight => dy < 0 && dx.abs() <= -dy,
                _ => false,
            };
            if inside {
                let d = manhattan(p, q);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        best.map(|(_, j)| j)
    }

    fn legal(&self, team: usize, agent: usize, a: GoalRushAction) -> bool {
        let is_carrier = self.carrier == (team, agent);
        match a {
            GoalRushAction::Forward | GoalRushAction::Back | GoalRushAction::Left | GoalRushAction::Right => {
                let (dx, dy) = a.delta().unwrap();
                let p = self.frame_pos(team, agent);
                in_bounds((p.0 + dx, p.1 + dy))
            }
            GoalRushAction::PassForward | GoalRushAction::PassLeft | GoalRushAction::PassRight => {
                is_carrier && self.pass_target(team, agent, a).is_some()
            }
            GoalRushAction::Shoot => is_carrier && self.frame_pos(team, agent) == GOAL,
        }
    }

    fn masks(&self, team: usize) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.cfg.agents_per_team * GOALRUSH_ACTIONS);
        for i in 0..self.cfg.agents_per_team {
            for a in GoalRushAction::ALL {
                m.push(self.legal(team, i, a));
            }
        }
        m
    }

    fn view(&self, team: usize) -> TeamView {
        let k = self.cfg.agents_per_team;
        let sx = 1.0 / (GOALRUSH_WIDTH - 1) as f64;
        let sy = 1.0 / (GOALRUSH_HEIGHT - 1) as f64;
        let opp = 1 - team;
        let (ct, ca) = self.carrier;
        let cpos = frame(team, self.pos[ct][ca]);
        let time = self.steps as f64 / self.cfg.max_steps as f64;
        let mut obs = Vec::with_capacity(k * self.spec.obs_width());
        for i in 0..k {
            let p = self.frame_pos(team, i);
            let me = self.carrier == (team, i);
            obs.extend_from_slice(&[p.0 as f64 * sx, p.1 as f64 * sy, me as u8 as f64]);
            obs.extend((0..k).map(|j| (i == j) as u8 as f64));
            obs.extend_from_slice(&[cpos.0 as f64 * sx, cpos.1 as f64 * sy, (ct == team) as u8 as f64, me as u8 as f64]);
            if k == 1 {
                obs.extend_from_slice(&[0.0, 0.0]);
            }
            for j in (0..k).filter(|&j| j != i) {
                let q = self.frame_pos(team, j);
                obs.extend_from_slice(&[(q.0 - p.0) as f64 * sx, (q.1 - p.1) as f64 * sy]);
            }
            for j in 0..k {
                let q = frame(team, self.pos[opp][j]);
                obs.extend_from_slice(&[(q.0 - p.0) as f64 * sx, (q.1 - p.1) as f64 * sy]);
            }
            obs.extend_from_slice(&[
                time,
                (GOAL.0 - p.0) as f64 * sx,
                (GOAL.1 - p.1) as f64 * sy,
                (ct == team) as u8 as f64,
            ]);
        }
        let mut global = Vec::with_capacity(self.spec.global_state_width);
        for t in [team, opp] {
            for &q in &self.pos[t] {
                let q = frame(team, q);
                global.extend_from_slice(&[q.0 as f64 * sx, q.1 as f64 * sy]);
            }
        }
        for t in [team, opp] {
            global.extend((0..k).map(|j| (self.carrier == (t, j)) as u8 as f64));
        }
        global.push(time);
        TeamView {
            obs,
            global,
            masks: self.masks(team),
        }
    }

    fn outcome(&self, base: [f64; 2], events: [TeamEvents; 2]) -> StepOutcome {
        let o = StepOutcome {
            teams: [self.view(0), self.view(1)],
            base_rewards: base,
            rewards: base,
            done: self.done,
            result: self.result,
            step: self.steps,
            events,
        };
        shape_rewards(o, &self.cfg.shaping)
    }

    fn opponent_on(&self, team: usize, cell: Pos) -> Option<usize> {
        self.pos[1 - team].iter().position(|&q| q == cell)
    }

    /// Moves the ball along a pass; the first opponent on the path (passer
    /// excluded, receiver cell included) intercepts.
    fn resolve_pass(&mut self, team: usize, agent: usize, receiver: usize) {
        let p = self.pos[team][agent];
        let q = self.pos[team][receiver];
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let n = dx.abs().max(dy.abs());
        for s in 1..=n {
            let cell = (
                p.0 + crate::math::round(dx as f64 * s as f64 / n as f64) as i32,
                p.1 + crate::math::round(dy as f64 * s as f64 / n as f64) as i32,
            );
            if let Some(j) = self.opponent_on(team, cell) {
                self.carrier = (1 - team, j);
                self.passed = [false; 2];
                return;
            }
        }
        self.carrier = (team, receiver);
        self.passed[team] = true;
    }

    /// Scripted team behaviour: the carrier heads for the goal and shoots;
    /// teammates push forward; defenders chase the carrier.
    pub fn scripted_actions(&self, team: usize) -> Vec<usize> {
        let k = self.cfg.agents_per_team;
        let (ct, ca) = self.carrier;
        let cpos = frame(team, self.pos[ct][ca]);
        let moves = [
            GoalRushAction::Forward,
            GoalRushAction::Left,
            GoalRushAction::Right,
            GoalRushAction::Back,
        ];
        (0..k)
            .map(|i| {
                let p = self.frame_pos(team, i);
                let target = if ct == team {
                    if ca == i && self.legal(team, i, GoalRushAction::Shoot) {
                        return GoalRushAction::Shoot as usize;
                    }
                    if ca == i {
                        GOAL
                    } else {
                        (GOALRUSH_WIDTH - 1, cpos.1)
                    }
                } else {
                    cpos
                };
                let (dx, dy) = (target.0 - p.0, target.1 - p.1);
                let preferred = if dx.abs() >= dy.abs() && dx != 0 {
                    if dx > 0 {
                        GoalRushAction::Forward
                    } else {
                        GoalRushAction::Back
                    }
                } else if dy > 0 {
                    GoalRushAction::Left
                } else if dy < 0 {
                    GoalRushAction::Right
                } else {
                    GoalRushAction::Forward
                };
                if self.legal(team, i, preferred) {
                    preferred as usize
                } else {
                    moves.iter().find(|&&m| self.legal(team, i, m)).copied().unwrap() as usize
                }
            })
            .collect()
    }

    fn place(&mut self) {
        let k = self.cfg.agents_per_team;
        let att = self.first_mover;
        let def = 1 - att;
        let b = self.difficulty.placement_bias;
        let lo = crate::math::round(1.0 + (1.0 - b) * 7.0) as i32;
        let hi = lo + 1;
        let cells: Vec<Pos> = (0..GOALRUSH_WIDTH)
            .flat_map(|x| (0..GOALRUSH_HEIGHT).map(move |y| (x, y)))
            .collect();
        let pick = |rng: &mut crate::Rng, c: &[Pos]| c[rng.random_range(0..c.len())];
        let ci = self.rng.random_range(0..k);
        let ring: Vec<Pos> = cells
            .iter()
            .copied()
            .filter(|&p| (lo..=hi).contains(&manhattan(p, GOAL)))
            .collect();
        let carrier = pick(&mut self.rng, &ring);
        let mut taken = vec![carrier, GOAL];
        let mut attackers = vec![carrier; k];
        for (i, slot) in attackers.iter_mut().enumerate() {
            if i == ci {
                continue;
            }
            let near: Vec<Pos> = cells
                .iter()
                .copied()
                .filter(|&p| chebyshev(p, carrier) <= 2 && !taken.contains(&p))
                .collect();
            *slot = pick(&mut self.rng, &near);
            taken.push(*slot);
        }
        let mut defenders = Vec::with_capacity(k);
        for _ in 0..k {
            let half: Vec<Pos> = cells
                .iter()
                .copied()
                .filter(|&p| p.0 >= GOALRUSH_WIDTH / 2 && !taken.contains(&p))
                .collect();
            let p = pick(&mut self.rng, &half);
            defenders.push(p);
            taken.push(p);
        }
        self.pos[att] = attackers.into_iter().map(|p| frame(att, p)).collect();
        self.pos[def] = defenders.into_iter().map(|p| frame(att, p)).collect();
        self.carrier = (att, ci);
    }
}

impl Env for GoalRush {
    fn spec(&self) -> &DecPomdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepOutcome {
        self.rng = crate::Rng::seed_from_u64(seed);
        self.steps = 0;
        self.done = false;
        self.result = None;
        self.passed = [false; 2];
        self.place();
        self.outcome([0.0; 2], [TeamEvents::default(); 2])
    }

    fn step(&mut self, team0: &[usize], team1: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let k = self.cfg.agents_per_team;
        let views = [
            TeamView {
                obs: Vec::new(),
                global: Vec::new(),
                masks: self.masks(0),
            },
            TeamView {
                obs: Vec::new(),
                global: Vec::new(),
                masks: self.masks(1),
            },
        ];
        check_actions(&views, [team0, team1], k, GOALRUSH_ACTIONS)?;
        let strength = self.difficulty.opponent_strength;
        let applied1: Vec<bool> = (0..k).map(|_| self.rng.random::<f64>() < strength).collect();
        let chosen = |t: usize, i: usize| -> Option<GoalRushAction> {
            let a = if t == 0 { team0[i] } else { team1[i] };
            if t == 1 && !applied1[i] {
                None
            } else {
                GoalRushAction::from_index(a)
            }
        };
        self.steps += 1;
        let mut base = [0.0; 2];
        let mut events = [TeamEvents::default(); 2];

        let (ct, ca) = self.carrier;
        let mut carrier_acted = false;
        match chosen(ct, ca) {
            Some(GoalRushAction::Shoot) => {
                self.done = true;
                self.result = Some(if ct == 0 { GameResult::Win } else { GameResult::Loss });
                base = if ct == 0 { [1.0, -1.0] } else { [-1.0, 1.0] };
                events[ct].pass_before_goal = self.passed[ct];
                carrier_acted = true;
            }
            Some(dir @ (GoalRushAction::PassForward | GoalRushAction::PassLeft | GoalRushAction::PassRight)) => {
                let r = self.pass_target(ct, ca, dir).expect("legal pass has a target");
                self.resolve_pass(ct, ca, r);
                carrier_acted = true;
            }
            _ => {}
        }

        if !self.done {
            for t in 0..2 {
                for i in 0..k {
                    if carrier_acted && (t, i) == (ct, ca) {
                        continue;
                    }
                    if let Some((dx, dy)) = chosen(t, i).and_then(GoalRushAction::delta) {
                        let p = self.frame_pos(t, i);
                        self.pos[t][i] = frame(t, (p.0 + dx, p.1 + dy));
                    }
                }
            }
            let (ct, ca) = self.carrier;
            let cell = self.pos[ct][ca];
            if let Some(j) = self.opponent_on(ct, cell) {
                self.carrier = (1 - ct, j);
                self.passed = [false; 2];
                let p = self.frame_pos(ct, ca);
                let back = (p.0 - 1, p.1);
                if in_bounds(back) {
                    self.pos[ct][ca] = frame(ct, back);
                }
            }
            if self.steps >= self.cfg.max_steps {
                self.done = true;
                self.result = Some(GameResult::Draw);
            }
        }

        events[self.carrier.0].holding = true;
        for (t, ev) in events.iter_mut().enumerate() {
            let ps = &self.pos[t];
            ev.grouped = (0..k).any(|i| (i + 1..k).any(|j| chebyshev(ps[i], ps[j]) <= 1));
        }
        Ok(self.outcome(base, events))
    }

    fn set_first_mover(&mut self, team: usize) {
        self.first_mover = team & 1;
    }

    fn first_mover(&self) -> usize {
        self.first_mover
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn state_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.cfg.agents_per_team + 3);
        for t in 0..2 {
            for &(x, y) in &self.pos[t] {
                v.push(x as f64);
                v.push(y as f64);
            }
        }
        v.push(self.carrier.0 as f64);
        v.push(self.carrier.1 as f64);
        v.push(self.steps as f64);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::random_legal_actions;
    use crate::rng_from_seed;

    fn env_at(level: u32) -> GoalRush {
        GoalRush::new(GoalRushConfig {
            level,
            ..GoalRushConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn widths_match_spec() {
        let mut g = env_at(0);
        let o = g.reset(5);
        let s = g.spec().clone();
        assert_eq!(s.obs_parts.len(), 6);
        for t in 0..2 {
            assert_eq!(o.teams[t].obs.len(), 3 * s.obs_width());
            assert_eq!(o.teams[t].global.len(), s.global_state_width);
            assert_eq!(o.teams[t].masks.len(), 3 * GOALRUSH_ACTIONS);
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = env_at(4);
        let mut b = env_at(4);
        assert_eq!(a.reset(9), b.reset(9));
        assert_eq!(a.state_vector(), b.state_vector());
    }

    #[test]
    fn full_bias_places_carrier_near_goal() {
        for team in 0..2 {
            for seed in 0..200 {
                let mut g = env_at(0);
                g.set_first_mover(team);
                g.reset(seed);
                let (ct, ca) = g.carrier();
                assert_eq!(ct, team);
                let p = frame(ct, g.positions(ct)[ca]);
                assert!(manhattan(p, GOAL) <= 2, "seed {seed}: {p:?}");
            }
        }
    }

    #[test]
    fn zero_strength_opponents_never_move() {
        let mut g = env_at(0);
        let mut rng = rng_from_seed(1);
        for seed in 0..20 {
            let mut o = g.reset(seed);
            while !o.done {
                let before = g.positions(1).to_vec();
                let a0 = random_legal_actions(&o.teams[0], 8, &mut rng);
                let a1 = random_legal_actions(&o.teams[1], 8, &mut rng);
                o = g.step(&a0, &a1).unwrap();
                // only a tackled carrier is displaced, by one knock-back cell
                for (i, (a, b)) in g.positions(1).iter().zip(&before).enumerate() {
                    if a != b {
                        assert_eq!((a.0 - b.0, a.1 - b.1), (1, 0));
                        assert_ne!(g.carrier(), (1, i));
                    }
                }
            }
        }
    }

    #[test]
    fn shot_on_goal_scores() {
        let mut g = env_at(0);
        let o = g
            .set_state(&[(10, 3), (5, 3), (5, 4)], &[(0, 0), (0, 1), (0, 2)], (0, 0))
            .unwrap();
        assert!(o.teams[0].masks[GoalRushAction::Shoot as usize]);
        assert!(!o.teams[0].masks[GOALRUSH_ACTIONS + GoalRushAction::Shoot as usize]);
        let o = g.step(&[7, 0, 0], &[1, 1, 1]).unwrap();
        assert!(o.done);
        assert_eq!(o.result, Some(GameResult::Win));
        assert_eq!(o.base_rewards, [1.0, -1.0]);
    }

    #[test]
    fn team_one_scores_on_its_goal() {
        let mut g = env_at(9);
        g.set_state(&[(10, 0), (10, 1), (10, 2)], &[(0, 3), (5, 0), (5, 1)], (1, 0))
            .unwrap();
        let o = g.step(&[1, 1, 1], &[7, 0, 0]).unwrap();
        assert_eq!(o.result, Some(GameResult::Loss));
        assert_eq!(o.rewards[0] + o.rewards[1], 0.0);
    }

    #[test]
    fn pass_reaches_teammate_and_interception() {
        let mut g = env_at(9);
        g.set_state(&[(2, 3), (6, 3), (0, 0)], &[(10, 6), (10, 5), (10, 4)], (0, 0))
            .unwrap();
        g.step(&[4, 1, 2], &[0, 0, 0]).unwrap();
        assert_eq!(g.carrier(), (0, 1));

        g.set_state(&[(2, 3), (6, 3), (0, 0)], &[(4, 3), (10, 5), (10, 4)], (0, 0))
            .unwrap();
        // the opponent on (4,3) intercepts, then moves on to (3,3)
        g.step(&[4, 2, 2], &[0, 0, 0]).unwrap();
        assert_eq!(g.carrier(), (1, 0));
    }

    #[test]
    fn tackle_transfers_ball_and_knocks_back() {
        let mut g = env_at(9);
        g.set_state(&[(4, 3), (0, 0), (0, 1)], &[(6, 3), (10, 6), (10, 5)], (0, 0))
            .unwrap();
        // carrier moves forward to (5,3); opponent 0 moves forward in its
        // frame, i.e. absolute -x, to (5,3)
        g.step(&[0, 2, 2], &[0, 0, 0]).unwrap();
        assert_eq!(g.carrier(), (1, 0));
        assert_eq!(g.positions(0)[0], (4, 3));
    }

    #[test]
    fn episode_ends_by_max_steps() {
        let mut g = GoalRush::new(GoalRushConfig {
            max_steps: 5,
            ..GoalRushConfig::default()
        })
        .unwrap();
        let mut rng = rng_from_seed(0);
        let mut o = g.reset(0);
        let mut n = 0;
        while !o.done {
            let a0 = random_legal_actions(&o.teams[0], 8, &mut rng);
            let a1 = random_legal_actions(&o.teams[1], 8, &mut rng);
            o = g.step(&a0, &a1).unwrap();
            n += 1;
        }
        assert!(n <= 5);
    }

    #[test]
    fn grouping_penalty_applies() {
        let mut g = env_at(0);
        g.set_state(&[(0, 0), (0, 1), (5, 6)], &[(10, 6), (8, 0), (6, 0)], (1, 0))
            .unwrap();
        // team 0 agents 0 and 1 stay adjacent after moving forward together;
        // team 1 agents are static and apart; team 1 holds (+0.0001)
        let o = g.step(&[0, 0, 1], &[0, 0, 0]).unwrap();
        assert!(o.events[0].grouped);
        assert!(!o.events[1].grouped);
        assert!((o.rewards[0] - (-0.001 - 0.0001)).abs() < 1e-15);
        assert_eq!(o.rewards[0] + o.rewards[1], 0.0);
    }

    #[test]
    fn scripted_actions_are_legal() {
        let mut g = env_at(9);
        for seed in 0..30 {
            g.set_first_mover((seed % 2) as usize);
            let mut o = g.reset(seed);
            while !o.done {
                let a0 = g.scripted_actions(0);
                let a1 = g.scripted_actions(1);
                o = g.step(&a0, &a1).unwrap();
            }
        }
    }
}
