//! Acting in environments: opponent controllers, the vectorised recording
//! actor that fills rollout chunks, and a batched match runner.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::arena::minimax::TicTacToeOracle;
use crate::env::{random_legal_actions, staggered_reset, Env, EnvConfig, GameEnv, GameResult, TeamView};
use crate::jrpo::{Chunk, TrajectoryStep};
use crate::nn::{PolicyNet, RecurrentState, ValueNet};
use crate::{derive_seed, rng_from_seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActMode {
    Greedy,
    Stochastic,
}

/// Anything that can play one team.
#[derive(Clone, Debug)]
pub enum Controller {
    Policy { net: Arc<PolicyNet>, mode: ActMode },
    /// GoalRush hand-written opponent.
    Scripted,
    Random,
    /// Exact Tic-Tac-Toe play with random tie-breaking.
    Minimax(Arc<TicTacToeOracle>),
    /// `inner` with each of its moves replaced, with probability
    /// `random_prob`, by uniformly random legal actions. Log-probs and
    /// recurrent states still come from `inner`.
    Handicapped { inner: Arc<Controller>, random_prob: f64 },
}

impl Controller {
    pub fn policy(net: PolicyNet, mode: ActMode) -> Self {
        Controller::Policy {
            net: Arc::new(net),
            mode,
        }
    }

    pub fn handicapped(inner: Controller, random_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&random_prob) {
            return Err(Error::Precondition(format!("random_prob {random_prob} outside [0, 1]")));
        }
        Ok(Controller::Handicapped {
            inner: Arc::new(inner),
            random_prob,
        })
    }

    fn hidden_width(&self) -> usize {
        match self {
            Controller::Policy { net, .. } => net.spec().hidden_width,
            Controller::Handicapped { inner, .. } => inner.hidden_width(),
            _ => 0,
        }
    }

    /// Whether two controllers can share one batched forward pass.
    fn same_as(&self, other: &Controller) -> bool {
        match (self, other) {
            (Controller::Policy { net: a, mode: ma }, Controller::Policy { net: b, mode: mb }) => {
                Arc::ptr_eq(a, b) && ma == mb
            }
            (Controller::Scripted, Controller::Scripted) | (Controller::Random, Controller::Random) => true,
            (Controller::Minimax(a), Controller::Minimax(b)) => Arc::ptr_eq(a, b),
            (
                Controller::Handicapped { inner: a, random_prob: pa },
                Controller::Handicapped { inner: b, random_prob: pb },
            ) => Arc::ptr_eq(a, b) && pa == pb,
            _ => false,
        }
    }
}

/// Identity of a training opponent, for win-rate bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OpponentTag {
    Snapshot(u64),
    Scripted,
    Random,
    Minimax,
}

#[derive(Clone, Debug)]
pub struct PlanEntry {
    pub weight: f64,
    pub controller: Controller,
    pub tag: OpponentTag,
}

/// Categorical distribution over opponents, fixed between learner updates.
#[derive(Clone, Debug, Default)]
pub struct OpponentPlan {
    pub entries: Vec<PlanEntry>,
}

impl OpponentPlan {
    pub fn single(controller: Controller, tag: OpponentTag) -> Self {
        OpponentPlan {
            entries: vec![PlanEntry {
                weight: 1.0,
                controller,
                tag,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyPool);
        }
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        if self.entries.iter().any(|e| !(e.weight >= 0.0) || !e.weight.is_finite()) || !(total > 0.0) {
            return Err(Error::Precondition("opponent weights must be finite, >= 0 and not all zero".into()));
        }
        Ok(())
    }

    /// Index of a sampled entry. Assumes [`OpponentPlan::validate`] passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        let u = rng.random::<f64>() * total;
        let mut cum = 0.0;
        let mut last = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.weight <= 0.0 {
                continue;
            }
            cum += e.weight;
            last = i;
            if u < cum {
                return i;
            }
        }
        last
    }
}

/// Actions of one team in one environment, with the log-probabilities of
/// the chosen actions when a policy produced them.
struct TeamAct {
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    states: Vec<RecurrentState>,
}

/// Batched policy step over several environments' teams.
fn policy_act<R: Rng + ?Sized>(
    net: &PolicyNet,
    mode: ActMode,
    views: &[&TeamView],
    states: &[&[RecurrentState]],
    rng: &mut R,
) -> Result<Vec<TeamAct>> {
    let k = net.spec().num_agents;
    let mut obs = Vec::new();
    let mut masks = Vec::new();
    let mut ids = Vec::with_capacity(views.len() * k);
    let mut rec = Vec::with_capacity(views.len() * k);
    for (v, s) in views.iter().zip(states) {
        obs.extend_from_slice(&v.obs);
        masks.extend_from_slice(&v.masks);
        ids.extend(0..k);
        rec.extend_from_slice(s);
    }
    let (dists, next) = net.forward_batch(&obs, &ids, &rec, &masks)?;
    let mut out = Vec::with_capacity(views.len());
    for (d, s) in dists.chunks(k).zip(next.chunks(k)) {
        let mut actions = Vec::with_capacity(k);
        let mut log_probs = Vec::with_capacity(k);
        for dist in d {
            let act = match mode {
                ActMode::Greedy => dist.argmax(),
                ActMode::Stochastic => dist.sample(rng),
            };
            log_probs.push(dist.log_prob(act)?);
            actions.push(act);
        }
        out.push(TeamAct {
            actions,
            log_probs,
            states: s.to_vec(),
        });
    }
    Ok(out)
}

/// Chooses actions for `team` in every env of a group sharing one
/// controller. Policy controllers run one batched forward pass and advance
/// the recurrent states; rows whose agents all have a single legal action
/// must not be passed in.
fn act_group<R: Rng + ?Sized>(
    ctrl: &Controller,
    team: usize,
    envs: &[&GameEnv],
    views: &[&TeamView],
    states: &[&[RecurrentState]],
    rng: &mut R,
) -> Result<Vec<TeamAct>> {
    let a = envs.first().map_or(0, |e| e.spec().num_actions);
    match ctrl {
        Controller::Policy { net, mode } => policy_act(net, *mode, views, states, rng),
        Controller::Random => Ok(views
            .iter()
            .map(|v| TeamAct {
                actions: random_legal_actions(v, a, rng),
                log_probs: Vec::new(),
                states: Vec::new(),
            })
            .collect()),
        Controller::Scripted => envs
            .iter()
            .map(|e| {
                let g = e
                    .as_goalrush()
                    .ok_or_else(|| Error::Precondition("scripted opponent needs GoalRush".into()))?;
                Ok(TeamAct {
                    actions: g.scripted_actions(team),
                    log_probs: Vec::new(),
                    states: Vec::new(),
                })
            })
            .collect(),
        Controller::Minimax(oracle) => envs
            .iter()
            .map(|e| {
                let b = e
                    .as_board()
                    .filter(|b| b.kind() == crate::env::BoardKind::TicTacToe)
                    .ok_or_else(|| Error::Precondition("minimax opponent needs Tic-Tac-Toe".into()))?;
                let mv = oracle
                    .choose(b.cells(), b.to_move(), rng)
                    .ok_or_else(|| Error::Precondition("minimax asked to move on a full board".into()))?;
                Ok(TeamAct {
                    actions: vec![mv],
                    log_probs: Vec::new(),
                    states: Vec::new(),
                })
            })
            .collect(),
        Controller::Handicapped { inner, random_prob } => {
            let mut acts = act_group(inner, team, envs, views, states, rng)?;
            for (act, v) in acts.iter_mut().zip(views) {
                if rng.random_bool(*random_prob) {
                    act.actions = random_legal_actions(v, a, rng);
                }
            }
            Ok(acts)
        }
    }
}

/// Splits `items` (slot indices) into runs sharing a controller, in order of
/// first appearance.
fn group_by_controller(items: &[usize], ctrl_of: impl Fn(usize) -> usize, ctrls: &[Controller]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in items {
        let c = ctrl_of(i);
        match groups.iter_mut().find(|(g, _)| ctrls[*g].same_as(&ctrls[c])) {
            Some((_, v)) => v.push(i),
            None => groups.push((c, vec![i])),
        }
    }
    groups.into_iter().map(|(_, v)| v).collect()
}

/// Result of one finished training episode, from the learner's side.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchRecord {
    pub opponent: OpponentTag,
    pub result: GameResult,
    pub level: u32,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ActorConfig {
    /// Environment instances stepped in lockstep.
    pub num_envs: usize,
    /// Recorded steps per chunk; a multiple of the BPTT length.
    pub chunk_len: usize,
    /// Upper bound of the random warm-up after each reset.
    pub stagger_k_max: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            num_envs: 16,
            chunk_len: 500,
            stagger_k_max: 0,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self, bptt: usize) -> Result<()> {
        if self.num_envs == 0 {
            return Err(Error::config("actor.num_envs", "must be >= 1"));
        }
        if self.chunk_len == 0 || bptt == 0 || self.chunk_len % bptt != 0 {
            return Err(Error::config("actor.chunk_len", "must be a positive multiple of the BPTT length"));
        }
        Ok(())
    }
}

/// A completed chunk tagged with the oldest parameter version that acted
/// in it.
#[derive(Clone, Debug, PartialEq)]
pub struct VersionedChunk {
    pub chunk: Chunk,
    pub version: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub chunks: Vec<VersionedChunk>,
    pub matches: Vec<MatchRecord>,
    pub env_steps: u64,
}

#[derive(Clone, Debug)]
struct Slot {
    env: GameEnv,
    views: [TeamView; 2],
    live: bool,
    episodes: u64,
    episode_steps: usize,
    opponent: usize,
    level: u32,
    learner_states: Vec<RecurrentState>,
    value_state: RecurrentState,
    opp_states: Vec<RecurrentState>,
    pending: Vec<TrajectoryStep>,
    pending_version: u64,
    recorded_this_episode: bool,
}

/// Vectorised actor. Team 0 is the learner; team 1 is drawn from the
/// current [`OpponentPlan`] at every episode start.
///
/// A step is recorded only when some learner agent has a real choice.
/// Forced steps are played automatically, leave the recurrent state alone
/// and credit their reward to the last recorded step. A chunk is closed
/// lazily at the next decision, whose value estimate becomes the bootstrap.
#[derive(Clone, Debug)]
pub struct Actor {
    cfg: ActorConfig,
    seed: u64,
    rng: crate::Rng,
    slots: Vec<Slot>,
    plan: OpponentPlan,
    level: u32,
    hidden: usize,
    agents: usize,
    env_steps: u64,
}

impl Actor {
    pub fn new(env: &EnvConfig, cfg: ActorConfig, hidden_width: usize, seed: u64) -> Result<Self> {
        if cfg.num_envs == 0 || cfg.chunk_len == 0 {
            return Err(Error::config("actor", "num_envs and chunk_len must be >= 1"));
        }
        let proto = env.build()?;
        let agents = proto.spec().agents_per_team;
        let blank = TeamView {
            obs: Vec::new(),
            global: Vec::new(),
            masks: Vec::new(),
        };
        let slots = (0..cfg.num_envs)
            .map(|_| Slot {
                env: proto.clone(),
                views: [blank.clone(), blank.clone()],
                live: false,
                episodes: 0,
                episode_steps: 0,
                opponent: 0,
                level: 0,
                learner_states: vec![RecurrentState::zeros(hidden_width); agents],
                value_state: RecurrentState::zeros(hidden_width),
                opp_states: Vec::new(),
                pending: Vec::new(),
                pending_version: 0,
                recorded_this_episode: false,
            })
            .collect();
        Ok(Actor {
            cfg,
            seed,
            rng: rng_from_seed(derive_seed(seed, 0xAC70)),
            slots,
            plan: OpponentPlan::default(),
            level: 0,
            hidden: hidden_width,
            agents,
            env_steps: 0,
        })
    }

    /// Opponent distribution for episodes started from now on.
    pub fn set_plan(&mut self, plan: OpponentPlan) -> Result<()> {
        plan.validate()?;
        // Running episodes keep their opponent; remap indices into the new
        // plan by carrying the old controllers along.
        let old = core::mem::take(&mut self.plan);
        let mut entries = plan.entries;
        for s in self.slots.iter_mut().filter(|s| s.live) {
            let e = &old.entries[s.opponent];
            entries.push(PlanEntry {
                weight: 0.0,
                controller: e.controller.clone(),
                tag: e.tag,
            });
            s.opponent = entries.len() - 1;
        }
        self.plan = OpponentPlan { entries };
        Ok(())
    }

    /// Difficulty level for episodes started from now on.
    pub fn set_level(&mut self, level: u32) -> Result<()> {
        if let Some(s) = self.slots.first() {
            if level > s.env.max_level() {
                return Err(Error::config("curriculum.level", "above the environment's maximum level"));
            }
        }
        self.level = level;
        Ok(())
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Drops unfinished chunks and ends every episode, e.g. after the
    /// opponent set changed in a way that invalidates running matches.
    pub fn reset_all(&mut self) {
        for s in &mut self.slots {
            s.live = false;
            s.pending.clear();
        }
    }

    fn start_episode(&mut self, i: usize) -> Result<()> {
        let pick = self.plan.sample(&mut self.rng);
        let level = self.level;
        let seed = derive_seed(self.seed, ((i as u64) << 40) ^ self.slots[i].episodes);
        let k_max = self.cfg.stagger_k_max;
        let opp_hidden = self.plan.entries[pick].controller.hidden_width();
        let agents = self.agents;
        let hidden = self.hidden;
        let s = &mut self.slots[i];
        if s.env.max_level() > 0 {
            s.env.set_level(level)?;
        }
        s.env.set_first_mover(((s.episodes + i as u64) % 2) as usize);
        let out = staggered_reset(&mut s.env, seed, k_max, &mut self.rng)?;
        self.env_steps += out.step as u64;
        s.views = out.teams;
        s.live = true;
        s.episodes += 1;
        s.episode_steps = out.step;
        s.opponent = pick;
        s.level = level;
        s.learner_states = vec![RecurrentState::zeros(hidden); agents];
        s.value_state = RecurrentState::zeros(hidden);
        s.opp_states = vec![RecurrentState::zeros(opp_hidden); agents];
        s.recorded_this_episode = false;
        Ok(())
    }

    /// Steps every environment until at least `min_steps` recorded steps sit
    /// in completed chunks.
    pub fn collect(&mut self, policy: &PolicyNet, value: &ValueNet, version: u64, min_steps: usize) -> Result<Rollout> {
        self.plan.validate()?;
        if policy.spec().hidden_width != self.hidden || value.spec().hidden_width != self.hidden {
            return Err(Error::Shape("network hidden width differs from the actor's".into()));
        }
        let mut out = Rollout::default();
        let start_steps = self.env_steps;
        let mut done_steps = 0usize;
        let n = self.slots.len();
        let a = self.slots[0].env.spec().num_actions;
        while done_steps < min_steps.max(1) {
            for i in 0..n {
                if !self.slots[i].live {
                    self.start_episode(i)?;
                }
            }
            // Learner decisions, batched.
            let mut learner_actions: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut deciding = Vec::new();
            for (i, s) in self.slots.iter().enumerate() {
                match s.views[0].forced_actions(a) {
                    Some(f) => learner_actions[i] = f,
                    None => deciding.push(i),
                }
            }
            if !deciding.is_empty() {
                let views: Vec<&TeamView> = deciding.iter().map(|&i| &self.slots[i].views[0]).collect();
                let states: Vec<&[RecurrentState]> =
                    deciding.iter().map(|&i| &self.slots[i].learner_states[..]).collect();
                let acts = policy_act(policy, ActMode::Stochastic, &views, &states, &mut self.rng)?;
                let mut globals = Vec::new();
                let mut vstates = Vec::with_capacity(deciding.len());
                for &i in &deciding {
                    globals.extend_from_slice(&self.slots[i].views[0].global);
                    vstates.push(self.slots[i].value_state.clone());
                }
                let (values, next_v) = value.forward_batch(&globals, &vstates)?;
                for (((&i, act), v), nv) in deciding.iter().zip(acts).zip(values).zip(next_v) {
                    let s = &mut self.slots[i];
                    if s.pending.len() == self.cfg.chunk_len {
                        let steps = core::mem::take(&mut s.pending);
                        done_steps += steps.len();
                        out.chunks.push(VersionedChunk {
                            chunk: Chunk {
                                steps,
                                bootstrap_value: v,
                            },
                            version: s.pending_version,
                        });
                    }
                    if s.pending.is_empty() {
                        s.pending_version = version;
                    }
                    s.pending.push(TrajectoryStep {
                        obs: s.views[0].obs.clone(),
                        global: s.views[0].global.clone(),
                        actions: act.actions.clone(),
                        old_log_probs: act.log_probs,
                        masks: s.views[0].masks.clone(),
                        policy_states: core::mem::replace(&mut s.learner_states, act.states),
                        value_state: core::mem::replace(&mut s.value_state, nv),
                        reward: 0.0,
                        value: v,
                        done: false,
                    });
                    s.recorded_this_episode = true;
                    learner_actions[i] = act.actions;
                }
            }
            // Opponent decisions, batched per controller.
            let mut opp_actions: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut opp_deciding = Vec::new();
            for (i, s) in self.slots.iter().enumerate() {
                match s.views[1].forced_actions(a) {
                    Some(f) => opp_actions[i] = f,
                    None => opp_deciding.push(i),
                }
            }
            let ctrls: Vec<Controller> = self.plan.entries.iter().map(|e| e.controller.clone()).collect();
            for group in group_by_controller(&opp_deciding, |i| self.slots[i].opponent, &ctrls) {
                let ctrl = &ctrls[self.slots[group[0]].opponent];
                let envs: Vec<&GameEnv> = group.iter().map(|&i| &self.slots[i].env).collect();
                let views: Vec<&TeamView> = group.iter().map(|&i| &self.slots[i].views[1]).collect();
                let states: Vec<&[RecurrentState]> = group.iter().map(|&i| &self.slots[i].opp_states[..]).collect();
                let acts = act_group(ctrl, 1, &envs, &views, &states, &mut self.rng)?;
                for (&i, act) in group.iter().zip(acts) {
                    if !act.states.is_empty() {
                        self.slots[i].opp_states = act.states;
                    }
                    opp_actions[i] = act.actions;
                }
            }
            // Advance every environment.
            for i in 0..n {
                let s = &mut self.slots[i];
                let step = s.env.step(&learner_actions[i], &opp_actions[i])?;
                self.env_steps += 1;
                s.episode_steps += 1;
                if s.recorded_this_episode {
                    if let Some(last) = s.pending.last_mut() {
                        last.reward += step.rewards[0];
                    }
                }
                s.views = step.teams;
                if step.done {
                    if s.recorded_this_episode {
                        if let Some(last) = s.pending.last_mut() {
                            last.done = true;
                        }
                    }
                    let result = step
                        .result
                        .ok_or_else(|| Error::Precondition("finished episode without a result".into()))?;
                    out.matches.push(MatchRecord {
                        opponent: self.plan.entries[s.opponent].tag,
                        result,
                        level: s.level,
                        steps: s.episode_steps,
                    });
                    s.live = false;
                    if s.pending.len() == self.cfg.chunk_len {
                        let steps = core::mem::take(&mut s.pending);
                        done_steps += steps.len();
                        out.chunks.push(VersionedChunk {
                            chunk: Chunk {
                                steps,
                                bootstrap_value: 0.0,
                            },
                            version: s.pending_version,
                        });
                    }
                }
            }
        }
        out.env_steps = self.env_steps - start_steps;
        Ok(out)
    }
}

/// One episode to be played by [`run_episodes`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSpec {
    /// Index into the team-1 controller list.
    pub opponent: usize,
    pub first_mover: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    /// From team 0's side.
    pub result: GameResult,
    pub steps: usize,
}

/// Plays every episode with `team0` against `team1[spec.opponent]`, at most
/// `batch` at a time, and returns outcomes in input order.
///
/// Stochastic choices draw from one stream seeded by `seed`, so the run is
/// reproducible for a fixed episode list and batch size.
pub fn run_episodes(
    env: &EnvConfig,
    level: Option<u32>,
    team0: &Controller,
    team1: &[Controller],
    episodes: &[EpisodeSpec],
    batch: usize,
    seed: u64,
) -> Result<Vec<EpisodeOutcome>> {
    let mut proto = env.build()?;
    if let Some(l) = level {
        proto.set_level(l)?;
    }
    if episodes.iter().any(|e| e.opponent >= team1.len() || e.first_mover > 1) {
        return Err(Error::Precondition("episode refers to a missing opponent or side".into()));
    }
    let k = proto.spec().agents_per_team;
    let a = proto.spec().num_actions;
    let mut rng = rng_from_seed(derive_seed(seed, 0xE7A1));
    let mut results = Vec::with_capacity(episodes.len());
    // Team-0 controller followed by the opponents, for grouping.
    let mut ctrls = Vec::with_capacity(team1.len() + 1);
    ctrls.push(team0.clone());
    ctrls.extend(team1.iter().cloned());
    for block in episodes.chunks(batch.max(1)) {
        let m = block.len();
        let mut envs = Vec::with_capacity(m);
        let mut views = Vec::with_capacity(m);
        for e in block {
            let mut env = proto.clone();
            env.set_first_mover(e.first_mover);
            let out = env.reset(e.seed);
            views.push(out.teams);
            envs.push(env);
        }
        let mut states = vec![
            vec![vec![RecurrentState::zeros(team0.hidden_width()); k]; m],
            block
                .iter()
                .map(|e| vec![RecurrentState::zeros(team1[e.opponent].hidden_width()); k])
                .collect::<Vec<_>>(),
        ];
        let mut live = vec![true; m];
        let mut steps = vec![0usize; m];
        let mut outcome: Vec<Option<GameResult>> = vec![None; m];
        while live.iter().any(|&l| l) {
            let mut actions = [vec![Vec::new(); m], vec![Vec::new(); m]];
            for team in 0..2 {
                let mut deciding = Vec::new();
                for i in (0..m).filter(|&i| live[i]) {
                    match views[i][team].forced_actions(a) {
                        Some(f) => actions[team][i] = f,
                        None => deciding.push(i),
                    }
                }
                let ctrl_of = |i: usize| if team == 0 { 0 } else { block[i].opponent + 1 };
                for group in group_by_controller(&deciding, ctrl_of, &ctrls) {
                    let ctrl = &ctrls[ctrl_of(group[0])];
                    let genvs: Vec<&GameEnv> = group.iter().map(|&i| &envs[i]).collect();
                    let gviews: Vec<&TeamView> = group.iter().map(|&i| &views[i][team]).collect();
                    let gstates: Vec<&[RecurrentState]> = group.iter().map(|&i| &states[team][i][..]).collect();
                    let acts = act_group(ctrl, team, &genvs, &gviews, &gstates, &mut rng)?;
                    for (&i, act) in group.iter().zip(acts) {
                        if !act.states.is_empty() {
                            states[team][i] = act.states;
                        }
                        actions[team][i] = act.actions;
                    }
                }
            }
            for i in 0..m {
                if !live[i] {
                    continue;
                }
                let out = envs[i].step(&actions[0][i], &actions[1][i])?;
                steps[i] += 1;
                if out.done {
                    live[i] = false;
                    outcome[i] = out.result;
                }
                views[i] = out.teams;
            }
        }
        for i in 0..m {
            let result = outcome[i].ok_or_else(|| Error::Precondition(format!("episode {i} ended without a result")))?;
            results.push(EpisodeOutcome {
                result,
                steps: steps[i],
            });
        }
    }
    Ok(results)
}

/// Combines a side-paired pair of episode results (each from the same
/// player's side) into one game result: more than one point is a win,
/// exactly one a draw.
pub fn pair_result(first: GameResult, second: GameResult) -> GameResult {
    let total = first.score(0.5) + second.score(0.5);
    if total > 1.0 {
        GameResult::Win
    } else if total < 1.0 {
        GameResult::Loss
    } else {
        GameResult::Draw
    }
}
