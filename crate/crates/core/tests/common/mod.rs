//! Independent oracles shared by the core tests and the acceptance target.
#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use spf_core::arena::minimax::TicTacToeOracle;
use spf_core::arena::trueskill::{update, Outcome, TrueSkillParams};
use spf_core::arena::tournament;
use spf_core::env::{random_legal_actions, Env, EnvConfig, GameEnv, GameResult, GoalRushConfig};
use spf_core::jrpo::{
    compute_gae, joint_ratio, policy_loss_graph, replay_log_probs, toy_batch, ClipConfig, GaeConfig, RatioMode, SeqBatch,
};
use spf_core::nn::{Graph, NetworkSpec, PolicyNet};
use spf_core::rollout::Controller;
use spf_core::selfplay::{OpponentPool, Phase, SelfPlay, SelfPlayConfig, SnapshotMeta, SnapshotStage, Strategy};
use spf_core::{derive_seed, rng_from_seed};

const TTT_LINES: [[usize; 3]; 8] = [
    [0, 1, 2],
    [3, 4, 5],
    [6, 7, 8],
    [0, 3, 6],
    [1, 4, 7],
    [2, 5, 8],
    [0, 4, 8],
    [2, 4, 6],
];

/// Terminal status of a Tic-Tac-Toe board (marks 1 and 2) from player 1's
/// side, by direct line inspection.
pub fn ttt_status(cells: &[u8; 9]) -> Option<GameResult> {
    for l in TTT_LINES {
        let c = cells[l[0]];
        if c != 0 && c == cells[l[1]] && c == cells[l[2]] {
            return Some(if c == 1 { GameResult::Win } else { GameResult::Loss });
        }
    }
    cells.iter().all(|&c| c != 0).then_some(GameResult::Draw)
}

#[derive(Debug, Default)]
pub struct TttEnumeration {
    /// Distinct reachable positions, the empty board included.
    pub positions: usize,
    pub nodes: usize,
    pub mismatches: Vec<String>,
}

/// Walks the whole game tree with team 0 moving first, stepping the
/// environment and the oracle side by side.
pub fn enumerate_tic_tac_toe() -> TttEnumeration {
    let mut env = EnvConfig::TicTacToe.build().unwrap();
    env.set_first_mover(0);
    let out = env.reset(0);
    let mut seen = HashSet::new();
    let mut report = TttEnumeration::default();
    let cells = [0u8; 9];
    check_node(&env, &cells, out.done, out.result, 0, &mut seen, &mut report);
    walk(&env, cells, 0, &mut seen, &mut report);
    report.positions = seen.len();
    report
}

fn check_node(
    env: &GameEnv,
    cells: &[u8; 9],
    done: bool,
    result: Option<GameResult>,
    mover: usize,
    seen: &mut HashSet<[u8; 9]>,
    report: &mut TttEnumeration,
) {
    report.nodes += 1;
    seen.insert(*cells);
    let want = ttt_status(cells);
    if done != want.is_some() || result != want {
        report.mismatches.push(format!("{cells:?}: env done={done} result={result:?}, oracle {want:?}"));
    }
    let board = env.as_board().unwrap();
    if board.cells() != cells {
        report.mismatches.push(format!("{cells:?}: env board {:?}", board.cells()));
    }
    if want.is_none() {
        let legal: Vec<usize> = (0..9).filter(|&i| cells[i] == 0).collect();
        let env_legal: Vec<usize> = (0..9).filter(|&a| board.landing_cell(a).is_some()).collect();
        if legal != env_legal || board.to_move() != mover {
            report.mismatches.push(format!("{cells:?}: legal moves {env_legal:?} vs {legal:?}"));
        }
    }
}

fn walk(env: &GameEnv, cells: [u8; 9], mover: usize, seen: &mut HashSet<[u8; 9]>, report: &mut TttEnumeration) {
    if ttt_status(&cells).is_some() {
        return;
    }
    for i in 0..9 {
        if cells[i] != 0 {
            continue;
        }
        let mut next = cells;
        next[i] = mover as u8 + 1;
        let mut e = env.clone();
        let (a0, a1) = if mover == 0 { (i, 9) } else { (9, i) };
        match e.step(&[a0], &[a1]) {
            Ok(out) => {
                check_node(&e, &next, out.done, out.result, 1 - mover, seen, report);
                if !out.done {
                    walk(&e, next, 1 - mover, seen, report);
                }
            }
            Err(err) => report.mismatches.push(format!("{cells:?} move {i}: {err}")),
        }
    }
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub episodes: usize,
    pub steps: usize,
    pub violations: Vec<String>,
}

/// Uniform-random legal play; every step must hand out mirrored rewards.
pub fn fuzz_zero_sum(cfg: &EnvConfig, episodes: usize, seed: u64) -> FuzzReport {
    let mut env = cfg.build().unwrap();
    let max_level = env.max_level();
    let a = env.spec().num_actions;
    let mut rng = rng_from_seed(seed);
    let mut r = FuzzReport::default();
    for ep in 0..episodes {
        if max_level > 0 {
            env.set_level(rng.random_range(0..=max_level)).unwrap();
        }
        env.set_first_mover(ep % 2);
        let mut out = env.reset(derive_seed(seed, ep as u64));
        let mut total = [0.0f64; 2];
        while !out.done {
            let a0 = random_legal_actions(&out.teams[0], a, &mut rng);
            let a1 = random_legal_actions(&out.teams[1], a, &mut rng);
            out = match env.step(&a0, &a1) {
                Ok(o) => o,
                Err(e) => {
                    r.violations.push(format!("episode {ep}: {e}"));
                    break;
                }
            };
            r.steps += 1;
            if out.rewards[0] != -out.rewards[1] || out.base_rewards[0] != -out.base_rewards[1] {
                r.violations.push(format!("episode {ep} step {}: rewards {:?} base {:?}", out.step, out.rewards, out.base_rewards));
            }
            total[0] += out.rewards[0];
            total[1] += out.rewards[1];
        }
        if (total[0] + total[1]).abs() > 1e-9 {
            r.violations.push(format!("episode {ep}: returns {total:?}"));
        }
        r.episodes += 1;
    }
    r
}

pub fn all_envs() -> Vec<EnvConfig> {
    vec![
        EnvConfig::TicTacToe,
        EnvConfig::ConnectFour,
        EnvConfig::GoalRush(GoalRushConfig::default()),
        EnvConfig::GoalRush(GoalRushConfig {
            agents_per_team: 1,
            ..GoalRushConfig::default()
        }),
    ]
}

/// Brute-force discounted return from `t` to the episode end, or to the end
/// of the sequence plus the discounted bootstrap.
pub fn discounted_return(r: &[f64], d: &[bool], bootstrap: f64, gamma: f64, t: usize) -> f64 {
    let mut g = 0.0;
    let mut disc = 1.0;
    for k in t..r.len() {
        g += disc * r[k];
        disc *= gamma;
        if d[k] {
            return g;
        }
    }
    g + disc * bootstrap
}

pub fn random_trajectory(rng: &mut impl Rng, len: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
    let r = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = (0..len).map(|_| rng.random_bool(0.2)).collect();
    (r, v, d, rng.random_range(-1.0..1.0))
}

/// One-step TD error, in the same operation order as a direct reading of
/// the definition.
pub fn td_error(r: &[f64], v: &[f64], d: &[bool], bootstrap: f64, gamma: f64, t: usize) -> f64 {
    let next = if t + 1 < r.len() { v[t + 1] } else { bootstrap };
    if d[t] {
        r[t] - v[t]
    } else {
        r[t] + gamma * next - v[t]
    }
}

/// Empirical frequencies of `draw` over pool indices `0..n`.
pub fn frequencies(n: usize, draws: usize, mut draw: impl FnMut() -> usize) -> Vec<f64> {
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        counts[draw()] += 1;
    }
    counts.iter().map(|&c| c as f64 / draws as f64).collect()
}

/// A self-play state in the given stage-2 phase whose candidate holds the
/// recorded results against each snapshot (`(wins, draws, losses)`).
pub fn selfplay_with_record(strategy: Strategy, phase: Phase, records: &[(u64, u64, u64)]) -> SelfPlay {
    let meta = SnapshotMeta {
        stage: SnapshotStage::SelfPlay,
        level: 0,
        env_steps: 0,
        update: 0,
        timestamp: 0,
    };
    let mut pool = OpponentPool::new();
    for _ in records {
        pool.push(vec![0], meta);
    }
    let candidate = pool.next_id();
    for (id, &(w, d, l)) in records.iter().enumerate() {
        for (n, r) in [(w, GameResult::Win), (d, GameResult::Draw), (l, GameResult::Loss)] {
            for _ in 0..n {
                pool.record(candidate, id as u64, r);
            }
        }
    }
    let cfg = SelfPlayConfig {
        strategy,
        ..SelfPlayConfig::default()
    };
    SelfPlay::from_parts(cfg, 0, pool, phase, Vec::new()).unwrap()
}

/// Generalize frequencies drawn through the self-play state machine for
/// p̂ = (0, 0.5), and separately the frequency of a p̂ = 1 opponent.
pub fn generalize_route(draws: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = rng_from_seed(seed);
    let sp = selfplay_with_record(Strategy::ChallengeGeneralize, Phase::Generalize, &[(0, 0, 10), (5, 0, 5)]);
    let f = frequencies(2, draws, || sp.sample_opponent(&mut rng).unwrap().unwrap());
    let sp = selfplay_with_record(Strategy::ChallengeGeneralize, Phase::Generalize, &[(0, 0, 10), (10, 0, 0), (3, 2, 5)]);
    let beaten = frequencies(3, draws, || sp.sample_opponent(&mut rng).unwrap().unwrap())[1];
    (f, beaten)
}

/// Share of Challenge draws landing on the newest snapshot of a
/// ten-snapshot pool, through the self-play state machine.
pub fn challenge_route(draws: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let sp = selfplay_with_record(Strategy::ChallengeGeneralize, Phase::Challenge, &[(0, 0, 0); 10]);
    frequencies(10, draws, || sp.sample_opponent(&mut rng).unwrap().unwrap())[9]
}

/// Sequential τ = 0 TrueSkill updates among a few players with random
/// outcomes; returns the first update after which a participant's σ did not
/// strictly shrink.
pub fn sigma_monotone_violation(updates: usize, seed: u64) -> Option<String> {
    let p = TrueSkillParams {
        tau: 0.0,
        ..TrueSkillParams::default()
    };
    let mut rng = rng_from_seed(seed);
    let mut ratings = vec![p.initial(); 8];
    for k in 0..updates {
        let i = rng.random_range(0..8);
        let j = (i + rng.random_range(1..8)) % 8;
        let o = [Outcome::AWins, Outcome::BWins, Outcome::Draw][rng.random_range(0..3)];
        let (a, b) = update(ratings[i], ratings[j], o, &p).unwrap();
        if !(a.sigma < ratings[i].sigma && b.sigma < ratings[j].sigma) {
            return Some(format!("update {k}: {:?} {:?} {o:?} -> {a:?} {b:?}", ratings[i], ratings[j]));
        }
        ratings[i] = a;
        ratings[j] = b;
    }
    None
}

/// Minimax, a half-random copy of it and uniform random play: strictly
/// ordered by construction. Counts the seeded tournaments whose μ ordering
/// matches.
pub fn transitive_recoveries(tournaments: u64, games_per_pair: usize) -> u64 {
    let oracle = Controller::Minimax(Arc::new(TicTacToeOracle::new()));
    let players = [
        oracle.clone(),
        Controller::handicapped(oracle, 0.5).unwrap(),
        Controller::Random,
    ];
    (0..tournaments)
        .filter(|&seed| {
            let r = tournament(&EnvConfig::TicTacToe, None, &players, games_per_pair, &TrueSkillParams::default(), seed)
                .unwrap();
            r.ratings[0].mu > r.ratings[1].mu && r.ratings[1].mu > r.ratings[2].mu
        })
        .count() as u64
}

pub fn jrpo_spec(agents: usize) -> NetworkSpec {
    NetworkSpec {
        obs_parts: vec![4, 3],
        encoder_width: 6,
        hidden_width: 5,
        num_actions: 4,
        num_agents: agents,
        id_embed_width: 2,
        global_state_width: 6,
    }
}

/// Policy loss of a batch and its parameter gradients.
pub fn policy_loss(net: &PolicyNet, batch: &SeqBatch, clip: &ClipConfig) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new(net.params());
    let denom = (batch.windows * batch.len) as f64;
    let out = policy_loss_graph(&mut g, net, batch, clip, denom).unwrap();
    let loss = g.scalar(out.loss);
    (loss, g.backward(out.loss).unwrap().0)
}

#[derive(Debug, Default)]
pub struct GaeCheck {
    /// Largest deviation of λ = 1 advantages and returns from the brute-force sums.
    pub max_error: f64,
    /// Steps where λ = 0 advantages differ in any bit from the TD error.
    pub td_mismatches: usize,
    pub steps: usize,
}

pub fn gae_check(trajectories: usize, seed: u64) -> GaeCheck {
    let mut rng = rng_from_seed(seed);
    let mut c = GaeCheck::default();
    for _ in 0..trajectories {
        let len = rng.random_range(1..80);
        let gamma = rng.random_range(0.8..1.0);
        let (r, v, d, b) = random_trajectory(&mut rng, len);
        let (adv, ret) = compute_gae(&r, &v, &d, b, &GaeConfig { gamma, lambda: 1.0 });
        let (td, _) = compute_gae(&r, &v, &d, b, &GaeConfig { gamma, lambda: 0.0 });
        for t in 0..len {
            let want = discounted_return(&r, &d, b, gamma, t);
            c.max_error = c.max_error.max((adv[t] - (want - v[t])).abs()).max((ret[t] - want).abs());
            if td[t].to_bits() != td_error(&r, &v, &d, b, gamma, t).to_bits() {
                c.td_mismatches += 1;
            }
        }
        c.steps += len;
    }
    c
}

/// Single-agent batches whose joint and per-agent losses or gradients
/// differ in any bit.
pub fn mode_mismatches(batches: usize, seed: u64) -> usize {
    let mut rng = rng_from_seed(seed);
    let s = jrpo_spec(1);
    let joint = ClipConfig::default();
    let per = ClipConfig {
        ratio_mode: RatioMode::PerAgent,
        ..joint
    };
    (0..batches)
        .filter(|_| {
            let net = PolicyNet::new(&s, &mut rng).unwrap();
            let batch = toy_batch(&s, 6, &mut rng);
            let (lj, gj) = policy_loss(&net, &batch, &joint);
            let (lp, gp) = policy_loss(&net, &batch, &per);
            lj.to_bits() != lp.to_bits() || gj != gp
        })
        .count()
}

/// Largest log-space gap between the joint ratio and the product of
/// per-agent ratios, over multi-agent batches.
pub fn joint_ratio_log_error(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for agents in [2, 3, 5] {
        let s = jrpo_spec(agents);
        let net = PolicyNet::new(&s, &mut rng).unwrap();
        let batch = toy_batch(&s, 6, &mut rng);
        let new = replay_log_probs(&net, &batch).unwrap();
        for t in 0..batch.len {
            for w in 0..batch.windows {
                let rows = w * agents..(w + 1) * agents;
                let r = joint_ratio(&new[t][rows.clone()], &batch.old_log_probs[t][rows.clone()]);
                let product: f64 = rows.map(|i| (new[t][i] - batch.old_log_probs[t][i]).exp()).product();
                worst = worst.max((r.ln() - product.ln()).abs());
            }
        }
    }
    worst
}
