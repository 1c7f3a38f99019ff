use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::trueskill::{update, Outcome, Rating, TrueSkillParams};
use crate::env::{Env, EnvConfig, GameResult};
use crate::rollout::{pair_result, run_episodes, Controller, EpisodeSpec};
use crate::{derive_seed, rng_from_seed, Error, Result};

/// Plays `games` games of A against B and returns the results from A's
/// side. In turn-based games one game is a side-paired pair of episodes.
pub fn play_games(
    env: &EnvConfig,
    level: Option<u32>,
    a: &Controller,
    b: &Controller,
    games: usize,
    seed: u64,
) -> Result<Vec<GameResult>> {
    let paired = env.build()?.spec().turn_based;
    let per_game = if paired { 2 } else { 1 };
    let specs: Vec<EpisodeSpec> = (0..games * per_game)
        .map(|e| EpisodeSpec {
            opponent: 0,
            first_mover: if paired { e % 2 } else { (e / per_game) % 2 },
            seed: derive_seed(seed, (e / per_game) as u64),
        })
        .collect();
    let out = run_episodes(env, level, a, core::slice::from_ref(b), &specs, specs.len().clamp(1, 256), seed)?;
    Ok(if paired {
        out.chunks(2).map(|p| pair_result(p[0].result, p[1].result)).collect()
    } else {
        out.iter().map(|o| o.result).collect()
    })
}

/// One game between A and B.
pub fn play_match(env: &EnvConfig, level: Option<u32>, a: &Controller, b: &Controller, seed: u64) -> Result<Outcome> {
    Ok(match play_games(env, level, a, b, 1, seed)?[0] {
        GameResult::Win => Outcome::AWins,
        GameResult::Loss => Outcome::BWins,
        GameResult::Draw => Outcome::Draw,
    })
}

/// Pairwise outcome counts; `wins[i][j]` counts games i won against j.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PayoffMatrix {
    pub n: usize,
    pub wins: Vec<Vec<u64>>,
    pub draws: Vec<Vec<u64>>,
}

impl PayoffMatrix {
    pub fn new(n: usize) -> Self {
        PayoffMatrix {
            n,
            wins: vec![vec![0; n]; n],
            draws: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, i: usize, j: usize, result: GameResult) {
        match result {
            GameResult::Win => self.wins[i][j] += 1,
            GameResult::Loss => self.wins[j][i] += 1,
            GameResult::Draw => {
                self.draws[i][j] += 1;
                self.draws[j][i] += 1;
            }
        }
    }

    pub fn games(&self, i: usize, j: usize) -> u64 {
        if i == j {
            0
        } else {
            self.wins[i][j] + self.wins[j][i] + self.draws[i][j]
        }
    }

    /// Probability that i beats j; 0.5 on the diagonal and for unplayed
    /// pairs.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        let g = self.games(i, j);
        if i == j || g == 0 {
            0.5
        } else {
            self.wins[i][j] as f64 / g as f64
        }
    }

    pub fn draw_rate(&self, i: usize, j: usize) -> f64 {
        let g = self.games(i, j);
        if i == j || g == 0 {
            0.0
        } else {
            self.draws[i][j] as f64 / g as f64
        }
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.p(i, j)).collect()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Record {
    pub games: u64,
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TournamentReport {
    pub ratings: Vec<Rating>,
    pub records: Vec<Record>,
    pub payoff: PayoffMatrix,
}

/// Round robin: every pair plays `games_per_pair` games, then all games are
/// shuffled and fed to TrueSkill one at a time.
pub fn tournament(
    env: &EnvConfig,
    level: Option<u32>,
    players: &[Controller],
    games_per_pair: usize,
    params: &TrueSkillParams,
    seed: u64,
) -> Result<TournamentReport> {
    params.validate()?;
    let n = players.len();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    let mut games = Vec::new();
    let mut pair = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let results = play_games(env, level, &players[i], &players[j], games_per_pair, derive_seed(seed, pair))?;
            games.extend(results.into_iter().map(|r| (i, j, r)));
            pair += 1;
        }
    }
    games.shuffle(&mut rng_from_seed(derive_seed(seed, 0x0DE5)));
    let mut ratings = vec![params.initial(); n];
    let mut records = vec![Record::default(); n];
    let mut payoff = PayoffMatrix::new(n);
    for &(i, j, r) in &games {
        let o = match r {
            GameResult::Win => Outcome::AWins,
            GameResult::Loss => Outcome::BWins,
            GameResult::Draw => Outcome::Draw,
        };
        let (a, b) = update(ratings[i], ratings[j], o, params)?;
        ratings[i] = a;
        ratings[j] = b;
        payoff.record(i, j, r);
        for (k, res) in [(i, r), (j, r.flip())] {
            let rec = &mut records[k];
            rec.games += 1;
            match res {
                GameResult::Win => rec.wins += 1,
                GameResult::Draw => rec.draws += 1,
                GameResult::Loss => rec.losses += 1,
            }
        }
    }
    if ratings.iter().any(|r| !r.mu.is_finite() || !(r.sigma > 0.0)) {
        return Err(Error::NonFinite(format!("tournament ratings {ratings:?}")));
    }
    Ok(TournamentReport {
        ratings,
        records,
        payoff,
    })
}
