//! Tournament, diversity and ablation reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spf_core::arena::{pool_diversity, tournament, DiversityReport, PayoffMatrix, ProbeSet, TrueSkillParams};
use spf_core::env::EnvConfig;
use spf_core::nn::PolicyNet;
use spf_core::rollout::{ActMode, Controller};
use spf_core::selfplay::Strategy;
use spf_core::train::RunConfig;

use crate::error::{Error, Result};
use crate::orchestrator::{run_training, RunOptions, RunSummary};
use crate::persist::{pool_load, write_atomic, write_json, StoredPool};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub player: String,
    pub mu: f64,
    pub sigma: f64,
    pub games: u64,
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffJson {
    pub players: Vec<String>,
    /// `p_win[i][j]`: fraction of games i won against j.
    pub p_win: Vec<Vec<f64>>,
    pub draw_rate: Vec<Vec<f64>>,
    pub raw: PayoffMatrix,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

/// Greedy controllers for every snapshot of a stored pool.
pub fn pool_players(stored: &StoredPool) -> Result<(Vec<String>, Vec<Controller>)> {
    let names = stored.pool.snapshots().iter().map(|s| s.id.to_string()).collect();
    let players = stored
        .policies()?
        .into_iter()
        .map(|p| Controller::policy(p, ActMode::Greedy))
        .collect();
    Ok((names, players))
}

/// Round robin among named players; writes `ratings.csv` and `payoff.json`
/// into `out`.
pub fn run_tournament(
    env: &EnvConfig,
    names: Vec<String>,
    players: &[Controller],
    games: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<RatingRow>> {
    let level = level_for(env)?;
    let r = tournament(env, level, players, games, &TrueSkillParams::default(), seed)?;
    let rows: Vec<RatingRow> = names
        .iter()
        .zip(r.ratings.iter().zip(&r.records))
        .map(|(n, (rt, rec))| RatingRow {
            player: n.clone(),
            mu: rt.mu,
            sigma: rt.sigma,
            games: rec.games,
            wins: rec.wins,
            draws: rec.draws,
            losses: rec.losses,
        })
        .collect();
    write_csv(&out.join("ratings.csv"), &rows)?;
    let n = r.payoff.n;
    let payoff = PayoffJson {
        players: names,
        p_win: r.payoff.matrix(),
        draw_rate: (0..n).map(|i| (0..n).map(|j| r.payoff.draw_rate(i, j)).collect()).collect(),
        raw: r.payoff,
    };
    write_json(&out.join("payoff.json"), &payoff)?;
    Ok(rows)
}

/// Hardest level of a parameterised environment, `None` for board games.
fn level_for(env: &EnvConfig) -> Result<Option<u32>> {
    let max = env.build()?.max_level();
    Ok((max > 0).then_some(max))
}

pub fn pool_tournament(pool_dir: &Path, games: usize, seed: u64, out: &Path) -> Result<Vec<RatingRow>> {
    let stored = pool_load(pool_dir)?;
    if stored.pool.len() < 2 {
        return Err(Error::Usage(format!(
            "{} holds {} snapshot(s); a tournament needs two",
            pool_dir.display(),
            stored.pool.len()
        )));
    }
    let (names, players) = pool_players(&stored)?;
    run_tournament(&stored.env, names, &players, games, seed, out)
}

pub fn pool_diversity_report(pool_dir: &Path, bandwidth: Option<f64>, out: Option<&Path>) -> Result<DiversityReport> {
    let stored = pool_load(pool_dir)?;
    let probes = ProbeSet::standard(&stored.env)?;
    let report = pool_diversity(&stored.policies()?, &probes, bandwidth)?;
    if let Some(out) = out {
        write_json(&out.join("diversity.json"), &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub seed: u64,
    pub mu: f64,
    pub sigma: f64,
    pub diversity_index: f64,
    pub pool_size: usize,
    pub env_steps: u64,
    pub updates: u64,
    pub run_dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyMean {
    pub strategy: String,
    pub runs: usize,
    pub mean_mu: f64,
    /// Standard error of the mean over seeds.
    pub se_mu: f64,
    pub mean_diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub means: Vec<StrategyMean>,
}

pub fn strategy_means(rows: &[AblationRow]) -> Vec<StrategyMean> {
    let mut out = Vec::new();
    for s in Strategy::ALL {
        let xs: Vec<&AblationRow> = rows.iter().filter(|r| r.strategy == s.name()).collect();
        if xs.is_empty() {
            continue;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().map(|r| r.mu).sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|r| (r.mu - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push(StrategyMean {
            strategy: s.name().into(),
            runs: xs.len(),
            mean_mu: mean,
            se_mu: (var / n).sqrt(),
            mean_diversity: xs.iter().map(|r| r.diversity_index).sum::<f64>() / n,
        });
    }
    out
}

/// One training run per strategy and seed, then a joint round robin of
/// all final policies and the diversity of every run's pool.
pub fn ablate(
    base: &RunConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    games: usize,
    out: &Path,
    log_every: u64,
) -> Result<AblationReport> {
    let mut runs: Vec<(Strategy, u64, PathBuf, RunSummary)> = Vec::new();
    for &strategy in strategies {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.selfplay.strategy = strategy;
            cfg.seed = seed;
            let dir = out.join(strategy.name()).join(format!("seed{seed}"));
            cfg.out_dir = dir.display().to_string();
            if log_every > 0 {
                eprintln!("ablation run {} seed {seed}", strategy.name());
            }
            let opts = RunOptions {
                log_every,
                ..RunOptions::default()
            };
            let summary = run_training(cfg, &opts)?;
            runs.push((strategy, seed, dir, summary));
        }
    }
    let mut names = Vec::new();
    let mut players = Vec::new();
    let mut diversity = Vec::new();
    let probes = ProbeSet::standard(&base.env)?;
    for (strategy, seed, dir, _) in &runs {
        let stored = pool_load(&dir.join("pool"))?;
        let policy = final_policy(dir)?;
        names.push(format!("{}/seed{seed}", strategy.name()));
        players.push(Controller::policy(policy, ActMode::Greedy));
        let d = if stored.pool.len() >= 2 {
            pool_diversity(&stored.policies()?, &probes, None)?.index
        } else {
            0.0
        };
        diversity.push(d);
    }
    let ratings = run_tournament(&base.env, names, &players, games, derive_tournament_seed(seeds), out)?;
    let rows: Vec<AblationRow> = runs
        .iter()
        .zip(ratings.iter().zip(&diversity))
        .map(|((s, seed, dir, sum), (r, &d))| AblationRow {
            strategy: s.name().into(),
            seed: *seed,
            mu: r.mu,
            sigma: r.sigma,
            diversity_index: d,
            pool_size: sum.pool_size,
            env_steps: sum.env_steps,
            updates: sum.updates,
            run_dir: dir.strip_prefix(out).unwrap_or(dir).display().to_string(),
        })
        .collect();
    write_csv(&out.join("summary.csv"), &rows)?;
    let report = AblationReport {
        means: strategy_means(&rows),
        rows,
    };
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

/// Final policy of a finished run directory.
pub fn final_policy(run_dir: &Path) -> Result<PolicyNet> {
    let ck = crate::checkpoint::latest_checkpoint(run_dir)
        .ok_or_else(|| Error::Usage(format!("{} has no checkpoint", run_dir.display())))?;
    let (t, _) = crate::checkpoint::load_checkpoint(&ck, None)?;
    Ok(t.learner.policy)
}

fn derive_tournament_seed(seeds: &[u64]) -> u64 {
    seeds.iter().fold(0x70_0A, |acc, &s| spf_core::derive_seed(acc, s))
}
