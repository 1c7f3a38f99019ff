use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use spf::checkpoint::latest_checkpoint;
use spf::config::{load_config, preset, to_json, PRESETS};
use spf::orchestrator::{run_training, RunOptions};
use spf::persist::pool_load;
use spf::report::{ablate, pool_diversity_report, pool_tournament};
use spf::{Error, Result};
use spf_core::arena::play_games;
use spf_core::env::GameResult;
use spf_core::nn::PolicyNet;
use spf_core::rollout::{ActMode, Controller};
use spf_core::selfplay::Strategy;

#[derive(Parser)]
#[command(name = "spf", version, about = "Multi-agent self-play training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config or a preset name.
    Train {
        config: String,
        /// Checkpoint directory to resume from, or `latest`.
        #[arg(long)]
        resume: Option<String>,
        #[arg(long)]
        max_updates: Option<u64>,
        #[arg(long, default_value_t = 10)]
        log_every: u64,
    },
    /// One run per strategy and seed, then a joint tournament and diversity.
    Ablate {
        config: String,
        /// Strategies to compare; all four when omitted.
        #[arg(long, value_delimiter = ',')]
        strategy: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Side-paired games per pair in the final tournament.
        #[arg(long, default_value_t = 100)]
        games: usize,
        /// Defaults to `<out_dir>/ablation`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        log_every: u64,
    },
    /// Round-robin TrueSkill tournament over a pool directory.
    Tournament {
        pool_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        games: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the pool directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Behavioural diversity index of a pool directory.
    Diversity {
        pool_dir: PathBuf,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Games between two snapshot files (each inside a pool directory).
    Play {
        snap_a: PathBuf,
        snap_b: PathBuf,
        /// Environment preset; defaults to the pool's environment.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 100)]
        games: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stochastic: bool,
    },
    /// Finite-difference gradient checks of every network operation.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Prints a preset config as JSON.
    Config { preset: String },
}

fn load_snapshot(path: &Path) -> Result<(PolicyNet, spf_core::env::EnvConfig)> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stored = pool_load(dir)?;
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok((PolicyNet::from_blob(&bytes, &stored.spec)?, stored.env))
}

fn parse_strategies(names: &[String]) -> Result<Vec<Strategy>> {
    if names.is_empty() {
        return Ok(Strategy::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| Strategy::parse(n).map_err(|_| Error::Usage(format!("unknown strategy `{n}`"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            max_updates,
            log_every,
        } => {
            let cfg = load_config(&config)?;
            let resume = match resume.as_deref() {
                Some("latest") => Some(
                    latest_checkpoint(Path::new(&cfg.out_dir))
                        .ok_or_else(|| Error::Usage(format!("no checkpoint under {}", cfg.out_dir)))?,
                ),
                other => other.map(PathBuf::from),
            };
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))
                .map_err(|e| Error::Usage(format!("cannot install signal handler: {e}")))?;
            let opts = RunOptions {
                resume,
                max_updates,
                stop: Some(stop),
                log_every,
                ..RunOptions::default()
            };
            let s = run_training(cfg, &opts)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
        Command::Ablate {
            config,
            strategy,
            seeds,
            games,
            out,
            log_every,
        } => {
            let cfg = load_config(&config)?;
            let strategies = parse_strategies(&strategy)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let out = out.unwrap_or_else(|| Path::new(&cfg.out_dir).join("ablation"));
            let r = ablate(&cfg, &strategies, &seeds, games, &out, log_every)?;
            println!("strategy,runs,mean_mu,se_mu,mean_diversity");
            for m in &r.means {
                println!("{},{},{},{},{}", m.strategy, m.runs, m.mean_mu, m.se_mu, m.mean_diversity);
            }
            println!("wrote {}", out.join("summary.csv").display());
        }
        Command::Tournament {
            pool_dir,
            games,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| pool_dir.clone());
            let rows = pool_tournament(&pool_dir, games, seed, &out)?;
            println!("player,mu,sigma,games,wins,draws,losses");
            for r in rows {
                println!("{},{},{},{},{},{},{}", r.player, r.mu, r.sigma, r.games, r.wins, r.draws, r.losses);
            }
        }
        Command::Diversity {
            pool_dir,
            bandwidth,
            out,
        } => {
            let r = pool_diversity_report(&pool_dir, bandwidth, out.as_deref())?;
            let summary = serde_json::json!({
                "index": r.index,
                "log_det": r.log_det,
                "n": r.n,
                "bandwidth": r.bandwidth,
                "probe_set": r.probe_set,
            });
            println!("{summary}");
        }
        Command::Play {
            snap_a,
            snap_b,
            env,
            games,
            seed,
            stochastic,
        } => {
            let (a, env_a) = load_snapshot(&snap_a)?;
            let (b, _) = load_snapshot(&snap_b)?;
            let env = match env {
                Some(name) => preset(&name).ok_or_else(|| Error::Usage(format!("unknown env `{name}`")))?.env,
                None => env_a,
            };
            let mode = if stochastic { ActMode::Stochastic } else { ActMode::Greedy };
            let max = env.build()?.max_level();
            let results = play_games(
                &env,
                (max > 0).then_some(max),
                &Controller::policy(a, mode),
                &Controller::policy(b, mode),
                games,
                seed,
            )?;
            let count = |g| results.iter().filter(|r| **r == g).count();
            let summary = serde_json::json!({
                "games": results.len(),
                "a_wins": count(GameResult::Win),
                "draws": count(GameResult::Draw),
                "b_wins": count(GameResult::Loss),
            });
            println!("{summary}");
        }
        Command::Gradcheck { trials, seed } => {
            let reports = spf_core::gradcheck::run_suite(trials, seed)?;
            let mut ok = true;
            for r in &reports {
                println!(
                    "{:<28} trials {:>4}  redrawn {:>3}  max rel err {:.3e}  {}",
                    r.name,
                    r.trials,
                    r.redrawn,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                ok &= r.passed();
            }
            if !ok {
                return Err(Error::Usage("gradient check failed".into()));
            }
        }
        Command::Config { preset: name } => {
            let cfg = preset(&name)
                .ok_or_else(|| Error::Usage(format!("unknown preset `{name}`; one of {}", PRESETS.join(", "))))?;
            println!("{}", to_json(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
