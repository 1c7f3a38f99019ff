//! Run configuration files and presets.

use std::fs;
use std::path::Path;

use spf_core::env::{EnvConfig, GoalRushConfig};
use spf_core::jrpo::{ClipConfig, TrainConfig};
use spf_core::rollout::ActorConfig;
use spf_core::selfplay::SelfPlayConfig;
use spf_core::train::{NetworkConfig, ProbeConfig, ProbeOpponent, RunConfig};

use crate::error::{Error, Result};

/// Environment variable that replaces `out_dir` of any loaded config.
pub const OUT_DIR_VAR: &str = "SPF_OUT_DIR";

pub const PRESETS: [&str; 3] = ["tic_tac_toe", "connect_four", "goal_rush"];

/// Tuned starting points for each environment.
pub fn preset(name: &str) -> Option<RunConfig> {
    match name {
        "tic_tac_toe" => Some(tic_tac_toe()),
        "connect_four" => Some(connect_four()),
        "goal_rush" => Some(goal_rush()),
        _ => None,
    }
}

fn tic_tac_toe() -> RunConfig {
    RunConfig {
        env: EnvConfig::TicTacToe,
        network: NetworkConfig {
            encoder_width: 64,
            hidden_width: 64,
            id_embed_width: 4,
        },
        train: TrainConfig {
            lr: 1e-3,
            value_lr: 1e-3,
            ..TrainConfig::default()
        },
        clip: ClipConfig::default(),
        actor: ActorConfig {
            num_envs: 16,
            chunk_len: 50,
            stagger_k_max: 4,
        },
        buffer_steps: 4_000,
        budget_env_steps: 3_000_000,
        out_dir: "runs/tic_tac_toe".into(),
        ..RunConfig::default()
    }
}

fn connect_four() -> RunConfig {
    RunConfig {
        env: EnvConfig::ConnectFour,
        network: NetworkConfig {
            encoder_width: 64,
            hidden_width: 64,
            id_embed_width: 4,
        },
        train: TrainConfig {
            lr: 5e-4,
            value_lr: 5e-4,
            ..TrainConfig::default()
        },
        actor: ActorConfig {
            num_envs: 16,
            chunk_len: 50,
            stagger_k_max: 6,
        },
        buffer_steps: 4_000,
        budget_env_steps: 5_000_000,
        out_dir: "runs/connect_four".into(),
        ..RunConfig::default()
    }
}

fn goal_rush() -> RunConfig {
    RunConfig {
        env: EnvConfig::GoalRush(GoalRushConfig::default()),
        network: NetworkConfig {
            encoder_width: 16,
            hidden_width: 32,
            id_embed_width: 8,
        },
        train: TrainConfig {
            lr: 5e-4,
            value_lr: 5e-4,
            ..TrainConfig::default()
        },
        actor: ActorConfig {
            num_envs: 16,
            chunk_len: 50,
            stagger_k_max: 8,
        },
        selfplay: SelfPlayConfig::default(),
        buffer_steps: 8_000,
        budget_env_steps: 5_000_000,
        probe: Some(ProbeConfig {
            opponent: ProbeOpponent::Scripted,
            every: 5,
            ..ProbeConfig::default()
        }),
        out_dir: "runs/goal_rush".into(),
        ..RunConfig::default()
    }
}

/// Parses and validates a config. Missing fields take their defaults;
/// unknown fields are rejected with their path.
pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Json {
        path: origin.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file, or a preset when `source` names one, and applies
/// the `SPF_OUT_DIR` override.
pub fn load_config(source: &str) -> Result<RunConfig> {
    let mut cfg = match preset(source) {
        Some(c) if !Path::new(source).exists() => c,
        _ => {
            let path = Path::new(source);
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text, path)?
        }
    };
    apply_env_overrides(&mut cfg);
    Ok(cfg)
}

pub fn apply_env_overrides(cfg: &mut RunConfig) {
    if let Some(dir) = std::env::var_os(OUT_DIR_VAR) {
        if !dir.is_empty() {
            cfg.out_dir = dir.to_string_lossy().into_owned();
        }
    }
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("RunConfig serializes")
}

/// Writes `effective_config.json` into `dir`.
pub fn write_effective(cfg: &RunConfig, dir: &Path) -> Result<()> {
    crate::persist::write_atomic(&dir.join("effective_config.json"), to_json(cfg).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let back = parse_config(&to_json(&cfg), Path::new(name)).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = parse_config(r#"{"env": {"kind": "connect_four"}, "seed": 7}"#, Path::new("x")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.env, EnvConfig::ConnectFour);
        assert_eq!(cfg.buffer_steps, RunConfig::default().buffer_steps);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_config(r#"{"train": {"lr": "fast"}}"#, Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("train.lr"), "{e}");
        let e = parse_config(r#"{"selfplay": {"strategy": "best"}}"#, Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("selfplay.strategy"), "{e}");
        let e = parse_config(r#"{"actor": {"colour": 1}}"#, Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("actor"), "{e}");
        let e = parse_config(r#"{"num_actors": 0}"#, Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("num_actors"), "{e}");
    }
}
