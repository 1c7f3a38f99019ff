//! Checkpoint directories: parameters, optimizer moments, the pool and the
//! learner counters, with `manifest.json` written last. Everything is
//! referenced by relative path so a checkpoint can be copied elsewhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spf_core::jrpo::Learner;
use spf_core::nn::{AdamState, NetworkSpec, PolicyNet, ValueNet};
use spf_core::selfplay::{Phase, Promotion, SelfPlay};
use spf_core::train::{Counters, RunConfig, Trainer};

use crate::error::{Error, Result};
use crate::persist::{pool_load, pool_persist, read_json, write_atomic, write_json};

pub const MANIFEST: &str = "manifest.json";

/// How the run's random streams are recovered. No generator state is
/// stored: every stream is derived from the seed and a counter kept here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngInfo {
    pub generator: String,
    pub seed: u64,
    /// Learner streams are keyed by this version.
    pub version: u64,
    /// Actors restart from the streams of this generation.
    pub actor_epoch: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub run_id: String,
    pub env_steps: u64,
    pub version: u64,
    pub config: RunConfig,
    pub network_spec: NetworkSpec,
    pub counters: Counters,
    pub max_level: u32,
    pub phase: Phase,
    pub promotions: Vec<Promotion>,
    pub policy: String,
    pub value: String,
    pub policy_optimizer: String,
    pub value_optimizer: String,
    pub pool_dir: String,
    pub rng: RngInfo,
}

pub fn run_id(cfg: &RunConfig) -> String {
    format!("{}-{}-seed{}", cfg.env.name(), cfg.selfplay.strategy.name(), cfg.seed)
}

pub fn checkpoint_dir(out: &Path, version: u64) -> PathBuf {
    out.join("checkpoints").join(format!("ckpt_{version:08}"))
}

/// Newest complete checkpoint under a run directory.
pub fn latest_checkpoint(out: &Path) -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out.join("checkpoints"))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    dirs.pop()
}

pub fn save_checkpoint(t: &Trainer, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = t.config();
    write_atomic(&dir.join("policy.bin"), &t.learner.policy.to_blob())?;
    write_atomic(&dir.join("value.bin"), &t.learner.value.to_blob())?;
    write_atomic(&dir.join("policy_opt.bin"), &t.learner.policy_opt.to_blob())?;
    write_atomic(&dir.join("value_opt.bin"), &t.learner.value_opt.to_blob())?;
    pool_persist(t.pool(), &cfg.env, t.spec(), &dir.join("pool"))?;
    let c = t.counters().clone();
    let m = CheckpointManifest {
        run_id: run_id(cfg),
        env_steps: c.env_steps,
        version: c.version,
        config: cfg.clone(),
        network_spec: t.spec().clone(),
        max_level: t.selfplay().max_level(),
        phase: t.selfplay().phase(),
        promotions: t.selfplay().promotions().to_vec(),
        policy: "policy.bin".into(),
        value: "value.bin".into(),
        policy_optimizer: "policy_opt.bin".into(),
        value_optimizer: "value_opt.bin".into(),
        pool_dir: "pool".into(),
        rng: RngInfo {
            generator: "chacha8".into(),
            seed: cfg.seed,
            version: c.version,
            actor_epoch: cfg.actor_epoch(c.version),
        },
        counters: c,
    };
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>> {
    let p = dir.join(file);
    fs::read(&p).map_err(|e| Error::io(p, e))
}

/// Restores a trainer. `config` replaces the stored config when given; its
/// network shape must match the stored parameters.
pub fn load_checkpoint(dir: &Path, config: Option<RunConfig>) -> Result<(Trainer, CheckpointManifest)> {
    let m: CheckpointManifest = read_json(&dir.join(MANIFEST))?;
    let cfg = config.unwrap_or_else(|| m.config.clone());
    let expected = cfg.network_spec()?;
    if expected != m.network_spec {
        return Err(spf_core::Error::SpecMismatch {
            expected: expected.fingerprint(),
            found: m.network_spec.fingerprint(),
        }
        .into());
    }
    let policy = PolicyNet::from_blob(&read(dir, &m.policy)?, &m.network_spec)?;
    let value = ValueNet::from_blob(&read(dir, &m.value)?, &m.network_spec)?;
    let policy_opt = AdamState::from_blob(&read(dir, &m.policy_optimizer)?, policy.params())?;
    let value_opt = AdamState::from_blob(&read(dir, &m.value_optimizer)?, value.params())?;
    let learner = Learner {
        policy,
        value,
        policy_opt,
        value_opt,
    };
    let stored = pool_load(&dir.join(&m.pool_dir))?;
    let selfplay = SelfPlay::from_parts(cfg.selfplay.clone(), m.max_level, stored.pool, m.phase, m.promotions.clone())?;
    let t = Trainer::restore(cfg, learner, selfplay, m.counters.clone())?;
    Ok((t, m))
}
