//! On-disk opponent pools.
//!
//! A pool directory holds one `snap_<id>.bin` per snapshot and a
//! `manifest.json` written last, so a directory with a manifest is complete.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spf_core::env::EnvConfig;
use spf_core::nn::{NetworkSpec, PolicyNet};
use spf_core::selfplay::{OpponentPool, PairRecord, Snapshot, SnapshotMeta};

use crate::error::{Error, Result};

pub const POOL_MANIFEST: &str = "manifest.json";

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotEntry {
    pub id: u64,
    pub file: String,
    pub meta: SnapshotMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub player: u64,
    pub opponent: u64,
    #[serde(flatten)]
    pub record: PairRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub env: EnvConfig,
    pub network_spec: NetworkSpec,
    pub snapshots: Vec<SnapshotEntry>,
    pub table: Vec<TableEntry>,
}

/// A pool read back from disk, with what is needed to rebuild its policies.
#[derive(Clone, Debug)]
pub struct StoredPool {
    pub env: EnvConfig,
    pub spec: NetworkSpec,
    pub pool: OpponentPool,
}

impl StoredPool {
    pub fn policies(&self) -> Result<Vec<PolicyNet>> {
        self.pool
            .snapshots()
            .iter()
            .map(|s| PolicyNet::from_blob(&s.blob, &self.spec).map_err(Error::from))
            .collect()
    }
}

fn snapshot_file(id: u64) -> String {
    format!("snap_{id}.bin")
}

pub fn pool_persist(pool: &OpponentPool, env: &EnvConfig, spec: &NetworkSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut snapshots = Vec::with_capacity(pool.len());
    for s in pool.snapshots() {
        let file = snapshot_file(s.id);
        let path = dir.join(&file);
        // Snapshots are immutable; an existing file with the same bytes is kept.
        if fs::read(&path).ok().as_deref() != Some(&s.blob[..]) {
            write_atomic(&path, &s.blob)?;
        }
        snapshots.push(SnapshotEntry {
            id: s.id,
            file,
            meta: s.meta,
        });
    }
    let table = pool
        .table()
        .iter()
        .map(|(&(player, opponent), &record)| TableEntry {
            player,
            opponent,
            record,
        })
        .collect();
    let manifest = PoolManifest {
        env: env.clone(),
        network_spec: spec.clone(),
        snapshots,
        table,
    };
    write_json(&dir.join(POOL_MANIFEST), &manifest)
}

pub fn pool_load(dir: &Path) -> Result<StoredPool> {
    let manifest_path = dir.join(POOL_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Usage(format!("{} has no {POOL_MANIFEST}; not a pool directory", dir.display())));
    }
    let m: PoolManifest = read_json(&manifest_path)?;
    let missing: Vec<&str> = m
        .snapshots
        .iter()
        .filter(|s| !dir.join(&s.file).is_file())
        .map(|s| s.file.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSnapshots {
            dir: dir.to_path_buf(),
            missing: missing.join(", "),
        });
    }
    let mut snapshots = Vec::with_capacity(m.snapshots.len());
    for s in &m.snapshots {
        let path: PathBuf = dir.join(&s.file);
        let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        PolicyNet::from_blob(&blob, &m.network_spec)?;
        snapshots.push(Snapshot {
            id: s.id,
            blob,
            meta: s.meta,
        });
    }
    let table: BTreeMap<(u64, u64), PairRecord> =
        m.table.into_iter().map(|t| ((t.player, t.opponent), t.record)).collect();
    Ok(StoredPool {
        env: m.env,
        spec: m.network_spec,
        pool: OpponentPool::from_parts(snapshots, table)?,
    })
}
