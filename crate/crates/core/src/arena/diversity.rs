//! Behavioural diversity of a policy pool.
//!
//! Each policy is embedded as its action distributions over a fixed probe
//! set; the index is the log-determinant of a Gaussian kernel over those
//! embeddings, shifted so that a pool of identical policies scores 0.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::env::{staggered_reset, Env, EnvConfig, TeamView};
use crate::nn::{PolicyNet, RecurrentState};
use crate::{derive_seed, rng_from_seed, Error, Result};

/// Ridge added to the kernel diagonal.
pub const KERNEL_RIDGE: f64 = 1e-6;

/// Team-0 views of the probe states, all with a real decision to make.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub name: String,
    pub views: Vec<TeamView>,
    pub agents: usize,
    pub num_actions: usize,
}

impl ProbeSet {
    /// Every reachable Tic-Tac-Toe position with at most two marks, seen by
    /// the player to move: 1 + 9 + 72 = 82 states.
    pub fn tic_tac_toe() -> Result<Self> {
        let env = EnvConfig::TicTacToe.build()?;
        let mut board = env.as_board().cloned().ok_or_else(|| Error::Precondition("not a board".into()))?;
        let mut views = Vec::new();
        let mut push = |cells: &[u8], views: &mut Vec<TeamView>| -> Result<()> {
            let out = board.set_position(cells, 0)?;
            views.push(out.teams[0].clone());
            Ok(())
        };
        let empty = [0u8; 9];
        push(&empty, &mut views)?;
        for o in 0..9 {
            let mut c = empty;
            c[o] = 2;
            push(&c, &mut views)?;
        }
        for x in 0..9 {
            for o in 0..9 {
                if x != o {
                    let mut c = empty;
                    c[x] = 1;
                    c[o] = 2;
                    push(&c, &mut views)?;
                }
            }
        }
        Ok(ProbeSet {
            name: "tic_tac_toe_le2".into(),
            views,
            agents: 1,
            num_actions: env.spec().num_actions,
        })
    }

    /// `count` states reached by seeded random play from seeded resets.
    pub fn random_play(env_cfg: &EnvConfig, count: usize, seed: u64) -> Result<Self> {
        let mut env = env_cfg.build()?;
        let max_level = env.max_level();
        if max_level > 0 {
            env.set_level(max_level)?;
        }
        let spec = env.spec().clone();
        let mut rng = rng_from_seed(derive_seed(seed, 0xD1E5));
        let mut views = Vec::with_capacity(count);
        let mut attempt = 0u64;
        while views.len() < count {
            env.set_first_mover((attempt % 2) as usize);
            let out = staggered_reset(&mut env, derive_seed(seed, attempt), spec.max_episode_len / 2, &mut rng)?;
            attempt += 1;
            if out.done || out.teams[0].forced_actions(spec.num_actions).is_some() {
                continue;
            }
            views.push(out.teams[0].clone());
            if attempt > 100 * count as u64 + 1000 {
                return Err(Error::Precondition("could not find enough decision states".into()));
            }
        }
        Ok(ProbeSet {
            name: format!("{}_random_{count}_seed{seed}", env_cfg.name()),
            views,
            agents: spec.agents_per_team,
            num_actions: spec.num_actions,
        })
    }

    /// The standard probe set of an environment.
    pub fn standard(env: &EnvConfig) -> Result<Self> {
        match env {
            EnvConfig::TicTacToe => ProbeSet::tic_tac_toe(),
            _ => ProbeSet::random_play(env, 512, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Concatenated action probabilities of every agent on every probe, from
    /// zero recurrent state.
    pub fn embed(&self, net: &PolicyNet) -> Result<Vec<f64>> {
        let k = self.agents;
        let zeros = alloc::vec![RecurrentState::zeros(net.spec().hidden_width); k];
        let ids: Vec<usize> = (0..k).collect();
        let mut out = Vec::with_capacity(self.len() * k * self.num_actions);
        for v in &self.views {
            let (dists, _) = net.forward_batch(&v.obs, &ids, &zeros, &v.masks)?;
            for d in dists {
                out.extend(d.probs());
            }
        }
        Ok(out)
    }
}

/// Default kernel bandwidth: half the square root of the probe count, so
/// two policies with disjoint deterministic behaviour on every probe sit at
/// kernel value e⁻⁴.
pub fn default_bandwidth(probes: usize) -> f64 {
    0.5 * libm::sqrt(probes as f64)
}

/// log det(K + ridge·I) of a pool of n identical policies.
pub fn identical_pool_logdet(n: usize) -> f64 {
    // Eigenvalues of the all-ones matrix are n (once) and 0 (n−1 times).
    libm::log(n as f64 + KERNEL_RIDGE) + (n as f64 - 1.0) * libm::log(KERNEL_RIDGE)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiversityReport {
    /// log det(K + ridge·I) minus its identical-pool value; 0 is the floor.
    pub index: f64,
    pub log_det: f64,
    pub n: usize,
    pub bandwidth: f64,
    pub probe_set: String,
    pub embeddings: Vec<Vec<f64>>,
}

/// Diversity of a pool given its behavioural embeddings.
pub fn diversity_index(embeddings: Vec<Vec<f64>>, bandwidth: f64, probe_set: &str) -> Result<DiversityReport> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Precondition(format!("diversity needs at least 2 policies, got {n}")));
    }
    if embeddings.iter().any(|e| e.len() != embeddings[0].len()) {
        return Err(Error::Shape("embeddings differ in length".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Precondition("bandwidth must be positive".into()));
    }
    let k = DMatrix::from_fn(n, n, |a, b| {
        let d2: f64 = embeddings[a].iter().zip(&embeddings[b]).map(|(x, y)| (x - y) * (x - y)).sum();
        libm::exp(-d2 / (2.0 * bandwidth * bandwidth)) + if a == b { KERNEL_RIDGE } else { 0.0 }
    });
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::NonFinite("kernel matrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| libm::log(*x)).sum::<f64>();
    Ok(DiversityReport {
        index: log_det - identical_pool_logdet(n),
        log_det,
        n,
        bandwidth,
        probe_set: probe_set.into(),
        embeddings,
    })
}

/// Embeds every policy on `probes` and scores the pool.
pub fn pool_diversity(policies: &[PolicyNet], probes: &ProbeSet, bandwidth: Option<f64>) -> Result<DiversityReport> {
    let emb = policies.iter().map(|p| probes.embed(p)).collect::<Result<Vec<_>>>()?;
    let h = bandwidth.unwrap_or_else(|| default_bandwidth(probes.len()));
    diversity_index(emb, h, &probes.name)
}
