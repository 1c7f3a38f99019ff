use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::GameResult;
use crate::{Error, Result};

/// Where in training a snapshot was frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SnapshotStage {
    Initial,
    Curriculum,
    SelfPlay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SnapshotMeta {
    pub stage: SnapshotStage,
    /// Difficulty level the snapshot passed (curriculum) or trained at.
    pub level: u32,
    pub env_steps: u64,
    pub update: u64,
    /// Seconds since the Unix epoch, supplied by the caller; 0 if unknown.
    pub timestamp: u64,
}

/// A frozen policy: id, parameter blob and creation metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub id: u64,
    pub blob: Vec<u8>,
    pub meta: SnapshotMeta,
}

/// Win/draw/loss counts of one ordered pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairRecord {
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
}

impl PairRecord {
    pub fn games(&self) -> u64 {
        self.wins + self.draws + self.losses
    }

    pub fn add(&mut self, r: GameResult) {
        match r {
            GameResult::Win => self.wins += 1,
            GameResult::Draw => self.draws += 1,
            GameResult::Loss => self.losses += 1,
        }
    }

    /// `(wins + w_draw·draws) / games`, or `None` before any game.
    pub fn rate(&self, w_draw: f64) -> Option<f64> {
        let g = self.games();
        (g > 0).then(|| (self.wins as f64 + w_draw * self.draws as f64) / g as f64)
    }
}

/// Append-only snapshot archive plus empirical pairwise results.
///
/// Results are keyed by `(player, opponent)` ids; the player may be the
/// training candidate whose id is not in the pool yet.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpponentPool {
    snapshots: Vec<Snapshot>,
    table: BTreeMap<(u64, u64), PairRecord>,
}

impl OpponentPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a pool from persisted parts. Ids must be strictly increasing.
    pub fn from_parts(snapshots: Vec<Snapshot>, table: BTreeMap<(u64, u64), PairRecord>) -> Result<Self> {
        if snapshots.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::Precondition("snapshot ids must be strictly increasing".into()));
        }
        Ok(OpponentPool { snapshots, table })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn get(&self, index: usize) -> Option<&Snapshot> {
        self.snapshots.get(index)
    }

    pub fn latest(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.snapshots.binary_search_by_key(&id, |s| s.id).ok()
    }

    pub fn next_id(&self) -> u64 {
        self.snapshots.last().map_or(0, |s| s.id + 1)
    }

    pub fn table(&self) -> &BTreeMap<(u64, u64), PairRecord> {
        &self.table
    }

    /// Appends a snapshot with the next id and returns that id.
    pub fn push(&mut self, blob: Vec<u8>, meta: SnapshotMeta) -> u64 {
        let id = self.next_id();
        self.snapshots.push(Snapshot { id, blob, meta });
        id
    }

    /// Records one game of `player` against `opponent` and its mirror.
    pub fn record(&mut self, player: u64, opponent: u64, result: GameResult) {
        self.table.entry((player, opponent)).or_default().add(result);
        self.table.entry((opponent, player)).or_default().add(result.flip());
    }

    pub fn pair(&self, player: u64, opponent: u64) -> PairRecord {
        self.table.get(&(player, opponent)).copied().unwrap_or_default()
    }

    /// p̂(i, j); unplayed pairs count as even.
    pub fn p_hat(&self, player: u64, opponent: u64, w_draw: f64) -> f64 {
        self.pair(player, opponent).rate(w_draw).unwrap_or(0.5)
    }

    /// Win rate of `player` against the whole pool: per-opponent p̂
    /// weighted by games played, unplayed opponents entering as one game at
    /// 0.5.
    pub fn set_winrate(&self, player: u64, w_draw: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in &self.snapshots {
            let rec = self.pair(player, s.id);
            match rec.rate(w_draw) {
                Some(p) => {
                    num += p * rec.games() as f64;
                    den += rec.games() as f64;
                }
                None => {
                    num += 0.5;
                    den += 1.0;
                }
            }
        }
        if den == 0.0 {
            0.5
        } else {
            num / den
        }
    }
}

/// Probability weights of the Challenge sampler over pool indices: mass
/// `recent_prob` spread over the `window` newest snapshots, the rest over
/// the older ones (all of it on the recent window when none are older).
pub fn challenge_weights(pool_len: usize, window: usize, recent_prob: f64) -> Vec<f64> {
    let mut w = vec![0.0; pool_len];
    if pool_len == 0 {
        return w;
    }
    let recent = window.clamp(1, pool_len);
    let older = pool_len - recent;
    let recent_mass = if older == 0 { 1.0 } else { recent_prob };
    for x in &mut w[older..] {
        *x = recent_mass / recent as f64;
    }
    for x in &mut w[..older] {
        *x = (1.0 - recent_prob) / older as f64;
    }
    w
}

/// Draws a pool index the Challenge way: a coin with `recent_prob` picks
/// the recent window, then an index uniformly within the chosen group.
pub fn sample_challenge<R: Rng + ?Sized>(pool_len: usize, window: usize, recent_prob: f64, rng: &mut R) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::EmptyPool);
    }
    let recent = window.clamp(1, pool_len);
    let older = pool_len - recent;
    let coin: f64 = rng.random();
    if older == 0 || coin < recent_prob {
        Ok(older + rng.random_range(0..recent))
    } else {
        Ok(rng.random_range(0..older))
    }
}

/// Hardness weighting of an opponent the player beats with rate `x`.
pub fn f_hard(x: f64) -> f64 {
    (1.0 - x) * (1.0 - x)
}

/// Sampling probabilities proportional to `f_hard(p̂)`, uniform when every
/// weight vanishes.
pub fn generalize_probs(p_hat: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = p_hat.iter().map(|&p| f_hard(p)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / p_hat.len().max(1) as f64; p_hat.len()]
    }
}

/// Draws an opponent index with probability ∝ `f_hard(p̂)`.
pub fn sample_generalize<R: Rng + ?Sized>(p_hat: &[f64], rng: &mut R) -> Result<usize> {
    if p_hat.is_empty() {
        return Err(Error::EmptyPool);
    }
    if let Some(&bad) = p_hat.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Precondition(format!("win rate {bad} outside [0, 1]")));
    }
    let probs = generalize_probs(p_hat);
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> SnapshotMeta {
        SnapshotMeta {
            stage: SnapshotStage::SelfPlay,
            level: 0,
            env_steps: 0,
            update: 0,
            timestamp: 0,
        }
    }

    #[test]
    fn pool_is_append_only_with_increasing_ids() {
        let mut p = OpponentPool::new();
        assert_eq!(p.push(vec![1], meta()), 0);
        assert_eq!(p.push(vec![2], meta()), 1);
        assert_eq!(p.index_of(1), Some(1));
        assert_eq!(p.latest().unwrap().blob, vec![2]);
        let bad = OpponentPool::from_parts(vec![p.snapshots()[1].clone(), p.snapshots()[0].clone()], BTreeMap::new());
        assert!(bad.is_err());
    }

    #[test]
    fn win_table_mirrors_and_defaults() {
        let mut p = OpponentPool::new();
        p.push(vec![], meta());
        assert_eq!(p.p_hat(5, 0, 0.5), 0.5);
        p.record(5, 0, GameResult::Win);
        p.record(5, 0, GameResult::Draw);
        assert_eq!(p.p_hat(5, 0, 0.5), 0.75);
        assert_eq!(p.p_hat(0, 5, 0.5), 0.25);
        assert_eq!(p.pair(0, 5).losses, 1);
        p.push(vec![], meta());
        // One unplayed opponent enters as a single even game.
        assert!((p.set_winrate(5, 0.5) - (0.75 * 2.0 + 0.5) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn challenge_single_and_degenerate() {
        let mut rng = crate::rng_from_seed(1);
        for _ in 0..100 {
            assert_eq!(sample_challenge(1, 1, 0.8, &mut rng).unwrap(), 0);
        }
        assert_eq!(challenge_weights(3, 5, 0.8), vec![1.0 / 3.0; 3]);
        assert!(sample_challenge(0, 1, 0.8, &mut rng).is_err());
        let w = challenge_weights(10, 1, 0.8);
        assert!((w[9] - 0.8).abs() < 1e-15 && (w[0] - 0.2 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn generalize_examples() {
        assert_eq!(generalize_probs(&[0.3]), vec![1.0]);
        let p = generalize_probs(&[0.0, 0.5]);
        assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15);
        assert_eq!(generalize_probs(&[1.0, 0.9])[0], 0.0);
        assert_eq!(generalize_probs(&[1.0, 1.0]), vec![0.5, 0.5]);
        let mut rng = crate::rng_from_seed(2);
        assert!((0..10_000).all(|_| sample_generalize(&[1.0, 0.2], &mut rng).unwrap() == 1));
        assert!(sample_generalize(&[], &mut rng).is_err());
        assert!(sample_generalize(&[1.5], &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn generalize_probs_form_a_distribution(p in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let q = generalize_probs(&p);
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (pi, qi) in p.iter().zip(&q) {
                prop_assert!(*qi >= 0.0);
                if *pi == 1.0 && p.iter().any(|&x| x < 1.0) {
                    prop_assert_eq!(*qi, 0.0);
                }
            }
        }

        #[test]
        fn challenge_weights_sum_to_one(n in 1usize..30, r in 1usize..40, mix in 0.05f64..1.0) {
            let w = challenge_weights(n, r, mix);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
