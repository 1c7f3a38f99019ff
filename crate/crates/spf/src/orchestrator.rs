//! Threaded training: actor workers, one learner, a bounded trajectory queue.
//!
//! The learner publishes an immutable [`Broadcast`] behind a mutex; actors
//! clone the `Arc`, roll out, and push [`TrajectoryMessage`]s into a
//! `sync_channel` of capacity twice the actor count, blocking when it is
//! full. With `max_version_lag = 0` every update consumes exactly one
//! message per actor, all produced from the current parameters and sorted by
//! actor id, which makes the run bit-identical to [`Trainer::run_serial`]
//! for any actor count. A positive lag lets actors keep producing from an
//! older broadcast; updates then take the first `num_actors` messages to
//! arrive and the run is reproducible only in aggregate.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use spf_core::jrpo::Parallel;
use spf_core::train::{Broadcast, RunConfig, StopReason, TrajectoryMessage, Trainer, UpdateReport};

use crate::checkpoint::{checkpoint_dir, load_checkpoint, run_id, save_checkpoint};
use crate::config::write_effective;
use crate::error::{Error, Result};
use crate::metrics::{MetricsWriter, METRICS_FILE};
use crate::persist::{pool_persist, write_json};

/// Learner-side data parallelism over scoped threads.
#[derive(Clone, Copy, Debug)]
pub struct ScopedPool {
    pub threads: usize,
}

impl Parallel for ScopedPool {
    fn workers(&self) -> usize {
        self.threads.max(1)
    }

    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync,
    {
        let n = items.len();
        let workers = self.workers().min(n);
        if workers <= 1 {
            return items.into_iter().map(f).collect();
        }
        let per = n.div_ceil(workers);
        let mut groups: Vec<Vec<T>> = Vec::with_capacity(workers);
        let mut it = items.into_iter();
        for _ in 0..workers {
            groups.push(it.by_ref().take(per).collect());
        }
        let f = &f;
        thread::scope(|s| {
            let handles: Vec<_> = groups
                .into_iter()
                .map(|g| s.spawn(move || g.into_iter().map(f).collect::<Vec<R>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        })
    }
}

#[derive(Default)]
struct Board {
    broadcast: Option<Arc<Broadcast>>,
    shutdown: bool,
}

struct Shared {
    board: Mutex<Board>,
    cv: Condvar,
    produced: AtomicU64,
}

impl Shared {
    fn publish(&self, b: Broadcast) {
        let mut g = self.board.lock().unwrap();
        g.broadcast = Some(Arc::new(b));
        self.cv.notify_all();
    }

    fn shutdown(&self) {
        let mut g = self.board.lock().unwrap();
        g.shutdown = true;
        self.cv.notify_all();
    }
}

type Outgoing = std::result::Result<TrajectoryMessage, String>;

fn actor_loop(id: usize, cfg: &RunConfig, shared: &Shared, tx: &SyncSender<Outgoing>, fail_at: Option<u64>) {
    let mut actor = None;
    let mut epoch = None;
    let mut last_version = None;
    let mut produced_here = 0u64;
    let share = cfg.actor_share();
    loop {
        let b = {
            let mut g = shared.board.lock().unwrap();
            loop {
                if g.shutdown {
                    return;
                }
                if let Some(b) = &g.broadcast {
                    if last_version != Some(b.version) || produced_here <= cfg.max_version_lag {
                        break b.clone();
                    }
                }
                g = shared.cv.wait(g).unwrap();
            }
        };
        if last_version != Some(b.version) {
            last_version = Some(b.version);
            produced_here = 0;
        }
        if fail_at == Some(b.version) {
            panic!("injected failure in actor {id} at version {}", b.version);
        }
        if epoch != Some(b.actor_epoch) {
            match Trainer::build_actor(cfg, id, b.actor_epoch) {
                Ok(a) => actor = Some(a),
                Err(e) => {
                    let _ = tx.send(Err(format!("actor {id}: {e}")));
                    return;
                }
            }
            epoch = Some(b.actor_epoch);
        }
        let a = actor.as_mut().expect("actor is built");
        let msg = Trainer::act(a, id, &b, share).map_err(|e| format!("actor {id}: {e}"));
        let failed = msg.is_err();
        produced_here += 1;
        shared.produced.fetch_add(1, Ordering::SeqCst);
        if tx.send(msg).is_err() || failed {
            return;
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Checkpoint directory to continue from.
    pub resume: Option<PathBuf>,
    /// Stop after this many updates in this invocation.
    pub max_updates: Option<u64>,
    /// Set from outside (e.g. on SIGINT) to stop after the current update.
    pub stop: Option<Arc<AtomicBool>>,
    /// Print one progress line per this many updates; 0 is silent.
    pub log_every: u64,
    #[doc(hidden)]
    pub fail_actor_at: Option<(usize, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub stop: String,
    pub env_steps: u64,
    pub updates: u64,
    pub phase: String,
    pub curriculum_complete: bool,
    pub stage_incomplete: bool,
    pub pool_size: usize,
    pub probe_hit: Option<u64>,
    pub last_probe: Option<f64>,
    pub stale_fraction: f64,
    pub messages_produced: u64,
    pub messages_consumed: u64,
    pub messages_dropped: u64,
    pub wall_seconds: f64,
    pub env_steps_per_second: f64,
    pub final_checkpoint: String,
}

fn unix_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

struct Workers {
    shared: Arc<Shared>,
    rx: Receiver<Outgoing>,
    handles: Vec<Option<JoinHandle<()>>>,
}

impl Workers {
    fn spawn(cfg: &RunConfig, fail: Option<(usize, u64)>) -> Result<Self> {
        let shared = Arc::new(Shared {
            board: Mutex::new(Board::default()),
            cv: Condvar::new(),
            produced: AtomicU64::new(0),
        });
        let (tx, rx) = sync_channel(2 * cfg.num_actors);
        let mut handles = Vec::with_capacity(cfg.num_actors);
        for id in 0..cfg.num_actors {
            let (cfg, shared, tx) = (cfg.clone(), shared.clone(), tx.clone());
            let fail_at = fail.filter(|f| f.0 == id).map(|f| f.1);
            let h = thread::Builder::new()
                .name(format!("actor-{id}"))
                .spawn(move || actor_loop(id, &cfg, &shared, &tx, fail_at))
                .map_err(|e| Error::Worker(format!("cannot spawn actor {id}: {e}")))?;
            handles.push(Some(h));
        }
        Ok(Workers { shared, rx, handles })
    }

    /// Next message; an actor that exits while the run is live aborts it.
    fn recv(&mut self) -> Result<TrajectoryMessage> {
        loop {
            match self.rx.recv_timeout(Duration::from_millis(50)) {
                Ok(Ok(m)) => return Ok(m),
                Ok(Err(e)) => return Err(Error::Worker(e)),
                Err(RecvTimeoutError::Timeout) => {
                    for (id, slot) in self.handles.iter_mut().enumerate() {
                        if slot.as_ref().is_some_and(|h| h.is_finished()) {
                            let h = slot.take().expect("checked above");
                            let why = match h.join() {
                                Ok(()) => "exited".to_string(),
                                Err(p) => p
                                    .downcast_ref::<String>()
                                    .cloned()
                                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                                    .unwrap_or_else(|| "panicked".into()),
                            };
                            return Err(Error::Worker(format!("actor {id} stopped: {why}")));
                        }
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Worker("all actors stopped".into())),
            }
        }
    }

    /// Stops every actor and counts the messages nobody consumed.
    fn shutdown(mut self) -> u64 {
        self.shared.shutdown();
        let mut dropped = 0;
        loop {
            match self.rx.recv_timeout(Duration::from_millis(10)) {
                Ok(_) => dropped += 1,
                Err(RecvTimeoutError::Timeout) => {
                    if self.handles.iter().all(|h| h.as_ref().is_none_or(|h| h.is_finished())) {
                        break;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        for h in self.handles.iter_mut().filter_map(Option::take) {
            let _ = h.join();
        }
        dropped + self.rx.try_iter().count() as u64
    }
}

/// Collects the messages of one update.
fn gather(w: &mut Workers, cfg: &RunConfig, version: u64) -> Result<Vec<TrajectoryMessage>> {
    let mut msgs = Vec::with_capacity(cfg.num_actors);
    if cfg.max_version_lag == 0 {
        let mut seen = vec![false; cfg.num_actors];
        while msgs.len() < cfg.num_actors {
            let m = w.recv()?;
            if m.version != version || seen[m.actor] {
                return Err(Error::Worker(format!(
                    "actor {} sent version {} during synchronous update {version}",
                    m.actor, m.version
                )));
            }
            seen[m.actor] = true;
            msgs.push(m);
        }
    } else {
        while msgs.len() < cfg.num_actors {
            msgs.push(w.recv()?);
        }
    }
    msgs.sort_by_key(|m| (m.actor, m.version));
    Ok(msgs)
}

/// Drives `trainer` with actor threads until it stops, the update limit is
/// reached or `stop` is raised. Returns the number of messages produced,
/// consumed and dropped.
pub fn drive(
    trainer: &mut Trainer,
    opts: &RunOptions,
    mut sink: impl FnMut(&Trainer, &UpdateReport) -> Result<()>,
) -> Result<(u64, u64, u64)> {
    let cfg = trainer.config().clone();
    let exec = ScopedPool {
        threads: cfg.learner_threads,
    };
    let mut workers = Workers::spawn(&cfg, opts.fail_actor_at)?;
    let mut consumed = 0u64;
    let mut done = 0u64;
    let result = (|| {
        while trainer.stop_reason().is_none()
            && opts.max_updates.is_none_or(|m| done < m)
            && !opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst))
        {
            workers.shared.publish(trainer.broadcast()?);
            let msgs = gather(&mut workers, &cfg, trainer.version())?;
            consumed += msgs.len() as u64;
            let report = trainer.consume(msgs, &exec)?;
            sink(trainer, &report)?;
            done += 1;
        }
        Ok(())
    })();
    let shared = workers.shared.clone();
    let dropped = workers.shutdown();
    result.map(|()| (shared.produced.load(Ordering::SeqCst), consumed, dropped))
}

/// Full pipeline: effective config, metrics stream, periodic and final
/// checkpoints, the persisted pool and `summary.json` under `out_dir`.
pub fn run_training(cfg: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_effective(&cfg, &out)?;
    let metrics_path = out.join(METRICS_FILE);
    let (mut trainer, mut metrics) = match &opts.resume {
        Some(dir) => {
            let (t, m) = load_checkpoint(dir, Some(cfg.clone()))?;
            let w = MetricsWriter::resume(&metrics_path, m.version)?;
            (t, w)
        }
        None => (Trainer::new(cfg.clone())?, MetricsWriter::create(&metrics_path)?),
    };
    trainer.set_clock(unix_seconds);
    let start = Instant::now();
    let steps_at_start = trainer.env_steps();
    let every = cfg.checkpoint_every;
    let log_every = opts.log_every;
    let (produced, consumed, dropped) = drive(&mut trainer, opts, |t, r| {
        metrics.write(r)?;
        if every > 0 && r.update % every == 0 {
            metrics.flush()?;
            save_checkpoint(t, &checkpoint_dir(&out, r.update))?;
        }
        if log_every > 0 && r.update % log_every == 0 {
            eprintln!(
                "update {} steps {} {} level {} pool {} gate {} probe {}",
                r.update,
                r.env_steps,
                r.phase,
                r.level,
                r.pool_size,
                r.gate_p_win.map_or("-".into(), |p| format!("{p:.3}")),
                r.probe_p_win.map_or("-".into(), |p| format!("{p:.3}")),
            );
        }
        Ok(())
    })?;
    metrics.flush()?;
    let wall = start.elapsed().as_secs_f64();
    let final_dir = checkpoint_dir(&out, trainer.version());
    if !final_dir.join(crate::checkpoint::MANIFEST).exists() {
        save_checkpoint(&trainer, &final_dir)?;
    }
    pool_persist(trainer.pool(), &cfg.env, trainer.spec(), &out.join("pool"))?;
    let fin = trainer.final_report();
    let c = trainer.counters();
    let summary = RunSummary {
        run_id: run_id(&cfg),
        stop: match trainer.stop_reason() {
            Some(StopReason::Budget) => "budget",
            Some(StopReason::ProbeTarget) => "probe_target",
            None => "interrupted",
        }
        .into(),
        env_steps: fin.env_steps,
        updates: fin.updates,
        phase: fin.phase.name().into(),
        curriculum_complete: fin.curriculum_complete,
        stage_incomplete: fin.stage_incomplete,
        pool_size: fin.pool_size,
        probe_hit: fin.probe_hit,
        last_probe: c.last_probe,
        stale_fraction: if c.consumed_steps == 0 {
            0.0
        } else {
            c.stale_steps as f64 / c.consumed_steps as f64
        },
        messages_produced: produced,
        messages_consumed: consumed,
        messages_dropped: dropped,
        wall_seconds: wall,
        env_steps_per_second: (fin.env_steps - steps_at_start) as f64 / wall.max(1e-9),
        final_checkpoint: final_dir.strip_prefix(&out).unwrap_or(&final_dir).display().to_string(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Env-steps per second of actors alone, with the learner replaced by a
/// consumer that discards messages.
pub fn actor_throughput(cfg: &RunConfig, seconds: f64) -> Result<f64> {
    let trainer = Trainer::new(cfg.clone())?;
    let b = trainer.broadcast()?;
    let steps = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let start = Instant::now();
    thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = (0..cfg.num_actors)
            .map(|id| {
                let (b, steps, stop) = (&b, steps.clone(), stop.clone());
                s.spawn(move || -> Result<()> {
                    let mut a = Trainer::build_actor(cfg, id, 0)?;
                    while !stop.load(Ordering::Relaxed) {
                        let m = Trainer::act(&mut a, id, b, 256)?;
                        steps.fetch_add(m.env_steps, Ordering::Relaxed);
                    }
                    Ok(())
                })
            })
            .collect();
        thread::sleep(Duration::from_secs_f64(seconds));
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            h.join().map_err(|_| Error::Worker("throughput actor panicked".into()))??;
        }
        Ok(())
    })?;
    Ok(steps.load(Ordering::Relaxed) as f64 / start.elapsed().as_secs_f64())
}

pub fn out_dir(cfg: &RunConfig) -> &Path {
    Path::new(&cfg.out_dir)
}
