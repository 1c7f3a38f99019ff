use std::fs;
use std::path::Path;

use spf::checkpoint::{checkpoint_dir, latest_checkpoint, load_checkpoint};
use spf::config::parse_config;
use spf::metrics::read_metrics;
use spf::orchestrator::{drive, run_training, RunOptions};
use spf_core::env::{EnvConfig, GoalRushConfig};
use spf_core::jrpo::TrainConfig;
use spf_core::rollout::ActorConfig;
use spf_core::selfplay::SelfPlayConfig;
use spf_core::train::{NetworkConfig, RunConfig, Trainer};

fn tiny(out: &Path) -> RunConfig {
    RunConfig {
        env: EnvConfig::TicTacToe,
        network: NetworkConfig {
            encoder_width: 8,
            hidden_width: 8,
            id_embed_width: 2,
        },
        actor: ActorConfig {
            num_envs: 4,
            chunk_len: 25,
            stagger_k_max: 2,
        },
        train: TrainConfig {
            epochs: 1,
            minibatches: 2,
            lr: 1e-3,
            value_lr: 1e-3,
            ..TrainConfig::default()
        },
        selfplay: SelfPlayConfig {
            eval_games: 10,
            eval_every: 2,
            ..SelfPlayConfig::default()
        },
        buffer_steps: 100,
        budget_env_steps: 1_000_000,
        out_dir: out.display().to_string(),
        ..RunConfig::default()
    }
}

fn updates(n: u64) -> RunOptions {
    RunOptions {
        max_updates: Some(n),
        ..RunOptions::default()
    }
}

#[test]
fn threaded_synchronous_run_matches_serial_driver() {
    for actors in [1, 3] {
        let cfg = RunConfig {
            num_actors: actors,
            ..tiny(Path::new("unused"))
        };
        let mut serial = Trainer::new(cfg.clone()).unwrap();
        let mut want = Vec::new();
        serial.run_serial(Some(6), |r| want.push(r.clone())).unwrap();
        let mut threaded = Trainer::new(cfg).unwrap();
        let mut got = Vec::new();
        let (produced, consumed, dropped) = drive(&mut threaded, &updates(6), |_, r| {
            got.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(got, want, "{actors} actors");
        assert_eq!((produced, consumed, dropped), (6 * actors as u64, 6 * actors as u64, 0));
    }
}

#[test]
fn seeded_runs_write_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_training(tiny(a.path()), &updates(6)).unwrap();
    run_training(tiny(b.path()), &updates(6)).unwrap();
    let ma = fs::read(a.path().join("metrics.jsonl")).unwrap();
    let mb = fs::read(b.path().join("metrics.jsonl")).unwrap();
    assert!(!ma.is_empty());
    assert_eq!(ma, mb);
    let reports = read_metrics(&a.path().join("metrics.jsonl")).unwrap();
    assert_eq!(reports.len(), 6);
    assert!(reports.iter().all(|r| r.stale_fraction == 0.0));
}

#[test]
fn resume_continues_bit_identically() {
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let cfg = |p: &Path| RunConfig {
        checkpoint_every: 4,
        ..tiny(p)
    };
    run_training(cfg(full.path()), &updates(12)).unwrap();

    run_training(cfg(split.path()), &updates(6)).unwrap();
    // Move the checkpoint elsewhere to show it is self-contained.
    let moved = tempfile::tempdir().unwrap();
    let src = checkpoint_dir(split.path(), 4);
    for e in fs::read_dir(&src).unwrap() {
        let e = e.unwrap();
        if e.path().is_dir() {
            fs::create_dir_all(moved.path().join(e.file_name())).unwrap();
            for f in fs::read_dir(e.path()).unwrap() {
                let f = f.unwrap();
                fs::copy(f.path(), moved.path().join(e.file_name()).join(f.file_name())).unwrap();
            }
        } else {
            fs::copy(e.path(), moved.path().join(e.file_name())).unwrap();
        }
    }
    let opts = RunOptions {
        resume: Some(moved.path().to_path_buf()),
        max_updates: Some(8),
        ..RunOptions::default()
    };
    run_training(cfg(split.path()), &opts).unwrap();
    let a = fs::read_to_string(full.path().join("metrics.jsonl")).unwrap();
    let b = fs::read_to_string(split.path().join("metrics.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 12);
    assert_eq!(a, b);
    assert_eq!(latest_checkpoint(split.path()).unwrap(), checkpoint_dir(split.path(), 12));
    let (ta, _) = load_checkpoint(&checkpoint_dir(full.path(), 12), None).unwrap();
    let (tb, _) = load_checkpoint(&checkpoint_dir(split.path(), 12), None).unwrap();
    assert_eq!(ta.learner.policy.to_blob(), tb.learner.policy.to_blob());
    assert_eq!(ta.learner.policy_opt, tb.learner.policy_opt);
    assert_eq!(ta.pool(), tb.pool());
}

#[test]
fn resume_with_another_network_shape_fails() {
    let d = tempfile::tempdir().unwrap();
    run_training(tiny(d.path()), &updates(2)).unwrap();
    let mut other = tiny(d.path());
    other.network.hidden_width = 16;
    let ck = checkpoint_dir(d.path(), 2);
    let Err(e) = load_checkpoint(&ck, Some(other.clone())) else {
        panic!("resume accepted another network shape");
    };
    assert!(e.to_string().contains("spec mismatch"), "{e}");
    let opts = RunOptions {
        resume: Some(ck),
        ..updates(1)
    };
    assert!(run_training(other, &opts).is_err());
}

#[test]
fn crashed_actor_aborts_the_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        num_actors: 2,
        ..tiny(d.path())
    };
    let opts = RunOptions {
        fail_actor_at: Some((1, 3)),
        ..updates(10)
    };
    let e = run_training(cfg, &opts).unwrap_err().to_string();
    assert!(e.contains("actor 1") && e.contains("injected failure"), "{e}");
}

#[test]
fn lagged_actors_account_for_every_message() {
    let d = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        num_actors: 3,
        max_version_lag: 2,
        learner_threads: 2,
        ..tiny(d.path())
    };
    let s = run_training(cfg, &updates(8)).unwrap();
    assert_eq!(s.messages_consumed, 24);
    assert_eq!(s.messages_produced, s.messages_consumed + s.messages_dropped);
    assert!((0.0..=1.0).contains(&s.stale_fraction));
    let m = read_metrics(&d.path().join("metrics.jsonl")).unwrap();
    assert_eq!(m.len(), 8);
    assert!(m.windows(2).all(|w| w[1].update == w[0].update + 1));
}

#[test]
fn budget_stops_the_run_and_writes_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        budget_env_steps: 1_500,
        ..tiny(d.path())
    };
    let s = run_training(cfg.clone(), &RunOptions::default()).unwrap();
    assert_eq!(s.stop, "budget");
    assert!(s.env_steps >= 1_500);
    for f in ["effective_config.json", "metrics.jsonl", "summary.json", "pool/manifest.json"] {
        assert!(d.path().join(f).is_file(), "{f}");
    }
    let text = fs::read_to_string(d.path().join("effective_config.json")).unwrap();
    assert_eq!(parse_config(&text, Path::new("effective_config.json")).unwrap(), cfg);
    spf::persist::pool_load(&d.path().join("pool")).unwrap();
}

#[test]
fn goal_rush_runs_through_the_threads() {
    let d = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        env: EnvConfig::GoalRush(GoalRushConfig {
            max_level: 2,
            max_steps: 16,
            ..GoalRushConfig::default()
        }),
        num_actors: 2,
        ..tiny(d.path())
    };
    let s = run_training(cfg, &updates(3)).unwrap();
    assert_eq!(s.updates, 3);
    assert!(s.env_steps > 0);
}
