mod common;

use common::{sigma_monotone_violation, transitive_recoveries};
use spf_core::arena::trueskill::v_win;

#[test]
fn v_at_zero() {
    assert!((v_win(0.0, 0.0) - 0.7978845608).abs() < 1e-9);
}

#[test]
fn sigma_shrinks_on_every_static_update() {
    assert_eq!(sigma_monotone_violation(100_000, 5), None);
}

#[test]
fn constructed_transitive_pool_is_recovered() {
    let hits = transitive_recoveries(20, 200);
    assert!(hits >= 19, "{hits}/20");
}
