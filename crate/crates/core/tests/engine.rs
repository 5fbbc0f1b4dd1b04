use std::collections::{BTreeMap, BTreeSet};

use rvv_core::engine::*;

fn acct() -> RowKey {
    RowKey::new("Accounts", "101")
}

fn engine(mode: CcMode, kind: StampKind) -> Engine {
    let store = Store::new().with_row(acct(), kind, [("balance", 1000)]);
    Engine::new(EngineConfig::new(mode, kind), store).unwrap()
}

fn balance(e: &Engine) -> i64 {
    e.committed_value(&acct(), "balance").unwrap()
}

#[test]
fn begin_checks_isolation_against_mode() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let txn = e.transaction(t).unwrap();
    assert_eq!(txn.state, TxnState::Active);
    assert!(txn.read_set.is_empty() && txn.write_set.is_empty());
    assert_eq!(
        e.begin(Isolation::Snapshot, CcMode::Lscc),
        Err(EngineError::InvalidIsolationForMode { isolation: Isolation::Snapshot, mode: CcMode::Lscc })
    );
    assert!(matches!(e.begin(Isolation::ReadCommitted, CcMode::Mvcc), Err(EngineError::ModeMismatch { .. })));

    let mut m = engine(CcMode::Mvcc, StampKind::Counter);
    for iso in [Isolation::RepeatableRead, Isolation::Serializable] {
        assert!(matches!(m.begin(iso, CcMode::Mvcc), Err(EngineError::InvalidIsolationForMode { .. })));
    }
    let w = m.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    m.write(w, &acct(), &[ColumnUpdate::add("balance", -1)]).unwrap();
    m.commit(w).unwrap();
    let s = m.begin(Isolation::Snapshot, CcMode::Mvcc).unwrap();
    assert_eq!(m.transaction(s).unwrap().snapshot_seq(), Some(m.commit_seq()));
}

#[test]
fn fresh_read_sees_initial_balance_and_stamp_zero() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let r = e.read(a, &acct(), "balance").unwrap();
    assert_eq!(r.value, 1000);
    assert!(r.stamp.same_as(&VersionStamp::new(StampKind::Counter, 0)));
    assert!(e.transaction(a).unwrap().read_set[&acct()].same_as(&r.stamp));
}

#[test]
fn missing_row_is_reported() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let ghost = RowKey::new("Accounts", "999");
    assert_eq!(e.read(a, &ghost, "balance").unwrap_err(), EngineError::RowNotFound(ghost.clone()));
    assert!(matches!(e.write(a, &ghost, &[ColumnUpdate::set("balance", 1)]), Err(EngineError::RowNotFound(_))));
}

#[test]
fn snapshot_read_ignores_later_commits() {
    let mut e = engine(CcMode::Mvcc, StampKind::Counter);
    let reader = e.begin(Isolation::Snapshot, CcMode::Mvcc).unwrap();
    let writer = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    e.write(writer, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    e.commit(writer).unwrap();
    let r = e.read(reader, &acct(), "balance").unwrap();
    assert_eq!(r.value, 1000);
    assert_eq!(r.stamp.value(), Some(0));
    // a READ_COMMITTED reader sees the commit
    let rc = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    assert_eq!(e.read(rc, &acct(), "balance").unwrap().value, 800);
}

#[test]
fn commit_scn_reads_null_while_row_is_write_locked() {
    let mut e = engine(CcMode::Mvcc, StampKind::CommitScn);
    let locker = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    e.write(locker, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    let reader = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    let r = e.read(reader, &acct(), "balance").unwrap();
    assert_eq!(r.value, 1000);
    assert!(r.stamp.is_indeterminate());
    // the locker itself still sees a determinate stamp
    assert!(!e.read(locker, &acct(), "balance").unwrap().stamp.is_indeterminate());

    // an indeterminate stamp never validates a conditional write
    e.abort(locker).unwrap();
    let w = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    let out = e.conditional_write(w, &acct(), &[ColumnUpdate::set("balance", 1)], &r.stamp).unwrap();
    assert_eq!(out.affected, 0);
}

#[test]
fn commit_scn_under_locking_blocks_instead_of_reading_null() {
    let mut e = engine(CcMode::Lscc, StampKind::CommitScn);
    let locker = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(locker, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    let reader = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    assert_eq!(e.read(reader, &acct(), "balance").unwrap_err(), EngineError::WouldBlock);
    e.commit(locker).unwrap();
    let r = e.read(reader, &acct(), "balance").unwrap();
    assert_eq!((r.value, r.stamp.value()), (800, Some(1)));
}

/// The select-then-update race under LSCC READ_COMMITTED: B's update goes through while A holds no lock.
#[test]
fn select_update_under_read_committed() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let seen = e.read(a, &acct(), "balance").unwrap();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    let receipt = e.commit(b).unwrap();
    assert_eq!(balance(&e), 800);
    assert_eq!(receipt.written[0].stamp.value(), Some(1));
    e.write(a, &acct(), &[ColumnUpdate::set("balance", seen.value - 100)]).unwrap();
    e.commit(a).unwrap();
    assert_eq!(balance(&e), 900);
}

#[test]
fn uncontended_write_is_granted_immediately() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    let ticket = e.write(a, &acct(), &[ColumnUpdate::add("balance", 5)]).unwrap();
    assert_eq!(ticket.values["balance"], 1005);
    assert_eq!(ticket.basis_version, 0);
    assert_eq!(e.lock_table().held(a, &acct()), Some(LockMode::Exclusive));
}

#[test]
fn mvcc_first_writer_wins() {
    let mut e = engine(CcMode::Mvcc, StampKind::Counter);
    let a = e.begin(Isolation::Snapshot, CcMode::Mvcc).unwrap();
    let b = e.begin(Isolation::Snapshot, CcMode::Mvcc).unwrap();
    e.write(a, &acct(), &[ColumnUpdate::add("balance", -100)]).unwrap();
    assert_eq!(e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]), Err(EngineError::WouldBlock));
    assert_eq!(e.state(b), Some(TxnState::Blocked));
    e.commit(a).unwrap();
    assert_eq!(e.state(b), Some(TxnState::Aborted));
    assert_eq!(e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]), Err(EngineError::SerializationConflict));
    assert_eq!(balance(&e), 900);
    e.check_invariants().unwrap();
}

#[test]
fn mvcc_abort_of_first_writer_unblocks_the_second() {
    let mut e = engine(CcMode::Mvcc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    e.read(a, &acct(), "balance").unwrap();
    e.read(b, &acct(), "balance").unwrap();
    e.write(a, &acct(), &[ColumnUpdate::add("balance", -100)]).unwrap();
    assert_eq!(e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]), Err(EngineError::WouldBlock));
    e.abort(a).unwrap();
    assert_eq!(e.state(b), Some(TxnState::Active));
    e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    e.commit(b).unwrap();
    assert_eq!(balance(&e), 800);
}

#[test]
fn mvcc_write_after_concurrent_commit_conflicts() {
    let mut e = engine(CcMode::Mvcc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    e.read(a, &acct(), "balance").unwrap();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    e.commit(b).unwrap();
    assert_eq!(e.write(a, &acct(), &[ColumnUpdate::set("balance", 900)]), Err(EngineError::SerializationConflict));
    assert_eq!(e.transaction(a).unwrap().abort_cause, Some(AbortCause::SerializationConflict));
}

#[test]
fn conditional_write_identity_case() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let seen = e.read(a, &acct(), "balance").unwrap();
    let out = e.conditional_write(a, &acct(), &[ColumnUpdate::set("balance", 900)], &seen.stamp).unwrap();
    assert_eq!(out.affected, 1);
    e.commit(a).unwrap();
    assert_eq!(balance(&e), 900);
}

/// Runs the select-then-update race with a conditional second phase (A1 read, B
/// commits -200, A2 conditional write of 900) and returns (rows affected, final).
fn select_update_conditional(kind: StampKind) -> (u8, i64) {
    let mut e = engine(CcMode::Lscc, kind);
    let a1 = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let seen = e.read(a1, &acct(), "balance").unwrap();
    e.commit(a1).unwrap();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    e.commit(b).unwrap();
    let a2 = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let out = e.conditional_write(a2, &acct(), &[ColumnUpdate::set("balance", seen.value - 100)], &seen.stamp).unwrap();
    e.commit(a2).unwrap();
    assert!(e.lock_table().entry(&acct()).is_none());
    (out.affected, balance(&e))
}

#[test]
fn conditional_write_detects_intervening_commit() {
    assert_eq!(select_update_conditional(StampKind::Counter), (0, 800));
    assert_eq!(select_update_conditional(StampKind::CommitScn), (0, 800));
    assert_eq!(select_update_conditional(StampKind::RowVersion), (0, 800));
}

#[test]
fn coarse_timestamp_collision_accepts_a_stale_write() {
    // oracle: the counter-stamped replay of the identical schedule rejects it
    assert_eq!(select_update_conditional(StampKind::Counter), (0, 800));
    assert_eq!(select_update_conditional(StampKind::CoarseTimestamp), (1, 900));
}

#[test]
fn coarse_timestamp_with_a_tick_still_detects() {
    let mut e = engine(CcMode::Lscc, StampKind::CoarseTimestamp);
    let a1 = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let seen = e.read(a1, &acct(), "balance").unwrap();
    e.commit(a1).unwrap();
    e.tick();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    e.commit(b).unwrap();
    let a2 = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let out = e.conditional_write(a2, &acct(), &[ColumnUpdate::set("balance", 900)], &seen.stamp).unwrap();
    assert_eq!(out.affected, 0);
}

#[test]
fn coarse_resolution_groups_ticks() {
    let store = Store::new().with_row(acct(), StampKind::CoarseTimestamp, [("balance", 0)]);
    let mut e =
        Engine::new(EngineConfig::new(CcMode::Lscc, StampKind::CoarseTimestamp).with_resolution(4), store).unwrap();
    let mut stamps = Vec::new();
    for _ in 0..6 {
        let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
        e.write(t, &acct(), &[ColumnUpdate::add("balance", 1)]).unwrap();
        stamps.push(e.commit(t).unwrap().written[0].stamp.value().unwrap());
        e.tick();
    }
    assert_eq!(stamps, vec![0, 0, 0, 0, 4, 4]);
}

#[test]
fn failed_conditional_write_releases_its_lock() {
    let mut e = engine(CcMode::Mvcc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    let stale = VersionStamp::new(StampKind::Counter, 7);
    let out = e.conditional_write(a, &acct(), &[ColumnUpdate::set("balance", 1)], &stale).unwrap();
    assert_eq!(out.affected, 0);
    let b = e.begin(Isolation::ReadCommitted, CcMode::Mvcc).unwrap();
    e.write(b, &acct(), &[ColumnUpdate::add("balance", 1)]).unwrap();
    e.commit(b).unwrap();
    e.commit(a).unwrap();
    assert_eq!(balance(&e), 1001);
}

#[test]
fn commit_scn_own_pending_write_makes_condition_fail() {
    let mut e = engine(CcMode::Lscc, StampKind::CommitScn);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let seen = e.read(a, &acct(), "balance").unwrap();
    e.write(a, &acct(), &[ColumnUpdate::add("balance", -1)]).unwrap();
    let out = e.conditional_write(a, &acct(), &[ColumnUpdate::set("balance", 5)], &seen.stamp).unwrap();
    assert_eq!(out.affected, 0);
    assert!(out.current.is_indeterminate());
    // the earlier write stays buffered
    e.commit(a).unwrap();
    assert_eq!(balance(&e), 999);
}

#[test]
fn empty_commit_changes_no_stamps() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    e.read(a, &acct(), "balance").unwrap();
    let r = e.commit(a).unwrap();
    assert!(r.written.is_empty());
    assert_eq!(e.state(a), Some(TxnState::Committed));
    assert_eq!(e.stamp_history(&acct()).len(), 1);
    assert!(e.lock_table().entry(&acct()).is_none());
}

#[test]
fn commit_scn_sequence_increases() {
    let mut e = engine(CcMode::Lscc, StampKind::CommitScn);
    let mut seqs = Vec::new();
    for _ in 0..2 {
        let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
        e.write(t, &acct(), &[ColumnUpdate::add("balance", 1)]).unwrap();
        let r = e.commit(t).unwrap();
        assert_eq!(r.written[0].stamp.value(), Some(r.commit_seq));
        seqs.push(r.commit_seq);
    }
    assert!(seqs[0] < seqs[1]);
}

#[test]
fn abort_discards_buffered_writes() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(a, &acct(), &[ColumnUpdate::set("balance", 1)]).unwrap();
    e.abort(a).unwrap();
    assert_eq!(balance(&e), 1000);
    assert_eq!(e.committed_row(&acct()).unwrap().stamp.value(), Some(0));
    assert!(matches!(e.commit(a), Err(EngineError::TxnNotActive { .. })));
    assert!(matches!(e.abort(a), Err(EngineError::TxnNotActive { .. })));
}

#[test]
fn abort_of_blocked_transaction_clears_its_wait() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(a, &acct(), &[ColumnUpdate::add("balance", 1)]).unwrap();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    assert!(matches!(e.read(b, &acct(), "balance"), Err(EngineError::WouldBlock)));
    assert_eq!(e.state(b), Some(TxnState::Blocked));
    assert!(!e.wait_for_graph().is_empty());
    assert_eq!(e.commit(b).unwrap_err(), EngineError::TxnBlocked(b));
    e.abort(b).unwrap();
    assert!(e.wait_for_graph().values().all(BTreeSet::is_empty));
    assert_eq!(e.lock_table().queued_requests(b), 0);
    e.check_invariants().unwrap();
}

#[test]
fn no_waits_no_deadlock() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let _a = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    assert_eq!(e.detect_deadlock(), None);
}

/// Hand-computed wait-for graph for the select-then-update race under REPEATABLE_READ: A and B both
/// hold S(x) from their reads; B's update waits for X(x) on A's S(x), and A's
/// upgrade then waits on B's S(x). Expected graph {A -> B, B -> A}; the youngest
/// (B) is the victim.
#[test]
fn select_update_deadlock_under_rr() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    let seen = e.read(a, &acct(), "balance").unwrap();
    let b = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    e.read(b, &acct(), "balance").unwrap();
    assert_eq!(e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap_err(), EngineError::WouldBlock);
    assert_eq!(e.detect_deadlock(), None);
    assert_eq!(
        e.write(a, &acct(), &[ColumnUpdate::set("balance", seen.value - 100)]).unwrap_err(),
        EngineError::WouldBlock
    );
    let expected = BTreeMap::from([(a, BTreeSet::from([b])), (b, BTreeSet::from([a]))]);
    assert_eq!(e.wait_for_graph(), expected);
    assert_eq!(e.detect_deadlock(), Some(b));
    assert!(!e.has_deadlock());
    assert_eq!(e.state(a), Some(TxnState::Active));
    assert_eq!(e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap_err(), EngineError::DeadlockVictim);
    e.write(a, &acct(), &[ColumnUpdate::set("balance", seen.value - 100)]).unwrap();
    e.commit(a).unwrap();
    assert_eq!(balance(&e), 900);
    e.check_invariants().unwrap();
}

#[test]
fn rowversion_update_lock_deadlock() {
    let mut e = engine(CcMode::Lscc, StampKind::RowVersion);
    let a = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    let b = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
    e.read(a, &acct(), "balance").unwrap();
    e.read(b, &acct(), "balance").unwrap();
    // A gets U next to B's S, then waits to convert to X
    assert_eq!(e.write(a, &acct(), &[ColumnUpdate::add("balance", -100)]).unwrap_err(), EngineError::WouldBlock);
    assert_eq!(e.lock_table().held(a, &acct()), Some(LockMode::Update));
    e.check_invariants().unwrap();
    // B's U request conflicts with A's U
    assert_eq!(e.write(b, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap_err(), EngineError::WouldBlock);
    e.check_invariants().unwrap();
    assert_eq!(e.detect_deadlock(), Some(b));
    e.write(a, &acct(), &[ColumnUpdate::add("balance", -100)]).unwrap();
    let r = e.commit(a).unwrap();
    assert_eq!(r.written[0].stamp.value(), Some(1));
    assert_eq!(balance(&e), 900);
    e.check_invariants().unwrap();
}

#[test]
fn validate_checks_stamps_and_foreign_writers() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    let b = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.read(a, &acct(), "balance").unwrap();
    e.read(b, &acct(), "balance").unwrap();
    assert!(e.validate(a).unwrap());
    e.write(a, &acct(), &[ColumnUpdate::add("balance", 1)]).unwrap();
    assert!(!e.validate(b).unwrap(), "pending write by a validated transaction");
    e.commit(a).unwrap();
    assert!(!e.validate(b).unwrap(), "stamp moved");
}

#[test]
fn store_dump_reflects_commits() {
    let mut e = engine(CcMode::Lscc, StampKind::Counter);
    let a = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
    e.write(a, &acct(), &[ColumnUpdate::add("balance", -200)]).unwrap();
    e.commit(a).unwrap();
    assert_eq!(e.store().dump(), "Accounts|101|balance=800|counter:1\n");
    let reloaded = Store::load(&e.store().dump()).unwrap();
    assert_eq!(reloaded, e.store());
}
