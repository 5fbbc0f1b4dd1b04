//! The transactional row store.
//!
//! [`Engine`] is a sequential state machine. Every call either completes, reports
//! [`EngineError::WouldBlock`] (the transaction is parked in a wait queue and the
//! caller re-issues the call once the transaction is ACTIVE again), or fails.
//! Nothing ever suspends the caller.
//!
//! Under [`CcMode::Lscc`] reads take S locks (released at statement end under
//! READ_COMMITTED, held otherwise) and writes take S, or U under rowversion
//! stamping, before converting to X. Under [`CcMode::Mvcc`] reads see committed
//! versions without locking and writers serialize on per-row write intents: a
//! writer queued behind an intent aborts when the holder commits and proceeds when
//! it aborts. A write to a row committed by a concurrent transaction fails with
//! [`EngineError::SerializationConflict`].

mod error;
mod lock;
mod stamp;
mod store;
mod txn;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

pub use error::EngineError;
pub use lock::{Acquire, LockEntry, LockMode, LockRequest, LockTable};
pub use stamp::{normalize_stamp, StampKind, VersionStamp};
pub use store::{Row, RowKey, SnapshotError, Store};
pub use txn::{AbortCause, CcMode, Isolation, Transaction, TxnId, TxnState};

/// Deadlock victim selection. Only one rule exists: abort the youngest cycle member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VictimRule {
    #[default]
    Youngest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub cc_mode: CcMode,
    pub stamping: StampKind,
    /// Coarse-timestamp stamps are the clock truncated to a multiple of this.
    pub clock_resolution: u64,
    pub victim_rule: VictimRule,
}

impl EngineConfig {
    pub fn new(cc_mode: CcMode, stamping: StampKind) -> Self {
        Self { cc_mode, stamping, clock_resolution: 1, victim_rule: VictimRule::Youngest }
    }

    pub fn with_resolution(mut self, ticks: u64) -> Self {
        self.clock_resolution = ticks;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.clock_resolution == 0 {
            return Err(EngineError::InvalidConfig("clock resolution must be at least 1 tick".into()));
        }
        Ok(())
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::new(CcMode::Lscc, StampKind::Counter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnOp {
    /// `SET col = v`
    Set(i64),
    /// `SET col = col + d`, evaluated against the current value.
    Add(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnUpdate {
    pub column: String,
    pub op: ColumnOp,
}

impl ColumnUpdate {
    pub fn set(column: impl Into<String>, value: i64) -> Self {
        Self { column: column.into(), op: ColumnOp::Set(value) }
    }

    pub fn add(column: impl Into<String>, delta: i64) -> Self {
        Self { column: column.into(), op: ColumnOp::Add(delta) }
    }
}

#[derive(Debug, Clone)]
pub struct ReadResult {
    pub value: i64,
    pub stamp: VersionStamp,
    /// Ordinal of the committed version read: the number of committed writes to the
    /// row before it. Independent of the stamping strategy.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteTicket {
    pub key: RowKey,
    /// Pending column values after this write.
    pub values: BTreeMap<String, i64>,
    /// Ordinal of the committed version the update was evaluated against.
    pub basis_version: u64,
}

#[derive(Debug, Clone)]
pub struct CondWriteOutcome {
    pub affected: u8,
    /// Stamp the expectation was compared against.
    pub current: VersionStamp,
    pub ticket: Option<WriteTicket>,
}

#[derive(Debug, Clone)]
pub struct WrittenRow {
    pub key: RowKey,
    pub version: u64,
    pub stamp: VersionStamp,
}

#[derive(Debug, Clone)]
pub struct CommitReceipt {
    pub commit_seq: u64,
    pub written: Vec<WrittenRow>,
}

#[derive(Debug, Clone)]
struct Version {
    commit_seq: u64,
    ordinal: u64,
    columns: BTreeMap<String, i64>,
    stamp: VersionStamp,
}

#[derive(Debug, Clone, Default)]
struct Intent {
    holder: Option<TxnId>,
    waiters: VecDeque<TxnId>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    rows: BTreeMap<RowKey, Vec<Version>>,
    txns: BTreeMap<TxnId, Transaction>,
    locks: LockTable,
    intents: BTreeMap<RowKey, Intent>,
    commit_seq: u64,
    next_txn: u64,
    clock: u64,
    rowversion: u64,
}

impl Engine {
    pub fn new(config: EngineConfig, store: Store) -> Result<Self, EngineError> {
        config.validate()?;
        let mut rows = BTreeMap::new();
        let mut max_stamp = 0;
        for row in store.rows() {
            if row.stamp.kind() != config.stamping {
                return Err(EngineError::StampKindMismatch {
                    key: row.key.clone(),
                    expected: config.stamping,
                    found: row.stamp.kind(),
                });
            }
            if row.columns.is_empty() {
                return Err(EngineError::InvalidConfig(format!("row {} has no columns", row.key)));
            }
            max_stamp = max_stamp.max(row.stamp.value().unwrap_or(0));
            rows.insert(
                row.key.clone(),
                vec![Version { commit_seq: 0, ordinal: 0, columns: row.columns.clone(), stamp: row.stamp }],
            );
        }
        // Stamp sources start past every loaded stamp so new stamps keep increasing.
        let (commit_seq, clock, rowversion) = match config.stamping {
            StampKind::CommitScn => (max_stamp, 0, 0),
            StampKind::CoarseTimestamp => (0, max_stamp, 0),
            StampKind::RowVersion => (0, 0, max_stamp),
            StampKind::Counter => (0, 0, 0),
        };
        Ok(Self {
            config,
            rows,
            txns: BTreeMap::new(),
            locks: LockTable::default(),
            intents: BTreeMap::new(),
            commit_seq,
            next_txn: 0,
            clock,
            rowversion,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn commit_seq(&self) -> u64 {
        self.commit_seq
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Advances the logical clock behind coarse timestamps by one tick.
    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn transaction(&self, txn: TxnId) -> Option<&Transaction> {
        self.txns.get(&txn)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.txns.values()
    }

    pub fn state(&self, txn: TxnId) -> Option<TxnState> {
        self.txns.get(&txn).map(|t| t.state)
    }

    pub fn lock_table(&self) -> &LockTable {
        &self.locks
    }

    /// Latest committed version of a row.
    pub fn committed_row(&self, key: &RowKey) -> Option<Row> {
        let latest = self.rows.get(key)?.last()?;
        Some(Row::new(key.clone(), latest.columns.clone(), latest.stamp))
    }

    pub fn committed_value(&self, key: &RowKey, column: &str) -> Option<i64> {
        self.rows.get(key)?.last()?.columns.get(column).copied()
    }

    /// Committed stamps of a row, oldest first.
    pub fn stamp_history(&self, key: &RowKey) -> Vec<VersionStamp> {
        self.rows.get(key).map(|v| v.iter().map(|v| v.stamp).collect()).unwrap_or_default()
    }

    /// Snapshot of the latest committed state.
    pub fn store(&self) -> Store {
        let mut store = Store::new();
        for key in self.rows.keys() {
            if let Some(row) = self.committed_row(key) {
                store.insert(row);
            }
        }
        store
    }

    pub fn begin(&mut self, isolation: Isolation, mode: CcMode) -> Result<TxnId, EngineError> {
        if mode != self.config.cc_mode {
            return Err(EngineError::ModeMismatch { requested: mode, configured: self.config.cc_mode });
        }
        if !isolation.valid_for(mode) {
            return Err(EngineError::InvalidIsolationForMode { isolation, mode });
        }
        self.next_txn += 1;
        let id = TxnId(self.next_txn);
        self.txns.insert(
            id,
            Transaction {
                id,
                mode,
                isolation,
                state: TxnState::Active,
                read_set: BTreeMap::new(),
                write_set: BTreeMap::new(),
                start_seq: self.next_txn,
                begin_commit_seq: self.commit_seq,
                abort_cause: None,
                waiting_on: None,
            },
        );
        Ok(id)
    }

    pub fn read(&mut self, txn: TxnId, key: &RowKey, column: &str) -> Result<ReadResult, EngineError> {
        self.statement_allowed(txn)?;
        self.check_column(key, column)?;
        let (isolation, mode, snapshot) = {
            let t = &self.txns[&txn];
            (t.isolation, t.mode, t.snapshot_seq())
        };
        let own = self.txns[&txn].write_set.get(key).and_then(|w| w.get(column)).copied();

        let result = match mode {
            CcMode::Lscc => {
                let held_before = self.locks.held(txn, key);
                self.lock(txn, key, LockMode::Shared)?;
                let latest = self.latest(key);
                let result = ReadResult {
                    value: own.unwrap_or(latest.columns[column]),
                    stamp: latest.stamp,
                    version: latest.ordinal,
                };
                if !isolation.holds_read_locks() && held_before.is_none() {
                    let woken = self.locks.downgrade(txn, key, None);
                    self.wake(woken);
                }
                result
            }
            CcMode::Mvcc => {
                let visible = match (isolation, snapshot) {
                    (Isolation::Snapshot, Some(seq)) => self.visible_at(key, seq),
                    _ => self.latest(key),
                };
                let locked_by_other = self.intents.get(key).and_then(|i| i.holder).is_some_and(|h| h != txn);
                let stamp = if locked_by_other && self.config.stamping == StampKind::CommitScn {
                    VersionStamp::indeterminate(StampKind::CommitScn)
                } else {
                    visible.stamp
                };
                ReadResult { value: own.unwrap_or(visible.columns[column]), stamp, version: visible.ordinal }
            }
        };
        if own.is_none() {
            self.txns.get_mut(&txn).unwrap().read_set.entry(key.clone()).or_insert(result.stamp);
        }
        Ok(result)
    }

    pub fn write(&mut self, txn: TxnId, key: &RowKey, updates: &[ColumnUpdate]) -> Result<WriteTicket, EngineError> {
        self.statement_allowed(txn)?;
        self.check_updates(key, updates)?;
        self.acquire_for_write(txn, key)?;
        self.buffer_write(txn, key, updates)
    }

    /// Writes only when the row's current committed stamp equals `expected`;
    /// returns the number of rows affected (0 or 1).
    pub fn conditional_write(
        &mut self,
        txn: TxnId,
        key: &RowKey,
        updates: &[ColumnUpdate],
        expected: &VersionStamp,
    ) -> Result<CondWriteOutcome, EngineError> {
        self.statement_allowed(txn)?;
        self.check_updates(key, updates)?;
        let held_before = self.locks.held(txn, key);
        let had_intent = self.intent_holder(key) == Some(txn);
        let own_pending = self.txns[&txn].write_set.contains_key(key);
        self.acquire_for_write(txn, key)?;

        let current = if own_pending && self.config.stamping == StampKind::CommitScn {
            VersionStamp::indeterminate(StampKind::CommitScn)
        } else {
            self.latest(key).stamp
        };
        self.txns.get_mut(&txn).unwrap().read_set.entry(key.clone()).or_insert(current);
        if current == *expected {
            let ticket = self.buffer_write(txn, key, updates)?;
            return Ok(CondWriteOutcome { affected: 1, current, ticket: Some(ticket) });
        }
        match self.config.cc_mode {
            CcMode::Lscc => {
                let woken = self.locks.downgrade(txn, key, held_before);
                self.wake(woken);
            }
            CcMode::Mvcc if !had_intent => self.release_intent(txn, key),
            CcMode::Mvcc => {}
        }
        Ok(CondWriteOutcome { affected: 0, current, ticket: None })
    }

    /// Backward validation: every read-set stamp is still the current committed
    /// stamp and no other transaction holds a pending write on those rows.
    pub fn validate(&self, txn: TxnId) -> Result<bool, EngineError> {
        let t = self.txns.get(&txn).ok_or(EngineError::UnknownTransaction(txn))?;
        match t.state {
            TxnState::Active => {}
            TxnState::Blocked => return Err(EngineError::TxnBlocked(txn)),
            state => return Err(EngineError::TxnNotActive { txn, state }),
        }
        for (key, seen) in &t.read_set {
            if self.latest(key).stamp != *seen {
                return Ok(false);
            }
            let foreign_writer = match self.config.cc_mode {
                CcMode::Lscc => self.locks.holders(key).any(|(h, m)| h != txn && m == LockMode::Exclusive),
                CcMode::Mvcc => self.intent_holder(key).is_some_and(|h| h != txn),
            };
            if foreign_writer {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn commit(&mut self, txn: TxnId) -> Result<CommitReceipt, EngineError> {
        let t = self.txns.get(&txn).ok_or(EngineError::UnknownTransaction(txn))?;
        match t.state {
            TxnState::Active => {}
            TxnState::Blocked => return Err(EngineError::TxnBlocked(txn)),
            _ => return Err(self.terminal_error(txn)),
        }
        self.commit_seq += 1;
        let seq = self.commit_seq;
        let writes = std::mem::take(&mut self.txns.get_mut(&txn).unwrap().write_set);
        let mut written = Vec::with_capacity(writes.len());
        for (key, values) in writes {
            let stamp = self.next_stamp(&key, seq);
            let versions = self.rows.get_mut(&key).expect("written row exists");
            let latest = versions.last().expect("row has a version");
            let mut columns = latest.columns.clone();
            columns.extend(values);
            let ordinal = latest.ordinal + 1;
            versions.push(Version { commit_seq: seq, ordinal, columns, stamp });
            written.push(WrittenRow { key, version: ordinal, stamp });
        }
        self.txns.get_mut(&txn).unwrap().state = TxnState::Committed;
        self.release(txn, true);
        Ok(CommitReceipt { commit_seq: seq, written })
    }

    pub fn abort(&mut self, txn: TxnId) -> Result<(), EngineError> {
        let t = self.txns.get(&txn).ok_or(EngineError::UnknownTransaction(txn))?;
        if t.state.is_terminal() {
            return Err(EngineError::TxnNotActive { txn, state: t.state });
        }
        self.abort_with(txn, AbortCause::Requested);
        Ok(())
    }

    /// Current wait-for graph: edges from each waiting transaction to the
    /// transactions it waits on.
    pub fn wait_for_graph(&self) -> BTreeMap<TxnId, BTreeSet<TxnId>> {
        let mut graph = self.locks.wait_for_edges();
        for intent in self.intents.values() {
            if let Some(holder) = intent.holder {
                for w in &intent.waiters {
                    graph.entry(*w).or_default().insert(holder);
                }
            }
        }
        graph
    }

    /// Finds a wait-for cycle, if any, and aborts its youngest member.
    pub fn detect_deadlock(&mut self) -> Option<TxnId> {
        let cycle = find_cycle(&self.wait_for_graph())?;
        let victim = match self.config.victim_rule {
            VictimRule::Youngest => *cycle.iter().max_by_key(|t| self.txns[*t].start_seq)?,
        };
        self.abort_with(victim, AbortCause::DeadlockVictim);
        Some(victim)
    }

    pub fn has_deadlock(&self) -> bool {
        find_cycle(&self.wait_for_graph()).is_some()
    }

    /// Lock safety plus wait-queue bookkeeping.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.locks.verify()?;
        for (key, intent) in &self.intents {
            if let Some(h) = intent.holder {
                if intent.waiters.contains(&h) {
                    return Err(format!("{key}: intent holder {h} also waits"));
                }
            }
        }
        for t in self.txns.values() {
            let queued =
                self.locks.queued_requests(t.id) + self.intents.values().filter(|i| i.waiters.contains(&t.id)).count();
            let expected = usize::from(t.state == TxnState::Blocked);
            if queued != expected {
                return Err(format!("{} is {} but sits in {queued} wait queues", t.id, t.state));
            }
        }
        Ok(())
    }

    // ---- internals ----

    fn latest(&self, key: &RowKey) -> &Version {
        self.rows[key].last().expect("row has a version")
    }

    fn visible_at(&self, key: &RowKey, seq: u64) -> &Version {
        let versions = &self.rows[key];
        versions.iter().rev().find(|v| v.commit_seq <= seq).unwrap_or(&versions[0])
    }

    fn intent_holder(&self, key: &RowKey) -> Option<TxnId> {
        self.intents.get(key).and_then(|i| i.holder)
    }

    fn next_stamp(&mut self, key: &RowKey, seq: u64) -> VersionStamp {
        let kind = self.config.stamping;
        let value = match kind {
            StampKind::Counter => self.latest(key).stamp.value().unwrap_or(0) + 1,
            StampKind::CoarseTimestamp => {
                let res = self.config.clock_resolution;
                self.clock - self.clock % res
            }
            StampKind::CommitScn => seq,
            StampKind::RowVersion => {
                self.rowversion += 1;
                self.rowversion
            }
        };
        VersionStamp::new(kind, value)
    }

    fn terminal_error(&self, txn: TxnId) -> EngineError {
        let t = &self.txns[&txn];
        match t.abort_cause {
            Some(AbortCause::DeadlockVictim) => EngineError::DeadlockVictim,
            Some(AbortCause::SerializationConflict) => EngineError::SerializationConflict,
            _ => EngineError::TxnNotActive { txn, state: t.state },
        }
    }

    /// Gate for read/write statements. A BLOCKED transaction re-issuing its call
    /// keeps waiting.
    fn statement_allowed(&self, txn: TxnId) -> Result<(), EngineError> {
        let t = self.txns.get(&txn).ok_or(EngineError::UnknownTransaction(txn))?;
        match t.state {
            TxnState::Active => Ok(()),
            TxnState::Blocked => Err(EngineError::WouldBlock),
            _ => Err(self.terminal_error(txn)),
        }
    }

    fn check_column(&self, key: &RowKey, column: &str) -> Result<(), EngineError> {
        let versions = self.rows.get(key).ok_or_else(|| EngineError::RowNotFound(key.clone()))?;
        if !versions[0].columns.contains_key(column) {
            return Err(EngineError::UnknownColumn { key: key.clone(), column: column.into() });
        }
        Ok(())
    }

    fn check_updates(&self, key: &RowKey, updates: &[ColumnUpdate]) -> Result<(), EngineError> {
        if !self.rows.contains_key(key) {
            return Err(EngineError::RowNotFound(key.clone()));
        }
        if updates.is_empty() {
            return Err(EngineError::EmptyUpdate(key.clone()));
        }
        updates.iter().try_for_each(|u| self.check_column(key, &u.column))
    }

    fn lock(&mut self, txn: TxnId, key: &RowKey, mode: LockMode) -> Result<(), EngineError> {
        match self.locks.acquire(txn, key, mode) {
            Acquire::Granted => Ok(()),
            Acquire::Queued => {
                self.park(txn, key);
                Err(EngineError::WouldBlock)
            }
        }
    }

    fn park(&mut self, txn: TxnId, key: &RowKey) {
        let t = self.txns.get_mut(&txn).unwrap();
        t.state = TxnState::Blocked;
        t.waiting_on = Some(key.clone());
    }

    fn acquire_for_write(&mut self, txn: TxnId, key: &RowKey) -> Result<(), EngineError> {
        match self.config.cc_mode {
            CcMode::Lscc => {
                // The rowversion variant announces the write with U before converting.
                if self.config.stamping.uses_update_lock() {
                    self.lock(txn, key, LockMode::Update)?;
                }
                self.lock(txn, key, LockMode::Exclusive)
            }
            CcMode::Mvcc => {
                let t = &self.txns[&txn];
                if self.latest(key).commit_seq > t.begin_commit_seq {
                    self.abort_with(txn, AbortCause::SerializationConflict);
                    return Err(EngineError::SerializationConflict);
                }
                let intent = self.intents.entry(key.clone()).or_default();
                match intent.holder {
                    None => {
                        intent.holder = Some(txn);
                        Ok(())
                    }
                    Some(h) if h == txn => Ok(()),
                    Some(_) => {
                        intent.waiters.push_back(txn);
                        self.park(txn, key);
                        Err(EngineError::WouldBlock)
                    }
                }
            }
        }
    }

    fn buffer_write(&mut self, txn: TxnId, key: &RowKey, updates: &[ColumnUpdate]) -> Result<WriteTicket, EngineError> {
        let latest = self.latest(key);
        let basis_version = latest.ordinal;
        let mut values: BTreeMap<String, i64> = self.txns[&txn].write_set.get(key).cloned().unwrap_or_default();
        for u in updates {
            let current = values.get(&u.column).copied().unwrap_or(latest.columns[&u.column]);
            let next = match u.op {
                ColumnOp::Set(v) => v,
                ColumnOp::Add(d) => current
                    .checked_add(d)
                    .ok_or_else(|| EngineError::Overflow { key: key.clone(), column: u.column.clone() })?,
            };
            values.insert(u.column.clone(), next);
        }
        self.txns.get_mut(&txn).unwrap().write_set.insert(key.clone(), values.clone());
        Ok(WriteTicket { key: key.clone(), values, basis_version })
    }

    fn wake(&mut self, woken: Vec<TxnId>) {
        for id in woken {
            if let Some(t) = self.txns.get_mut(&id) {
                if t.state == TxnState::Blocked {
                    t.state = TxnState::Active;
                    t.waiting_on = None;
                }
            }
        }
    }

    fn release_intent(&mut self, txn: TxnId, key: &RowKey) {
        let mut woken = Vec::new();
        if let Some(intent) = self.intents.get_mut(key) {
            if intent.holder == Some(txn) {
                intent.holder = intent.waiters.pop_front();
                woken.extend(intent.holder);
            }
            if intent.holder.is_none() && intent.waiters.is_empty() {
                self.intents.remove(key);
            }
        }
        self.wake(woken);
    }

    /// Drops every lock, intent and queue entry of `txn`.
    fn release(&mut self, txn: TxnId, committed: bool) {
        let woken = self.locks.release_all(txn);
        self.wake(woken);

        let keys: Vec<RowKey> = self.intents.keys().cloned().collect();
        for key in keys {
            let Some(intent) = self.intents.get_mut(&key) else { continue };
            intent.waiters.retain(|w| *w != txn);
            if intent.holder == Some(txn) {
                if committed {
                    // First writer won: everyone queued behind it loses.
                    let losers: Vec<TxnId> = intent.waiters.drain(..).collect();
                    intent.holder = None;
                    self.intents.remove(&key);
                    for loser in losers {
                        self.abort_with(loser, AbortCause::SerializationConflict);
                    }
                } else {
                    self.release_intent(txn, &key);
                }
            } else if intent.holder.is_none() && intent.waiters.is_empty() {
                self.intents.remove(&key);
            }
        }
    }

    fn abort_with(&mut self, txn: TxnId, cause: AbortCause) {
        let Some(t) = self.txns.get_mut(&txn) else { return };
        if t.state.is_terminal() {
            return;
        }
        t.state = TxnState::Aborted;
        t.abort_cause = Some(cause);
        t.write_set.clear();
        t.waiting_on = None;
        self.release(txn, false);
    }
}

/// Returns the members of some cycle in `graph`, found deterministically.
fn find_cycle(graph: &BTreeMap<TxnId, BTreeSet<TxnId>>) -> Option<Vec<TxnId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    fn visit(
        node: TxnId,
        graph: &BTreeMap<TxnId, BTreeSet<TxnId>>,
        marks: &mut BTreeMap<TxnId, Mark>,
        path: &mut Vec<TxnId>,
    ) -> Option<Vec<TxnId>> {
        marks.insert(node, Mark::Open);
        path.push(node);
        for next in graph.get(&node).into_iter().flatten() {
            match marks.get(next) {
                Some(Mark::Open) => {
                    let start = path.iter().position(|n| n == next).unwrap();
                    return Some(path[start..].to_vec());
                }
                Some(Mark::Done) => {}
                None => {
                    if let Some(c) = visit(*next, graph, marks, path) {
                        return Some(c);
                    }
                }
            }
        }
        path.pop();
        marks.insert(node, Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    for node in graph.keys() {
        if !marks.contains_key(node) {
            if let Some(c) = visit(*node, graph, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Serializes calls from several threads onto one engine.
#[derive(Debug, Clone)]
pub struct SharedEngine {
    inner: Arc<Mutex<Engine>>,
}

impl SharedEngine {
    pub fn new(engine: Engine) -> Self {
        Self { inner: Arc::new(Mutex::new(engine)) }
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut Engine) -> R) -> R {
        let mut guard = self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        f(&mut guard)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acct() -> RowKey {
        RowKey::new("Accounts", "101")
    }

    fn engine(mode: CcMode, kind: StampKind) -> Engine {
        let store = Store::new().with_row(acct(), kind, [("balance", 1000)]);
        Engine::new(EngineConfig::new(mode, kind), store).unwrap()
    }

    #[test]
    fn cycle_finder() {
        let g = BTreeMap::from([
            (TxnId(1), BTreeSet::from([TxnId(2)])),
            (TxnId(2), BTreeSet::from([TxnId(3)])),
            (TxnId(3), BTreeSet::from([TxnId(1)])),
        ]);
        let mut c = find_cycle(&g).unwrap();
        c.sort();
        assert_eq!(c, vec![TxnId(1), TxnId(2), TxnId(3)]);
        let g = BTreeMap::from([(TxnId(1), BTreeSet::from([TxnId(2)]))]);
        assert!(find_cycle(&g).is_none());
    }

    #[test]
    fn stamp_sources_start_past_loaded_stamps() {
        let store = Store::load("t|a|v=1|scn:41\n").unwrap();
        let mut e = Engine::new(EngineConfig::new(CcMode::Lscc, StampKind::CommitScn), store).unwrap();
        let key = RowKey::new("t", "a");
        let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
        e.write(t, &key, &[ColumnUpdate::add("v", 1)]).unwrap();
        let r = e.commit(t).unwrap();
        assert_eq!(r.commit_seq, 42);
        assert_eq!(r.written[0].stamp.value(), Some(42));
    }

    #[test]
    fn zero_resolution_is_rejected() {
        let cfg = EngineConfig::new(CcMode::Lscc, StampKind::CoarseTimestamp).with_resolution(0);
        assert!(matches!(Engine::new(cfg, Store::new()), Err(EngineError::InvalidConfig(_))));
    }

    #[test]
    fn stamp_kind_must_match() {
        let store = Store::new().with_row(acct(), StampKind::Counter, [("balance", 1)]);
        let err = Engine::new(EngineConfig::new(CcMode::Lscc, StampKind::CommitScn), store).unwrap_err();
        assert!(matches!(err, EngineError::StampKindMismatch { .. }));
    }

    #[test]
    fn unknown_column_is_an_error() {
        let mut e = engine(CcMode::Lscc, StampKind::Counter);
        let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
        assert!(matches!(e.read(t, &acct(), "owner"), Err(EngineError::UnknownColumn { .. })));
        assert!(matches!(
            e.write(t, &acct(), &[ColumnUpdate::set("owner", 1)]),
            Err(EngineError::UnknownColumn { .. })
        ));
        assert!(matches!(e.write(t, &acct(), &[]), Err(EngineError::EmptyUpdate(_))));
    }

    #[test]
    fn overflow_is_reported() {
        let mut e = engine(CcMode::Lscc, StampKind::Counter);
        let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
        assert!(matches!(
            e.write(t, &acct(), &[ColumnUpdate::add("balance", i64::MAX)]),
            Err(EngineError::Overflow { .. })
        ));
    }

    #[test]
    fn own_writes_are_visible_before_commit() {
        for mode in [CcMode::Lscc, CcMode::Mvcc] {
            let mut e = engine(mode, StampKind::Counter);
            let t = e.begin(Isolation::ReadCommitted, mode).unwrap();
            e.write(t, &acct(), &[ColumnUpdate::add("balance", -1)]).unwrap();
            assert_eq!(e.read(t, &acct(), "balance").unwrap().value, 999);
            assert_eq!(e.committed_value(&acct(), "balance"), Some(1000));
        }
    }

    #[test]
    fn rc_read_releases_its_shared_lock() {
        let mut e = engine(CcMode::Lscc, StampKind::Counter);
        let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
        e.read(t, &acct(), "balance").unwrap();
        assert_eq!(e.lock_table().held(t, &acct()), None);
        let t = e.begin(Isolation::RepeatableRead, CcMode::Lscc).unwrap();
        e.read(t, &acct(), "balance").unwrap();
        assert_eq!(e.lock_table().held(t, &acct()), Some(LockMode::Shared));
    }

    #[test]
    fn shared_facade_serializes_threads() {
        let shared = SharedEngine::new(engine(CcMode::Lscc, StampKind::Counter));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let s = shared.clone();
                std::thread::spawn(move || {
                    for _ in 0..25 {
                        s.with(|e| {
                            let t = e.begin(Isolation::ReadCommitted, CcMode::Lscc).unwrap();
                            e.write(t, &acct(), &[ColumnUpdate::add("balance", -1)]).unwrap();
                            e.commit(t).unwrap();
                        });
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        shared.with(|e| {
            assert_eq!(e.committed_value(&acct(), "balance"), Some(900));
            assert_eq!(e.committed_row(&acct()).unwrap().stamp.value(), Some(100));
        });
    }
}
