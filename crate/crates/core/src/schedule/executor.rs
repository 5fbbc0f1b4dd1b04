//! Step-wise interleaving executor.
//!
//! Each transaction is a [`Program`] that advances one operation per step. A
//! schedule lists which program gets the next slot. A program whose transaction is
//! BLOCKED parks its slots; after every engine state change parked programs are
//! retried in order of their earliest slot, so history order is preserved among
//! runnable operations.

use std::any::Any;
use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::history::{History, Operation, WriteStyle, DEFAULT_DELTA};
use super::trace::{store_digest, ExecutionTrace, StepResult, TraceStep};
use crate::engine::{
    AbortCause, CcMode, ColumnUpdate, Engine, EngineConfig, EngineError, Isolation, ReadResult, RowKey, Store, TxnId,
    TxnState,
};

#[derive(Debug, Clone, Error)]
pub enum ExecError {
    #[error("item `{0}` is not in the store")]
    ItemMissing(String),
    #[error("schedule is stuck: {} blocked with no deadlock cycle", .blocked.join(", "))]
    StuckSchedule { blocked: Vec<String>, trace: Box<ExecutionTrace> },
    #[error("schedule names program {0}, which does not exist")]
    InvalidSchedule(usize),
    #[error("transaction name `{0}` is used twice")]
    DuplicateTxn(String),
    #[error("exhaustive enumeration of {total} slots exceeds the bound of {bound}; set a sampling limit")]
    BoundExceeded { total: usize, bound: usize },
    #[error("invariant violated after step {step}: {message}")]
    Invariant { step: usize, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    /// The program consumed this many schedule slots.
    Advanced(usize),
    /// The current operation is waiting on a lock or write intent.
    Blocked,
}

/// What a program sees while taking one step.
pub struct StepCx<'a> {
    engine: &'a mut Engine,
    names: &'a mut BTreeMap<String, TxnId>,
    items: &'a mut BTreeMap<String, RowKey>,
    records: Vec<(Operation, StepResult, Vec<String>, u64)>,
}

impl StepCx<'_> {
    pub fn engine(&mut self) -> &mut Engine {
        self.engine
    }

    /// Begins a transaction and binds it to `name` for the trace.
    pub fn begin(&mut self, name: &str, isolation: Isolation, mode: CcMode) -> Result<TxnId, ExecError> {
        if self.names.contains_key(name) {
            return Err(ExecError::DuplicateTxn(name.to_string()));
        }
        let id = self.engine.begin(isolation, mode)?;
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    /// Row and column an item name refers to.
    pub fn resolve(&mut self, item: &str) -> Result<(RowKey, String), ExecError> {
        let key = match self.items.get(item) {
            Some(k) => k.clone(),
            None => {
                let key = self
                    .engine
                    .store()
                    .resolve(item)
                    .cloned()
                    .ok_or_else(|| ExecError::ItemMissing(item.to_string()))?;
                self.items.insert(item.to_string(), key.clone());
                key
            }
        };
        let column = primary_column(self.engine, &key).ok_or_else(|| ExecError::ItemMissing(item.to_string()))?;
        Ok((key, column))
    }

    pub fn record(&mut self, op: Operation, result: StepResult) {
        let blocked = blocked_names(self.engine, self.names);
        let digest = store_digest(&self.engine.store());
        self.records.push((op, result, blocked, digest));
    }

    fn item_name(&self, key: &RowKey) -> String {
        item_name(self.items, key)
    }
}

fn blocked_names(engine: &Engine, names: &BTreeMap<String, TxnId>) -> Vec<String> {
    names.iter().filter(|(_, t)| engine.state(**t) == Some(TxnState::Blocked)).map(|(n, _)| n.clone()).collect()
}

fn primary_column(engine: &Engine, key: &RowKey) -> Option<String> {
    Some(engine.committed_row(key)?.primary_column().to_string())
}

fn item_name(items: &BTreeMap<String, RowKey>, key: &RowKey) -> String {
    items.iter().find(|(_, k)| *k == key).map(|(n, _)| n.clone()).unwrap_or_else(|| key.to_string())
}

/// A transaction program driven one step at a time.
pub trait Program {
    fn label(&self) -> &str;
    /// Schedule slots the program needs when nothing blocks.
    fn slots(&self) -> usize;
    fn is_finished(&self) -> bool;
    /// Transaction the next step would act on, if one is open.
    fn current_txn(&self) -> Option<TxnId>;
    fn step(&mut self, cx: &mut StepCx<'_>) -> Result<Progress, ExecError>;
    fn as_any(&self) -> &dyn Any;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Isolation for transactions without a header; READ_COMMITTED when unset.
    pub default_isolation: Option<Isolation>,
    /// Check lock-table invariants after every step.
    pub check_invariants: bool,
}

/// Applies a write operation for a program, recording the attempt. Shared by the
/// history programs and the pattern programs.
pub(crate) fn apply_write(
    cx: &mut StepCx<'_>,
    txn: TxnId,
    op: &Operation,
    update: ColumnUpdate,
    expected: Option<&ReadResult>,
    basis: Option<u64>,
) -> Result<Option<StepResult>, ExecError> {
    let item = op.item().expect("write has an item");
    let (key, column) = cx.resolve(item)?;
    let result = match expected {
        Some(seen) => cx.engine.conditional_write(txn, &key, &[update], &seen.stamp).map(|out| {
            let value = out.ticket.as_ref().map(|t| t.values[&column]);
            StepResult::CondWrote {
                affected: out.affected,
                value,
                basis: out.ticket.as_ref().and(basis),
                current: out.current,
            }
        }),
        None => cx
            .engine
            .write(txn, &key, &[update])
            .map(|t| StepResult::Wrote { value: t.values[&column], basis: basis.or(Some(t.basis_version)) }),
    };
    Ok(match result {
        Ok(r) => {
            cx.record(op.clone(), r.clone());
            Some(r)
        }
        Err(EngineError::WouldBlock) => {
            cx.record(op.clone(), StepResult::Blocked);
            None
        }
        Err(e) => {
            cx.record(op.clone(), StepResult::Failed(e.clone()));
            Some(StepResult::Failed(e))
        }
    })
}

pub(crate) fn apply_commit(cx: &mut StepCx<'_>, txn: TxnId, op: Operation) -> StepResult {
    let result = match cx.engine.commit(txn) {
        Ok(receipt) => StepResult::Committed {
            seq: receipt.commit_seq,
            written: receipt.written.iter().map(|w| (cx.item_name(&w.key), w.version)).collect(),
        },
        Err(e) => StepResult::Failed(e),
    };
    cx.record(op, result.clone());
    result
}

/// Program for one transaction of a parsed history.
#[derive(Debug, Clone)]
pub struct TxnProgram {
    name: String,
    ops: Vec<Operation>,
    cursor: usize,
    isolation: Isolation,
    mode: Option<CcMode>,
    occ: bool,
    delta: i64,
    style: Option<WriteStyle>,
    txn: Option<TxnId>,
    reads: BTreeMap<String, ReadResult>,
    abort_reported: bool,
}

impl TxnProgram {
    pub fn from_history(history: &History, txn: &str, default_isolation: Isolation) -> Self {
        let decl = history.decl(txn);
        let occ = history.is_occ(txn);
        Self {
            name: txn.to_string(),
            ops: history.project(txn),
            cursor: 0,
            // Optimistic transactions read without holding locks.
            isolation: decl.isolation.unwrap_or(if occ { Isolation::ReadCommitted } else { default_isolation }),
            mode: decl.mode,
            occ,
            delta: decl.delta.unwrap_or(DEFAULT_DELTA),
            style: decl.write,
            txn: None,
            reads: BTreeMap::new(),
            abort_reported: false,
        }
    }

    pub fn txn(&self) -> Option<TxnId> {
        self.txn
    }

    fn update_for(
        &self,
        op: &Operation,
        key: &RowKey,
        column: &str,
    ) -> Result<(ColumnUpdate, Option<&ReadResult>, Option<u64>), ExecError> {
        let item = op.item().expect("write has an item");
        let seen = self.reads.get(item);
        let checked_add = |r: &ReadResult| {
            r.value.checked_add(self.delta).ok_or_else(|| {
                ExecError::Engine(EngineError::Overflow { key: key.clone(), column: column.to_string() })
            })
        };
        match op {
            Operation::CondWrite { .. } => {
                let r = seen.expect("well-formed history binds the condition");
                Ok((ColumnUpdate::set(column, checked_add(r)?), Some(r), Some(r.version)))
            }
            _ => {
                let style =
                    self.style.unwrap_or(if seen.is_some() { WriteStyle::Blind } else { WriteStyle::Sensitive });
                match (style, seen) {
                    (WriteStyle::Blind, Some(r)) => {
                        Ok((ColumnUpdate::set(column, checked_add(r)?), None, Some(r.version)))
                    }
                    (WriteStyle::Blind, None) => Ok((ColumnUpdate::set(column, self.delta), None, None)),
                    (WriteStyle::Sensitive, _) => Ok((ColumnUpdate::add(column, self.delta), None, None)),
                }
            }
        }
    }

    /// Runs the operation under the cursor. `None` means it blocked.
    fn run_op(&mut self, cx: &mut StepCx<'_>, txn: TxnId) -> Result<Option<StepResult>, ExecError> {
        let op = self.ops[self.cursor].clone();
        let result = match &op {
            Operation::Read { item, .. } => {
                let (key, column) = cx.resolve(item)?;
                match cx.engine.read(txn, &key, &column) {
                    Ok(r) => {
                        self.reads.insert(item.clone(), r.clone());
                        StepResult::Read { value: r.value, stamp: r.stamp, version: r.version }
                    }
                    Err(EngineError::WouldBlock) => {
                        cx.record(op, StepResult::Blocked);
                        return Ok(None);
                    }
                    Err(e) => StepResult::Failed(e),
                }
            }
            Operation::Write { item, .. } | Operation::CondWrite { item, .. } => {
                let (key, column) = cx.resolve(item)?;
                let (update, expected, basis) = self.update_for(&op, &key, &column)?;
                let expected = expected.cloned();
                let out = apply_write(cx, txn, &op, update, expected.as_ref(), basis)?;
                if out.is_some() {
                    self.cursor += 1;
                }
                return Ok(out);
            }
            Operation::Validate { .. } => match cx.engine.validate(txn) {
                Ok(ok) => StepResult::Validated(ok),
                Err(e) => StepResult::Failed(e),
            },
            Operation::Commit { .. } => {
                self.cursor += 1;
                return Ok(Some(apply_commit(cx, txn, op)));
            }
            Operation::Abort { .. } => match cx.engine.abort(txn) {
                Ok(()) => StepResult::Aborted(AbortCause::Requested),
                Err(e) => StepResult::Failed(e),
            },
            Operation::Tick => StepResult::Ticked(cx.engine.tick()),
        };
        cx.record(op, result.clone());
        self.cursor += 1;
        Ok(Some(result))
    }

    fn finish_occ(&mut self, cx: &mut StepCx<'_>, txn: TxnId) {
        if self.occ && self.cursor == self.ops.len() && cx.engine.state(txn) == Some(TxnState::Active) {
            apply_commit(cx, txn, Operation::commit(&self.name));
        }
    }
}

impl Program for TxnProgram {
    fn label(&self) -> &str {
        &self.name
    }

    fn slots(&self) -> usize {
        self.ops.len()
    }

    fn is_finished(&self) -> bool {
        self.cursor >= self.ops.len()
    }

    fn current_txn(&self) -> Option<TxnId> {
        self.txn
    }

    fn step(&mut self, cx: &mut StepCx<'_>) -> Result<Progress, ExecError> {
        let txn = match self.txn {
            Some(t) => t,
            None => {
                let mode = self.mode.unwrap_or(cx.engine.config().cc_mode);
                match cx.begin(&self.name, self.isolation, mode) {
                    Ok(t) => {
                        self.txn = Some(t);
                        t
                    }
                    Err(ExecError::Engine(e)) => {
                        let op = self.ops[self.cursor].clone();
                        cx.record(op, StepResult::Failed(e));
                        self.cursor = self.ops.len();
                        return Ok(Progress::Advanced(1));
                    }
                    Err(e) => return Err(e),
                }
            }
        };

        if cx.engine.state(txn) == Some(TxnState::Aborted) {
            let op = self.ops[self.cursor].clone();
            let cause = cx.engine.transaction(txn).and_then(|t| t.abort_cause);
            let result = match cause {
                Some(AbortCause::DeadlockVictim) if !self.abort_reported => {
                    StepResult::Failed(EngineError::DeadlockVictim)
                }
                Some(AbortCause::SerializationConflict) if !self.abort_reported => {
                    StepResult::Failed(EngineError::SerializationConflict)
                }
                _ => StepResult::Skipped("txn-aborted"),
            };
            self.abort_reported = true;
            cx.record(op, result);
            self.cursor += 1;
            return Ok(Progress::Advanced(1));
        }

        let is_validate = matches!(self.ops[self.cursor], Operation::Validate { .. });
        let Some(result) = self.run_op(cx, txn)? else {
            return Ok(Progress::Blocked);
        };
        let mut consumed = 1;
        match result {
            StepResult::Validated(false) => {
                // Failed validation forces the abort.
                cx.engine.abort(txn)?;
                cx.record(Operation::abort(&self.name), StepResult::Aborted(AbortCause::Requested));
                self.abort_reported = true;
            }
            StepResult::Validated(true) if self.occ && is_validate => {
                // Validation and the write phase behind it run as one step.
                while self.cursor < self.ops.len()
                    && matches!(self.ops[self.cursor], Operation::Write { .. } | Operation::CondWrite { .. })
                {
                    match self.run_op(cx, txn)? {
                        Some(_) => consumed += 1,
                        None => return Ok(Progress::Advanced(consumed)),
                    }
                }
            }
            _ => {}
        }
        self.finish_occ(cx, txn);
        Ok(Progress::Advanced(consumed))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Advances the coarse-timestamp clock once per slot.
#[derive(Debug, Clone)]
pub struct TickProgram {
    remaining: usize,
    total: usize,
}

impl TickProgram {
    pub fn new(ticks: usize) -> Self {
        Self { remaining: ticks, total: ticks }
    }
}

impl Program for TickProgram {
    fn label(&self) -> &str {
        "tick"
    }

    fn slots(&self) -> usize {
        self.total
    }

    fn is_finished(&self) -> bool {
        self.remaining == 0
    }

    fn current_txn(&self) -> Option<TxnId> {
        None
    }

    fn step(&mut self, cx: &mut StepCx<'_>) -> Result<Progress, ExecError> {
        let clock = cx.engine.tick();
        cx.record(Operation::Tick, StepResult::Ticked(clock));
        self.remaining -= 1;
        Ok(Progress::Advanced(1))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// One program per transaction (plus one for ticks) and the schedule that replays
/// the history's order.
pub fn programs_from_history(history: &History, default_isolation: Isolation) -> (Vec<Box<dyn Program>>, Vec<usize>) {
    let txns = history.txns();
    let index: BTreeMap<&str, usize> = txns.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut programs: Vec<Box<dyn Program>> = txns
        .iter()
        .map(|t| Box::new(TxnProgram::from_history(history, t, default_isolation)) as Box<dyn Program>)
        .collect();
    let ticks = history.ops.iter().filter(|o| matches!(o, Operation::Tick)).count();
    let tick_index = programs.len();
    if ticks > 0 {
        programs.push(Box::new(TickProgram::new(ticks)));
    }
    let schedule = history.ops.iter().map(|o| o.txn().map_or(tick_index, |t| index[t])).collect();
    (programs, schedule)
}

/// Fills in a store for histories run without one: every item becomes a row of
/// table `items` with a single `value` column at 0.
pub fn default_store(history: &History, config: &EngineConfig) -> Store {
    let mut store = Store::new();
    for item in history.items() {
        let (table, id) = item.split_once(':').unwrap_or(("items", &item));
        if let Ok(key) = RowKey::try_new(table, id) {
            if store.get(&key).is_none() {
                store = store.with_row(key, config.stamping, [("value", 0)]);
            }
        }
    }
    store
}

/// Every item exists and every declared mode matches the engine.
pub fn precheck(history: &History, config: &EngineConfig, store: &Store) -> Result<(), ExecError> {
    for item in history.items() {
        if store.resolve(&item).is_none() {
            return Err(ExecError::ItemMissing(item));
        }
    }
    for decl in history.decls.values() {
        if let Some(mode) = decl.mode {
            if mode != config.cc_mode {
                return Err(EngineError::ModeMismatch { requested: mode, configured: config.cc_mode }.into());
            }
        }
    }
    Ok(())
}

/// Runs a well-formed history on a fresh engine.
pub fn execute(
    history: &History,
    config: EngineConfig,
    store: Store,
    options: ExecOptions,
) -> Result<ExecutionTrace, ExecError> {
    precheck(history, &config, &store)?;
    let mut engine = Engine::new(config, store)?;
    let iso = options.default_isolation.unwrap_or(Isolation::ReadCommitted);
    let (mut programs, schedule) = programs_from_history(history, iso);
    run_programs(&mut engine, &mut programs, &schedule, options)
}

/// Drives `programs` on `engine` following `schedule` (a list of program indices).
/// Programs left unfinished when the schedule runs out get further slots in index
/// order until they finish or nothing can move.
pub fn run_programs(
    engine: &mut Engine,
    programs: &mut [Box<dyn Program>],
    schedule: &[usize],
    options: ExecOptions,
) -> Result<ExecutionTrace, ExecError> {
    let mut run = Run {
        engine,
        programs,
        options,
        pending: Vec::new(),
        debt: Vec::new(),
        steps: Vec::new(),
        names: BTreeMap::new(),
        items: BTreeMap::new(),
    };
    let n = run.programs.len();
    run.pending = vec![VecDeque::new(); n];
    run.debt = vec![0; n];

    for (pos, &p) in schedule.iter().enumerate() {
        if p >= n {
            return Err(ExecError::InvalidSchedule(p));
        }
        if run.debt[p] > 0 {
            run.debt[p] -= 1;
            continue;
        }
        if run.programs[p].is_finished() {
            continue;
        }
        run.pending[p].push_back(pos);
        run.pump()?;
    }

    let mut next_pos = schedule.len();
    loop {
        let unfinished: Vec<usize> = (0..n).filter(|&p| !run.programs[p].is_finished()).collect();
        if unfinished.is_empty() {
            break;
        }
        for &p in &unfinished {
            if run.pending[p].is_empty() {
                run.pending[p].push_back(next_pos);
                next_pos += 1;
            }
        }
        if !run.pump()? {
            let blocked = run.blocked_names();
            let trace = run.finish();
            return Err(ExecError::StuckSchedule { blocked, trace: Box::new(trace) });
        }
    }
    Ok(run.finish())
}

struct Run<'a> {
    engine: &'a mut Engine,
    programs: &'a mut [Box<dyn Program>],
    options: ExecOptions,
    /// Schedule positions granted to each program but not yet used.
    pending: Vec<VecDeque<usize>>,
    /// Slots a program already used ahead of the schedule (atomic groups).
    debt: Vec<usize>,
    steps: Vec<TraceStep>,
    names: BTreeMap<String, TxnId>,
    items: BTreeMap<String, RowKey>,
}

impl Run<'_> {
    fn name_of(&self, id: TxnId) -> String {
        self.names.iter().find(|(_, t)| **t == id).map(|(n, _)| n.clone()).unwrap_or_else(|| id.to_string())
    }

    fn blocked_names(&self) -> Vec<String> {
        blocked_names(self.engine, &self.names)
    }

    fn push(&mut self, op: Operation, result: StepResult) -> Result<(), ExecError> {
        let blocked = self.blocked_names();
        let digest = store_digest(&self.engine.store());
        self.push_recorded(op, result, blocked, digest)
    }

    fn push_recorded(
        &mut self,
        op: Operation,
        result: StepResult,
        blocked: Vec<String>,
        digest: u64,
    ) -> Result<(), ExecError> {
        let step = TraceStep { index: self.steps.len(), op, result, blocked, digest };
        self.steps.push(step);
        if self.options.check_invariants {
            self.engine
                .check_invariants()
                .map_err(|message| ExecError::Invariant { step: self.steps.len() - 1, message })?;
        }
        Ok(())
    }

    /// Runs every program that holds slots and can move, earliest slot first,
    /// until nothing changes. Returns whether anything moved.
    fn pump(&mut self) -> Result<bool, ExecError> {
        let mut moved = false;
        loop {
            let mut order: Vec<(usize, usize)> =
                (0..self.programs.len()).filter_map(|p| self.pending[p].front().map(|&pos| (pos, p))).collect();
            order.sort_unstable();
            let mut changed = false;
            for (_, p) in order {
                if self.programs[p].is_finished() {
                    self.pending[p].clear();
                    continue;
                }
                if let Some(t) = self.programs[p].current_txn() {
                    if self.engine.state(t) == Some(TxnState::Blocked) {
                        continue;
                    }
                }
                let mut cx =
                    StepCx { engine: self.engine, names: &mut self.names, items: &mut self.items, records: Vec::new() };
                let progress = self.programs[p].step(&mut cx)?;
                let records = std::mem::take(&mut cx.records);
                for (op, result, blocked, digest) in records {
                    self.push_recorded(op, result, blocked, digest)?;
                }
                match progress {
                    Progress::Advanced(k) => {
                        for _ in 0..k {
                            if self.pending[p].pop_front().is_none() {
                                self.debt[p] += 1;
                            }
                        }
                        changed = true;
                    }
                    Progress::Blocked => {
                        while let Some(victim) = self.engine.detect_deadlock() {
                            let name = self.name_of(victim);
                            self.push(Operation::abort(&name), StepResult::Aborted(AbortCause::DeadlockVictim))?;
                            changed = true;
                        }
                    }
                }
                if changed {
                    break;
                }
            }
            if !changed {
                return Ok(moved);
            }
            moved = true;
        }
    }

    fn finish(self) -> ExecutionTrace {
        let mut txn_states = BTreeMap::new();
        let mut abort_causes = BTreeMap::new();
        for (name, id) in &self.names {
            if let Some(t) = self.engine.transaction(*id) {
                txn_states.insert(name.clone(), t.state);
                if let Some(c) = t.abort_cause {
                    abort_causes.insert(name.clone(), c);
                }
            }
        }
        ExecutionTrace { steps: self.steps, final_store: self.engine.store(), txn_states, abort_causes }
    }
}
