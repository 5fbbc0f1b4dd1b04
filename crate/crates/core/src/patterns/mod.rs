//! Client-side update patterns as step-wise programs.
//!
//! A user-facing update is split in two transactions: `<label>1` reads the row and
//! commits (the user's think time follows), then `<label>2` applies the change.
//! How the second transaction guards against concurrent writers is the pattern:
//!
//! * blind: writes `value_read + delta` with no check (unsafe, kept as the
//!   anti-pattern the detector must catch);
//! * sensitive: a single relative update `x = x + delta`, no first transaction;
//! * conditional: writes only when the row's stamp still equals the stamp read;
//! * reselect: re-reads the stamp under a strong isolation level, writes on a match
//!   and retries from the refreshed read otherwise;
//! * occ: validates the stamp, then writes conditionally; a failed check aborts.

use std::any::Any;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::{
    AbortCause, CcMode, ColumnUpdate, Engine, EngineError, Isolation, RowKey, TxnId, TxnState, VersionStamp,
};
use crate::schedule::executor::{
    apply_commit, apply_write, run_programs, ExecError, ExecOptions, Program, Progress, StepCx,
};
use crate::schedule::history::{History, Operation};
use crate::schedule::trace::{ExecutionTrace, StepResult};

/// Retries a re-select update makes after its first attempt.
pub const DEFAULT_MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternKind {
    Blind,
    Sensitive,
    Conditional,
    Reselect,
    Occ,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] =
        [PatternKind::Blind, PatternKind::Sensitive, PatternKind::Conditional, PatternKind::Reselect, PatternKind::Occ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::Blind => "blind",
            PatternKind::Sensitive => "sensitive",
            PatternKind::Conditional => "conditional",
            PatternKind::Reselect => "reselect",
            PatternKind::Occ => "occ",
        }
    }

    fn phases(self) -> &'static [Phase] {
        use Phase::*;
        match self {
            PatternKind::Sensitive => &[Write, Commit],
            PatternKind::Blind | PatternKind::Conditional => &[CaptureRead, CaptureCommit, Write, Commit],
            PatternKind::Reselect | PatternKind::Occ => &[CaptureRead, CaptureCommit, Check, Write, Commit],
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown pattern `{s}` (expected blind, sensitive, conditional, reselect or occ)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternStatus {
    Applied,
    ConflictDetected,
    AbortedDeadlock,
    AbortedSerialization,
    RetriedApplied,
}

impl PatternStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternStatus::Applied => "APPLIED",
            PatternStatus::ConflictDetected => "CONFLICT_DETECTED",
            PatternStatus::AbortedDeadlock => "ABORTED_DEADLOCK",
            PatternStatus::AbortedSerialization => "ABORTED_SERIALIZATION",
            PatternStatus::RetriedApplied => "RETRIED_APPLIED",
        }
    }

    pub fn applied(self) -> bool {
        matches!(self, PatternStatus::Applied | PatternStatus::RetriedApplied)
    }
}

impl fmt::Display for PatternStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            PatternStatus::Applied,
            PatternStatus::ConflictDetected,
            PatternStatus::AbortedDeadlock,
            PatternStatus::AbortedSerialization,
            PatternStatus::RetriedApplied,
        ]
        .into_iter()
        .find(|k| k.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

/// What the user saw before deciding on a change.
#[derive(Debug, Clone, PartialEq)]
pub struct UserContext {
    pub key: RowKey,
    pub column: String,
    pub value_read: i64,
    pub stamp_read: VersionStamp,
    /// Committed version ordinal behind `value_read`.
    pub version_read: u64,
    pub delta: i64,
}

impl UserContext {
    pub fn target(&self) -> Result<i64, PatternError> {
        self.value_read
            .checked_add(self.delta)
            .ok_or_else(|| EngineError::Overflow { key: self.key.clone(), column: self.column.clone() }.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternOutcome {
    pub status: PatternStatus,
    /// Committed value of the row right after the final transaction ended; absent
    /// when it aborted.
    pub final_value: Option<i64>,
    pub attempts: usize,
    /// `(stamp read, stamp found)` for every stamp comparison made.
    pub observed_stamps: Vec<(VersionStamp, VersionStamp)>,
    /// Status of each attempt, in order.
    pub attempt_statuses: Vec<PatternStatus>,
}

#[derive(Debug, Clone, Error)]
pub enum PatternError {
    #[error("re-select gave up after {attempts} attempts")]
    RetriesExhausted { attempts: usize, observed_stamps: Vec<(VersionStamp, VersionStamp)> },
    #[error("{kind} needs REPEATABLE_READ or SERIALIZABLE under LSCC, or SNAPSHOT under MVCC; got {isolation}")]
    IsolationTooWeak { kind: PatternKind, isolation: Isolation },
    #[error("program has not finished")]
    Unfinished,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    CaptureRead,
    CaptureCommit,
    Check,
    Write,
    Commit,
}

/// One user-level update following a [`PatternKind`].
#[derive(Debug, Clone)]
pub struct PatternProgram {
    kind: PatternKind,
    label: String,
    item: String,
    delta: i64,
    isolation: Isolation,
    max_retries: usize,
    phase: usize,
    phases: Vec<Phase>,
    txn: Option<TxnId>,
    txn_name: String,
    ctx: Option<UserContext>,
    /// Read made by the re-select check of the current attempt.
    check: Option<crate::engine::ReadResult>,
    attempts: usize,
    observed: Vec<(VersionStamp, VersionStamp)>,
    statuses: Vec<PatternStatus>,
    conflict: bool,
    result: Option<Result<PatternOutcome, PatternError>>,
}

impl PatternProgram {
    /// A program that captures its own context through `<label>1`.
    pub fn new(kind: PatternKind, label: &str, item: &str, delta: i64) -> Self {
        Self {
            kind,
            label: label.to_string(),
            item: item.to_string(),
            delta,
            isolation: Isolation::ReadCommitted,
            max_retries: DEFAULT_MAX_RETRIES,
            phase: 0,
            phases: kind.phases().to_vec(),
            txn: None,
            txn_name: String::new(),
            ctx: None,
            check: None,
            attempts: 0,
            observed: Vec::new(),
            statuses: Vec::new(),
            conflict: false,
            result: None,
        }
    }

    /// A program starting from an already captured context.
    pub fn from_context(kind: PatternKind, label: &str, ctx: UserContext) -> Self {
        let mut p = Self::new(kind, label, &ctx.key.to_string(), ctx.delta);
        p.phases.retain(|ph| !matches!(ph, Phase::CaptureRead | Phase::CaptureCommit));
        p.ctx = Some(ctx);
        p
    }

    /// Isolation level of the updating transaction (the capture always runs at
    /// READ_COMMITTED).
    pub fn with_isolation(mut self, isolation: Isolation) -> Self {
        self.isolation = isolation;
        self
    }

    pub fn with_max_retries(mut self, retries: usize) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn context(&self) -> Option<&UserContext> {
        self.ctx.as_ref()
    }

    /// Outcome once the program finished.
    pub fn outcome(&self) -> Result<PatternOutcome, PatternError> {
        self.result.clone().unwrap_or(Err(PatternError::Unfinished))
    }

    fn update_name(&self) -> String {
        match (self.kind, self.attempts) {
            (PatternKind::Sensitive, n) if n <= 1 => self.label.clone(),
            (PatternKind::Sensitive, n) => format!("{}R{n}", self.label),
            (_, n) if n <= 1 => format!("{}2", self.label),
            (_, n) => format!("{}2R{n}", self.label),
        }
    }

    fn finish(&mut self, result: Result<PatternOutcome, PatternError>) {
        self.phase = self.phases.len();
        self.result = Some(result);
    }

    fn outcome_with(&mut self, status: PatternStatus, final_value: Option<i64>) -> PatternOutcome {
        self.statuses.push(status);
        PatternOutcome {
            status,
            final_value,
            attempts: self.attempts,
            observed_stamps: self.observed.clone(),
            attempt_statuses: self.statuses.clone(),
        }
    }

    /// Starts another attempt of the update transaction, or gives up.
    fn retry_or_finish(&mut self, status: PatternStatus, engine: &Engine) {
        if self.kind == PatternKind::Reselect && self.attempts <= self.max_retries {
            self.statuses.push(status);
            self.txn = None;
            self.check = None;
            self.conflict = false;
            self.phase = self.phases.iter().position(|p| *p == Phase::Check).expect("re-select checks");
            return;
        }
        if self.kind == PatternKind::Reselect && status == PatternStatus::ConflictDetected {
            self.statuses.push(status);
            let observed = self.observed.clone();
            self.finish(Err(PatternError::RetriesExhausted { attempts: self.attempts, observed_stamps: observed }));
            return;
        }
        let value = match status {
            PatternStatus::AbortedDeadlock | PatternStatus::AbortedSerialization => None,
            _ => self.ctx.as_ref().and_then(|c| engine.committed_value(&c.key, &c.column)),
        };
        let outcome = self.outcome_with(status, value);
        self.finish(Ok(outcome));
    }

    fn op(&self, phase: Phase) -> Operation {
        let name = if matches!(phase, Phase::CaptureRead | Phase::CaptureCommit) {
            format!("{}1", self.label)
        } else {
            self.txn_name.clone()
        };
        match phase {
            Phase::CaptureRead => Operation::read(&name, &self.item),
            Phase::Check if self.kind == PatternKind::Occ => Operation::validate(&name),
            Phase::Check => Operation::read(&name, &self.item),
            Phase::Write if matches!(self.kind, PatternKind::Conditional | PatternKind::Occ) => {
                Operation::cond_write(&name, &self.item, "k")
            }
            Phase::Write => Operation::write(&name, &self.item),
            Phase::CaptureCommit | Phase::Commit => Operation::commit(&name),
        }
    }

    fn begin(&mut self, cx: &mut StepCx<'_>, capture: bool) -> Result<TxnId, ExecError> {
        if let Some(t) = self.txn {
            return Ok(t);
        }
        let mode = cx.engine().config().cc_mode;
        let (name, iso) = if capture {
            (format!("{}1", self.label), Isolation::ReadCommitted)
        } else {
            self.attempts += 1;
            self.txn_name = self.update_name();
            (self.txn_name.clone(), self.isolation)
        };
        let id = cx.begin(&name, iso, mode)?;
        self.txn = Some(id);
        Ok(id)
    }

    fn aborted_status(cause: Option<AbortCause>) -> Option<PatternStatus> {
        match cause {
            Some(AbortCause::DeadlockVictim) => Some(PatternStatus::AbortedDeadlock),
            Some(AbortCause::SerializationConflict) => Some(PatternStatus::AbortedSerialization),
            _ => None,
        }
    }

    fn engine_failure(&mut self, cx: &mut StepCx<'_>, e: EngineError) -> Progress {
        let status = match e {
            EngineError::DeadlockVictim => PatternStatus::AbortedDeadlock,
            EngineError::SerializationConflict => PatternStatus::AbortedSerialization,
            other => {
                self.finish(Err(other.into()));
                return Progress::Advanced(1);
            }
        };
        self.retry_or_finish(status, cx.engine());
        Progress::Advanced(1)
    }

    fn run_phase(&mut self, cx: &mut StepCx<'_>, phase: Phase) -> Result<Progress, ExecError> {
        let capture = matches!(phase, Phase::CaptureRead | Phase::CaptureCommit);
        let txn = self.begin(cx, capture)?;
        let op = self.op(phase);

        if cx.engine().state(txn) == Some(TxnState::Aborted) {
            let cause = cx.engine().transaction(txn).and_then(|t| t.abort_cause);
            if let Some(status) = Self::aborted_status(cause) {
                let err = if status == PatternStatus::AbortedDeadlock {
                    EngineError::DeadlockVictim
                } else {
                    EngineError::SerializationConflict
                };
                cx.record(op, StepResult::Failed(err));
                self.retry_or_finish(status, cx.engine());
                return Ok(Progress::Advanced(1));
            }
        }

        match phase {
            Phase::CaptureRead | Phase::Check => {
                let (key, column) = cx.resolve(&self.item)?;
                let read = match cx.engine().read(txn, &key, &column) {
                    Ok(r) => r,
                    Err(EngineError::WouldBlock) => {
                        cx.record(op, StepResult::Blocked);
                        return Ok(Progress::Blocked);
                    }
                    Err(e) => {
                        cx.record(op, StepResult::Failed(e.clone()));
                        return Ok(self.engine_failure(cx, e));
                    }
                };
                if phase == Phase::CaptureRead {
                    cx.record(op, StepResult::Read { value: read.value, stamp: read.stamp, version: read.version });
                    self.ctx = Some(UserContext {
                        key,
                        column,
                        value_read: read.value,
                        stamp_read: read.stamp,
                        version_read: read.version,
                        delta: self.delta,
                    });
                } else {
                    let ctx = self.ctx.as_mut().expect("context captured");
                    self.observed.push((ctx.stamp_read, read.stamp));
                    let unchanged = read.stamp == ctx.stamp_read;
                    if self.kind == PatternKind::Occ {
                        cx.record(op, StepResult::Validated(unchanged));
                    } else {
                        cx.record(op, StepResult::Read { value: read.value, stamp: read.stamp, version: read.version });
                    }
                    if !unchanged {
                        // Show the user the current row; a retry starts from it.
                        ctx.value_read = read.value;
                        ctx.stamp_read = read.stamp;
                        ctx.version_read = read.version;
                        self.conflict = true;
                        if self.kind == PatternKind::Occ {
                            cx.engine().abort(txn)?;
                            let name = self.txn_name.clone();
                            cx.record(Operation::abort(&name), StepResult::Aborted(AbortCause::Requested));
                            self.retry_or_finish(PatternStatus::ConflictDetected, cx.engine());
                            return Ok(Progress::Advanced(1));
                        }
                        // Skip the write; the commit ends the attempt.
                        self.phase += 1;
                    } else {
                        self.check = Some(read);
                    }
                }
                self.phase += 1;
                Ok(Progress::Advanced(1))
            }
            Phase::Write => {
                let (key, column) = cx.resolve(&self.item)?;
                let (update, expected, basis) = match self.kind {
                    PatternKind::Sensitive => (ColumnUpdate::add(&column, self.delta), None, None),
                    PatternKind::Blind => {
                        let ctx = self.ctx.as_ref().expect("context captured");
                        (ColumnUpdate::set(&column, ctx_target(ctx, &key)?), None, Some(ctx.version_read))
                    }
                    PatternKind::Conditional | PatternKind::Occ => {
                        let ctx = self.ctx.as_ref().expect("context captured");
                        let seen = crate::engine::ReadResult {
                            value: ctx.value_read,
                            stamp: ctx.stamp_read,
                            version: ctx.version_read,
                        };
                        (ColumnUpdate::set(&column, ctx_target(ctx, &key)?), Some(seen), Some(ctx.version_read))
                    }
                    PatternKind::Reselect => {
                        let read = self.check.as_ref().expect("checked before writing");
                        let value = read
                            .value
                            .checked_add(self.delta)
                            .ok_or_else(|| EngineError::Overflow { key: key.clone(), column: column.clone() })?;
                        (ColumnUpdate::set(&column, value), None, Some(read.version))
                    }
                };
                match apply_write(cx, txn, &op, update, expected.as_ref(), basis)? {
                    None => Ok(Progress::Blocked),
                    Some(StepResult::Failed(e)) => Ok(self.engine_failure(cx, e)),
                    Some(StepResult::CondWrote { affected: 0, current, .. }) => {
                        let ctx = self.ctx.as_ref().expect("context captured");
                        self.observed.push((ctx.stamp_read, current));
                        self.conflict = true;
                        self.phase += 1;
                        Ok(Progress::Advanced(1))
                    }
                    Some(StepResult::CondWrote { current, .. }) => {
                        let ctx = self.ctx.as_ref().expect("context captured");
                        self.observed.push((ctx.stamp_read, current));
                        self.phase += 1;
                        Ok(Progress::Advanced(1))
                    }
                    Some(_) => {
                        self.phase += 1;
                        Ok(Progress::Advanced(1))
                    }
                }
            }
            Phase::CaptureCommit | Phase::Commit => match apply_commit(cx, txn, op) {
                StepResult::Committed { .. } => {
                    self.txn = None;
                    if phase == Phase::CaptureCommit {
                        self.phase += 1;
                    } else if self.conflict {
                        self.retry_or_finish(PatternStatus::ConflictDetected, cx.engine());
                    } else {
                        let status =
                            if self.attempts > 1 { PatternStatus::RetriedApplied } else { PatternStatus::Applied };
                        let ctx_key = self.item.clone();
                        let (key, column) = cx.resolve(&ctx_key)?;
                        let value = cx.engine().committed_value(&key, &column);
                        let outcome = self.outcome_with(status, value);
                        self.finish(Ok(outcome));
                    }
                    Ok(Progress::Advanced(1))
                }
                StepResult::Failed(e) => Ok(self.engine_failure(cx, e)),
                _ => unreachable!("commit yields a commit or a failure"),
            },
        }
    }
}

fn ctx_target(ctx: &UserContext, key: &RowKey) -> Result<i64, EngineError> {
    ctx.value_read
        .checked_add(ctx.delta)
        .ok_or_else(|| EngineError::Overflow { key: key.clone(), column: ctx.column.clone() })
}

impl Program for PatternProgram {
    fn label(&self) -> &str {
        &self.label
    }

    fn slots(&self) -> usize {
        self.phases.len()
    }

    fn is_finished(&self) -> bool {
        self.result.is_some()
    }

    fn current_txn(&self) -> Option<TxnId> {
        self.txn
    }

    fn step(&mut self, cx: &mut StepCx<'_>) -> Result<Progress, ExecError> {
        let phase = self.phases[self.phase];
        let mode = cx.engine().config().cc_mode;
        if self.kind == PatternKind::Reselect && phase == Phase::Check && !strong_enough(self.isolation, mode) {
            self.finish(Err(PatternError::IsolationTooWeak { kind: self.kind, isolation: self.isolation }));
            return Ok(Progress::Advanced(1));
        }
        match self.run_phase(cx, phase) {
            Err(ExecError::Engine(e)) => {
                self.finish(Err(e.into()));
                Ok(Progress::Advanced(1))
            }
            other => other,
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Outcome of the pattern program among `programs` labelled `label`.
pub fn outcome_of(programs: &[Box<dyn Program>], label: &str) -> Option<Result<PatternOutcome, PatternError>> {
    programs
        .iter()
        .filter_map(|p| p.as_any().downcast_ref::<PatternProgram>())
        .find(|p| p.label == label)
        .map(PatternProgram::outcome)
}

fn run_alone(engine: &mut Engine, program: PatternProgram) -> Result<(PatternProgram, ExecutionTrace), PatternError> {
    let mut programs: Vec<Box<dyn Program>> = vec![Box::new(program)];
    let trace = run_programs(engine, &mut programs, &[], ExecOptions::default())?;
    let program =
        programs.pop().and_then(|p| p.as_any().downcast_ref::<PatternProgram>().cloned()).expect("pattern program");
    Ok((program, trace))
}

/// Reads the row in its own READ_COMMITTED transaction, which commits.
pub fn capture_context(engine: &mut Engine, key: &RowKey, delta: i64) -> Result<UserContext, PatternError> {
    let column =
        engine.committed_row(key).ok_or_else(|| EngineError::RowNotFound(key.clone()))?.primary_column().to_string();
    let mode = engine.config().cc_mode;
    let txn = engine.begin(Isolation::ReadCommitted, mode)?;
    let read = engine.read(txn, key, &column)?;
    engine.commit(txn)?;
    Ok(UserContext {
        key: key.clone(),
        column,
        value_read: read.value,
        stamp_read: read.stamp,
        version_read: read.version,
        delta,
    })
}

fn solo(engine: &mut Engine, program: PatternProgram) -> Result<PatternOutcome, PatternError> {
    let (program, _) = run_alone(engine, program)?;
    program.outcome()
}

/// Absolute write of `value_read + delta`, unchecked.
pub fn blind_write(
    engine: &mut Engine,
    ctx: &UserContext,
    isolation: Isolation,
) -> Result<PatternOutcome, PatternError> {
    solo(engine, PatternProgram::from_context(PatternKind::Blind, "A", ctx.clone()).with_isolation(isolation))
}

/// Relative update of the current value in one transaction.
pub fn sensitive_update(
    engine: &mut Engine,
    key: &RowKey,
    delta: i64,
    isolation: Isolation,
) -> Result<PatternOutcome, PatternError> {
    let program = PatternProgram::new(PatternKind::Sensitive, "A", &key.to_string(), delta).with_isolation(isolation);
    solo(engine, program)
}

/// Write guarded by the stamp read into `ctx`.
pub fn conditional_update(
    engine: &mut Engine,
    ctx: &UserContext,
    isolation: Isolation,
) -> Result<PatternOutcome, PatternError> {
    solo(engine, PatternProgram::from_context(PatternKind::Conditional, "A", ctx.clone()).with_isolation(isolation))
}

/// Whether `isolation` keeps a re-selected row stable until the write.
pub fn strong_enough(isolation: Isolation, mode: CcMode) -> bool {
    match mode {
        CcMode::Lscc => matches!(isolation, Isolation::RepeatableRead | Isolation::Serializable),
        CcMode::Mvcc => isolation == Isolation::Snapshot,
    }
}

/// Re-selects the stamp, writes on a match, and retries from the refreshed read up
/// to `max_retries` times.
pub fn reselect_update(
    engine: &mut Engine,
    ctx: &UserContext,
    isolation: Isolation,
    max_retries: usize,
) -> Result<PatternOutcome, PatternError> {
    if !strong_enough(isolation, engine.config().cc_mode) {
        return Err(PatternError::IsolationTooWeak { kind: PatternKind::Reselect, isolation });
    }
    let program = PatternProgram::from_context(PatternKind::Reselect, "A", ctx.clone())
        .with_isolation(isolation)
        .with_max_retries(max_retries);
    solo(engine, program)
}

/// Runs an optimistic history; returns the trace, whose per-transaction states are
/// the outcomes.
pub fn occ_history_run(
    engine_config: crate::engine::EngineConfig,
    store: crate::engine::Store,
    history: &History,
) -> Result<ExecutionTrace, ExecError> {
    crate::schedule::execute(history, engine_config, store, ExecOptions::default())
}
