use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;

use super::history::Operation;
use crate::engine::{AbortCause, EngineError, Store, TxnState, VersionStamp};

/// What one attempt of an operation did.
#[derive(Debug, Clone)]
pub enum StepResult {
    Read {
        value: i64,
        stamp: VersionStamp,
        version: u64,
    },
    /// `basis` is the committed version the written value was derived from; `None`
    /// for absolute writes that depend on no read.
    Wrote {
        value: i64,
        basis: Option<u64>,
    },
    CondWrote {
        affected: u8,
        value: Option<i64>,
        basis: Option<u64>,
        current: VersionStamp,
    },
    Validated(bool),
    Committed {
        seq: u64,
        written: Vec<(String, u64)>,
    },
    Aborted(AbortCause),
    Ticked(u64),
    Blocked,
    Failed(EngineError),
    Skipped(&'static str),
}

impl StepResult {
    pub fn is_blocked(&self) -> bool {
        matches!(self, StepResult::Blocked)
    }
}

impl fmt::Display for StepResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepResult::Read { value, stamp, version } => write!(f, "ok value={value} stamp={stamp} v={version}"),
            StepResult::Wrote { value, basis } => {
                write!(f, "ok value={value}")?;
                match basis {
                    Some(b) => write!(f, " basis=v{b}"),
                    None => Ok(()),
                }
            }
            StepResult::CondWrote { affected, value, current, .. } => {
                write!(f, "ok rows={affected}")?;
                if let Some(v) = value {
                    write!(f, " value={v}")?;
                }
                write!(f, " stamp={current}")
            }
            StepResult::Validated(true) => f.write_str("valid"),
            StepResult::Validated(false) => f.write_str("invalid"),
            StepResult::Committed { seq, .. } => write!(f, "committed seq={seq}"),
            StepResult::Aborted(cause) => write!(f, "aborted {cause}"),
            StepResult::Ticked(clock) => write!(f, "clock={clock}"),
            StepResult::Blocked => f.write_str("blocked"),
            StepResult::Failed(e) => write!(f, "error {}", e.code()),
            StepResult::Skipped(why) => write!(f, "skipped {why}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    pub index: usize,
    pub op: Operation,
    pub result: StepResult,
    /// Transactions BLOCKED after this step, by name.
    pub blocked: Vec<String>,
    /// Digest of the committed store after this step.
    pub digest: u64,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|{:016x}", self.index, self.op, self.result, self.digest)
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub steps: Vec<TraceStep>,
    pub final_store: Store,
    pub txn_states: BTreeMap<String, TxnState>,
    pub abort_causes: BTreeMap<String, AbortCause>,
}

impl ExecutionTrace {
    pub fn committed(&self, txn: &str) -> bool {
        self.txn_states.get(txn) == Some(&TxnState::Committed)
    }

    /// Operations that completed, in execution order.
    pub fn executed_ops(&self) -> impl Iterator<Item = &TraceStep> {
        self.steps
            .iter()
            .filter(|s| !matches!(s.result, StepResult::Blocked | StepResult::Skipped(_) | StepResult::Failed(_)))
    }

    pub fn deadlock_victims(&self) -> Vec<&str> {
        self.abort_causes.iter().filter(|(_, c)| **c == AbortCause::DeadlockVictim).map(|(t, _)| t.as_str()).collect()
    }

    /// `step#|op|result|store-digest`, one line per step.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&step.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn store_digest(store: &Store) -> u64 {
    let mut h = FnvHasher::default();
    h.write(store.dump().as_bytes());
    h.finish()
}
