use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::stamp::VersionStamp;
use super::store::RowKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

/// Concurrency-control scheme of the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CcMode {
    /// Locking scheme: S/U/X row locks, readers and writers block each other.
    Lscc,
    /// Multiversion: readers never block; first writer wins on write-write conflicts.
    Mvcc,
}

impl CcMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CcMode::Lscc => "LSCC",
            CcMode::Mvcc => "MVCC",
        }
    }
}

impl fmt::Display for CcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lscc" => Ok(CcMode::Lscc),
            "mvcc" => Ok(CcMode::Mvcc),
            _ => Err(format!("unknown concurrency-control mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Isolation {
    ReadCommitted,
    RepeatableRead,
    Snapshot,
    /// Row-granular: behaves exactly like `RepeatableRead`, since no predicate reads exist.
    Serializable,
}

impl Isolation {
    pub const ALL: [Isolation; 4] =
        [Isolation::ReadCommitted, Isolation::RepeatableRead, Isolation::Snapshot, Isolation::Serializable];

    pub fn short(self) -> &'static str {
        match self {
            Isolation::ReadCommitted => "rc",
            Isolation::RepeatableRead => "rr",
            Isolation::Snapshot => "snap",
            Isolation::Serializable => "ser",
        }
    }

    pub fn valid_for(self, mode: CcMode) -> bool {
        match self {
            Isolation::ReadCommitted => true,
            Isolation::Snapshot => mode == CcMode::Mvcc,
            Isolation::RepeatableRead | Isolation::Serializable => mode == CcMode::Lscc,
        }
    }

    /// Whether shared locks taken by reads are held to the end of the transaction.
    pub(crate) fn holds_read_locks(self) -> bool {
        matches!(self, Isolation::RepeatableRead | Isolation::Serializable)
    }
}

impl fmt::Display for Isolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Isolation::ReadCommitted => "READ_COMMITTED",
            Isolation::RepeatableRead => "REPEATABLE_READ",
            Isolation::Snapshot => "SNAPSHOT",
            Isolation::Serializable => "SERIALIZABLE",
        })
    }
}

impl FromStr for Isolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "rc" | "read_committed" => Ok(Isolation::ReadCommitted),
            "rr" | "repeatable_read" => Ok(Isolation::RepeatableRead),
            "snap" | "snapshot" => Ok(Isolation::Snapshot),
            "ser" | "serializable" => Ok(Isolation::Serializable),
            _ => Err(format!("unknown isolation level `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxnState {
    Active,
    Blocked,
    Committed,
    Aborted,
}

impl TxnState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TxnState::Committed | TxnState::Aborted)
    }
}

impl fmt::Display for TxnState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxnState::Active => "ACTIVE",
            TxnState::Blocked => "BLOCKED",
            TxnState::Committed => "COMMITTED",
            TxnState::Aborted => "ABORTED",
        })
    }
}

/// Why a transaction ended up aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortCause {
    Requested,
    DeadlockVictim,
    SerializationConflict,
}

impl fmt::Display for AbortCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortCause::Requested => "requested",
            AbortCause::DeadlockVictim => "deadlock-victim",
            AbortCause::SerializationConflict => "serialization-conflict",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Transaction {
    pub id: TxnId,
    pub mode: CcMode,
    pub isolation: Isolation,
    pub state: TxnState,
    /// First stamp observed per row.
    pub read_set: BTreeMap<RowKey, VersionStamp>,
    /// Pending absolute column values per row, applied at commit.
    pub write_set: BTreeMap<RowKey, BTreeMap<String, i64>>,
    pub start_seq: u64,
    /// Global commit sequence at begin. Readers use it as their snapshot under MVCC.
    pub begin_commit_seq: u64,
    pub abort_cause: Option<AbortCause>,
    /// Row this transaction is queued on while BLOCKED.
    pub waiting_on: Option<RowKey>,
}

impl Transaction {
    pub fn snapshot_seq(&self) -> Option<u64> {
        (self.mode == CcMode::Mvcc).then_some(self.begin_commit_seq)
    }
}
