use thiserror::Error;

use super::stamp::StampKind;
use super::store::RowKey;
use super::txn::{CcMode, Isolation, TxnId, TxnState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("isolation level {isolation} is not available under {mode}")]
    InvalidIsolationForMode { isolation: Isolation, mode: CcMode },
    #[error("transaction requested {requested} but the engine runs {configured}")]
    ModeMismatch { requested: CcMode, configured: CcMode },
    #[error("unknown transaction {0}")]
    UnknownTransaction(TxnId),
    #[error("transaction {txn} is {state}")]
    TxnNotActive { txn: TxnId, state: TxnState },
    #[error("transaction {0} is blocked")]
    TxnBlocked(TxnId),
    #[error("row {0} not found")]
    RowNotFound(RowKey),
    #[error("row {key} has no column `{column}`")]
    UnknownColumn { key: RowKey, column: String },
    #[error("update on row {0} names no columns")]
    EmptyUpdate(RowKey),
    #[error("column `{column}` of {key} overflows")]
    Overflow { key: RowKey, column: String },
    #[error("operation would block")]
    WouldBlock,
    #[error("aborted as deadlock victim")]
    DeadlockVictim,
    #[error("aborted on serialization conflict")]
    SerializationConflict,
    #[error("stamp is indeterminate")]
    IndeterminateStamp,
    #[error("row {key} carries a {found} stamp but the engine stamps with {expected}")]
    StampKindMismatch { key: RowKey, expected: StampKind, found: StampKind },
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
}

impl EngineError {
    /// Short machine-friendly name used in traces and reports.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidIsolationForMode { .. } => "invalid-isolation",
            EngineError::ModeMismatch { .. } => "mode-mismatch",
            EngineError::UnknownTransaction(_) => "unknown-txn",
            EngineError::TxnNotActive { .. } => "txn-not-active",
            EngineError::TxnBlocked(_) => "txn-blocked",
            EngineError::RowNotFound(_) => "row-not-found",
            EngineError::UnknownColumn { .. } => "unknown-column",
            EngineError::EmptyUpdate(_) => "empty-update",
            EngineError::Overflow { .. } => "overflow",
            EngineError::WouldBlock => "would-block",
            EngineError::DeadlockVictim => "deadlock-victim",
            EngineError::SerializationConflict => "serialization-conflict",
            EngineError::IndeterminateStamp => "indeterminate-stamp",
            EngineError::StampKindMismatch { .. } => "stamp-kind-mismatch",
            EngineError::InvalidConfig(_) => "invalid-config",
        }
    }
}
