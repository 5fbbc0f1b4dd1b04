//! History notation, the interleaving executor and anomaly detectors.

pub mod detect;
pub mod enumerate;
pub mod executor;
pub mod history;
pub mod parser;
pub mod trace;

pub use detect::{
    analyze, check_serializability, detect_lost_update, AnomalyReport, ConflictEdge, ConflictKind, LostUpdate,
};
pub use enumerate::{enumerate_interleavings, interleaving_count, Exploration, Interleaving, EXHAUSTIVE_BOUND};
pub use executor::{
    default_store, execute, precheck, programs_from_history, run_programs, ExecError, ExecOptions, Program, Progress,
    StepCx, TickProgram, TxnProgram,
};
pub use history::{format_history, History, IllFormed, OpKind, Operation, TxnDecl, WriteStyle, DEFAULT_DELTA};
pub use parser::{parse_history, parse_history_bytes, HistoryError, ParseError};
pub use trace::{store_digest, ExecutionTrace, StepResult, TraceStep};
