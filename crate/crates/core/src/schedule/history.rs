use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::engine::{CcMode, Isolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Read,
    Write,
    CondWrite,
    Validate,
    Commit,
    Abort,
    Tick,
}

/// One step of a history: `rA(x)`, `wA(x)`, `wA(x,k)`, `valA`, `cA`, `aA` or `tick`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operation {
    Read {
        txn: String,
        item: String,
    },
    Write {
        txn: String,
        item: String,
    },
    /// Conditional write; `cond` names the stamp bound by the transaction's latest
    /// earlier read of `item`.
    CondWrite {
        txn: String,
        item: String,
        cond: String,
    },
    Validate {
        txn: String,
    },
    Commit {
        txn: String,
    },
    Abort {
        txn: String,
    },
    Tick,
}

impl Operation {
    pub fn read(txn: &str, item: &str) -> Self {
        Operation::Read { txn: txn.into(), item: item.into() }
    }

    pub fn write(txn: &str, item: &str) -> Self {
        Operation::Write { txn: txn.into(), item: item.into() }
    }

    pub fn cond_write(txn: &str, item: &str, cond: &str) -> Self {
        Operation::CondWrite { txn: txn.into(), item: item.into(), cond: cond.into() }
    }

    pub fn validate(txn: &str) -> Self {
        Operation::Validate { txn: txn.into() }
    }

    pub fn commit(txn: &str) -> Self {
        Operation::Commit { txn: txn.into() }
    }

    pub fn abort(txn: &str) -> Self {
        Operation::Abort { txn: txn.into() }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            Operation::Read { .. } => OpKind::Read,
            Operation::Write { .. } => OpKind::Write,
            Operation::CondWrite { .. } => OpKind::CondWrite,
            Operation::Validate { .. } => OpKind::Validate,
            Operation::Commit { .. } => OpKind::Commit,
            Operation::Abort { .. } => OpKind::Abort,
            Operation::Tick => OpKind::Tick,
        }
    }

    pub fn txn(&self) -> Option<&str> {
        match self {
            Operation::Read { txn, .. }
            | Operation::Write { txn, .. }
            | Operation::CondWrite { txn, .. }
            | Operation::Validate { txn }
            | Operation::Commit { txn }
            | Operation::Abort { txn } => Some(txn),
            Operation::Tick => None,
        }
    }

    pub fn item(&self) -> Option<&str> {
        match self {
            Operation::Read { item, .. } | Operation::Write { item, .. } | Operation::CondWrite { item, .. } => {
                Some(item)
            }
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Operation::Commit { .. } | Operation::Abort { .. })
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Read { txn, item } => write!(f, "r{txn}({item})"),
            Operation::Write { txn, item } => write!(f, "w{txn}({item})"),
            Operation::CondWrite { txn, item, cond } => write!(f, "w{txn}({item},{cond})"),
            Operation::Validate { txn } => write!(f, "val{txn}"),
            Operation::Commit { txn } => write!(f, "c{txn}"),
            Operation::Abort { txn } => write!(f, "a{txn}"),
            Operation::Tick => f.write_str("tick"),
        }
    }
}

/// How a plain `w<T>(x)` computes the value it writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteStyle {
    /// Absolute value from the transaction's latest read of the item plus its delta.
    Blind,
    /// Relative update, `x = x + delta`, against the current value.
    Sensitive,
}

impl WriteStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            WriteStyle::Blind => "blind",
            WriteStyle::Sensitive => "sensitive",
        }
    }
}

impl FromStr for WriteStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blind" => Ok(WriteStyle::Blind),
            "sensitive" => Ok(WriteStyle::Sensitive),
            _ => Err(format!("unknown write style `{s}`")),
        }
    }
}

/// Header annotation: `txn <T> iso=<level> mode=<LSCC|MVCC> [occ] [delta=<n>] [write=<style>]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TxnDecl {
    pub isolation: Option<Isolation>,
    pub mode: Option<CcMode>,
    pub occ: bool,
    pub delta: Option<i64>,
    pub write: Option<WriteStyle>,
}

/// Delta applied by writes of transactions that do not declare one.
pub const DEFAULT_DELTA: i64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub ops: Vec<Operation>,
    pub decls: BTreeMap<String, TxnDecl>,
}

impl History {
    pub fn new(ops: Vec<Operation>) -> Self {
        Self { ops, decls: BTreeMap::new() }
    }

    pub fn with_decl(mut self, txn: &str, decl: TxnDecl) -> Self {
        self.decls.insert(txn.into(), decl);
        self
    }

    /// Transactions in order of first appearance (declared-only ones last, by id).
    pub fn txns(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in self.ops.iter().filter_map(Operation::txn) {
            if seen.insert(t) {
                out.push(t.to_string());
            }
        }
        for t in self.decls.keys() {
            if !seen.contains(t.as_str()) {
                out.push(t.clone());
            }
        }
        out
    }

    pub fn items(&self) -> BTreeSet<String> {
        self.ops.iter().filter_map(|o| o.item().map(str::to_string)).collect()
    }

    /// Operations of one transaction, in history order.
    pub fn project(&self, txn: &str) -> Vec<Operation> {
        self.ops.iter().filter(|o| o.txn() == Some(txn)).cloned().collect()
    }

    /// Whether `txn` runs the optimistic read/validate/write shape: declared `occ`,
    /// or undeclared and using `val`.
    pub fn is_occ(&self, txn: &str) -> bool {
        match self.decls.get(txn) {
            Some(d) => d.occ,
            None => self.ops.iter().any(|o| matches!(o, Operation::Validate { txn: t } if t == txn)),
        }
    }

    pub fn decl(&self, txn: &str) -> TxnDecl {
        self.decls.get(txn).cloned().unwrap_or_default()
    }

    /// Structural well-formedness; see [`IllFormed`] for the rules.
    pub fn check(&self) -> Result<(), IllFormed> {
        if self.ops.is_empty() {
            return Err(IllFormed::Empty);
        }
        let mut finished: BTreeSet<&str> = BTreeSet::new();
        let mut reads: BTreeSet<(&str, &str)> = BTreeSet::new();
        for (pos, op) in self.ops.iter().enumerate() {
            let Some(txn) = op.txn() else { continue };
            if finished.contains(txn) {
                return Err(IllFormed::AfterTerminal { txn: txn.into(), position: pos });
            }
            match op {
                Operation::Read { item, .. } => {
                    reads.insert((txn, item));
                }
                Operation::CondWrite { item, cond, .. } if !reads.contains(&(txn, item.as_str())) => {
                    return Err(IllFormed::UnboundCondition {
                        txn: txn.into(),
                        item: item.clone(),
                        cond: cond.clone(),
                        position: pos,
                    });
                }
                Operation::Validate { .. } if self.decls.get(txn).is_some_and(|d| !d.occ) => {
                    return Err(IllFormed::ValidateWithoutOcc { txn: txn.into(), position: pos });
                }
                _ => {}
            }
            if op.is_terminal() {
                finished.insert(txn);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IllFormed {
    #[error("history has no operations")]
    Empty,
    #[error("operation {position} of transaction {txn} follows its commit/abort")]
    AfterTerminal { txn: String, position: usize },
    #[error("conditional write w{txn}({item},{cond}) has no earlier read of {item} by {txn}")]
    UnboundCondition { txn: String, item: String, cond: String, position: usize },
    #[error("transaction {txn} validates but is not declared occ")]
    ValidateWithoutOcc { txn: String, position: usize },
    #[error("transaction {0} is declared twice")]
    DuplicateDecl(String),
}

impl IllFormed {
    /// Index of the offending operation, when there is one.
    pub fn op_index(&self) -> Option<usize> {
        match self {
            IllFormed::AfterTerminal { position, .. }
            | IllFormed::UnboundCondition { position, .. }
            | IllFormed::ValidateWithoutOcc { position, .. } => Some(*position),
            IllFormed::Empty | IllFormed::DuplicateDecl(_) => None,
        }
    }
}

impl fmt::Display for TxnDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(iso) = self.isolation {
            write!(f, " iso={}", iso.short())?;
        }
        if let Some(mode) = self.mode {
            write!(f, " mode={mode}")?;
        }
        if self.occ {
            f.write_str(" occ")?;
        }
        if let Some(d) = self.delta {
            write!(f, " delta={d}")?;
        }
        if let Some(w) = self.write {
            write!(f, " write={}", w.as_str())?;
        }
        Ok(())
    }
}

/// Canonical text: header lines sorted by transaction id, then all operations on
/// one space-separated line.
pub fn format_history(history: &History) -> String {
    let mut out = String::new();
    for (txn, decl) in &history.decls {
        out.push_str(&format!("txn {txn}{decl}\n"));
    }
    let ops: Vec<String> = history.ops.iter().map(Operation::to_string).collect();
    if !ops.is_empty() {
        out.push_str(&ops.join(" "));
        out.push('\n');
    }
    out
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_history(self))
    }
}
