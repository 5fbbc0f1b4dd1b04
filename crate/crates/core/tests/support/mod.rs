//! Generators and oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, RngExt};
use rvv_core::engine::{AbortCause, CcMode, EngineConfig, Isolation, StampKind, Store, TxnState, VersionStamp};
use rvv_core::schedule::{
    default_store, execute, ExecError, ExecOptions, ExecutionTrace, History, Operation, StepResult, TraceStep, TxnDecl,
    WriteStyle,
};

const TXN_IDS: [&str; 4] = ["A", "B", "C", "D"];

/// Randomly interleaves per-transaction op sequences, keeping each one's order.
fn interleave<R: Rng + ?Sized>(rng: &mut R, mut per_txn: Vec<Vec<Operation>>) -> Vec<Operation> {
    for seq in &mut per_txn {
        seq.reverse();
    }
    let mut out = Vec::new();
    loop {
        let live: Vec<usize> = (0..per_txn.len()).filter(|&i| !per_txn[i].is_empty()).collect();
        let Some(&pick) = live.choose(rng) else { break };
        out.push(per_txn[pick].pop().expect("live"));
    }
    out
}

/// A well-formed, executable history over items `x` and `y`: up to `max_txns`
/// transactions, at most `max_ops` operations in total, each transaction a few
/// reads and writes ended by a commit (or, rarely, an abort).
pub fn executable_history<R: Rng + ?Sized>(rng: &mut R, max_txns: usize, max_ops: usize) -> History {
    // Two or three transactions most of the time: with more, each gets too few
    // operations to take part in a cycle.
    let weighted = [1, 2, 2, 2, 3, 3, 4];
    let txns = weighted[rng.random_range(0..weighted.len())].min(max_txns).min(max_ops / 2).max(1);
    let mut budget = max_ops;
    let mut per_txn = Vec::new();
    for (i, id) in TXN_IDS.iter().take(txns).enumerate() {
        // Leave at least two ops for each transaction still to come.
        let reserve = 2 * (txns - i - 1);
        let data = rng.random_range(1..=(budget - reserve - 1).min(4));
        budget -= data + 1;
        let mut seq = Vec::new();
        for _ in 0..data {
            let item = if rng.random_bool(0.7) { "x" } else { "y" };
            seq.push(if rng.random_bool(0.5) { Operation::read(id, item) } else { Operation::write(id, item) });
        }
        seq.push(if rng.random_bool(0.9) { Operation::commit(id) } else { Operation::abort(id) });
        per_txn.push(seq);
    }
    History::new(interleave(rng, per_txn))
}

/// Engine settings the random histories are run under, cycled by index.
pub fn config_for(index: usize) -> (EngineConfig, Isolation) {
    let stamps = [StampKind::Counter, StampKind::CommitScn, StampKind::CoarseTimestamp, StampKind::RowVersion];
    let stamp = stamps[index / 4 % stamps.len()];
    match index % 4 {
        0 => (EngineConfig::new(CcMode::Lscc, stamp), Isolation::ReadCommitted),
        1 => (EngineConfig::new(CcMode::Lscc, stamp), Isolation::RepeatableRead),
        2 => (EngineConfig::new(CcMode::Mvcc, stamp), Isolation::ReadCommitted),
        _ => (EngineConfig::new(CcMode::Mvcc, stamp), Isolation::Snapshot),
    }
}

/// Runs a history on its default store; a stuck schedule yields its partial trace.
pub fn run_history(h: &History, config: EngineConfig, iso: Isolation) -> Result<ExecutionTrace, ExecError> {
    let store = default_store(h, &config);
    let opts = ExecOptions { default_isolation: Some(iso), check_invariants: true };
    match execute(h, config, store, opts) {
        Ok(trace) => Ok(trace),
        Err(ExecError::StuckSchedule { trace, .. }) => Ok(*trace),
        Err(e) => Err(e),
    }
}

/// The history exactly as written, as if every operation took effect: reads
/// and writes succeed, `c`/`a` decide each transaction's fate.
pub fn literal_trace(h: &History) -> ExecutionTrace {
    let mut txn_states = BTreeMap::new();
    let steps = h
        .ops
        .iter()
        .enumerate()
        .map(|(index, op)| {
            let result = match op {
                Operation::Read { .. } => {
                    StepResult::Read { value: 0, stamp: VersionStamp::new(StampKind::Counter, 0), version: 0 }
                }
                Operation::Write { .. } => StepResult::Wrote { value: 0, basis: None },
                Operation::Commit { txn } => {
                    txn_states.insert(txn.clone(), TxnState::Committed);
                    StepResult::Committed { seq: index as u64, written: Vec::new() }
                }
                Operation::Abort { txn } => {
                    txn_states.insert(txn.clone(), TxnState::Aborted);
                    StepResult::Aborted(AbortCause::Requested)
                }
                _ => StepResult::Skipped("not modelled"),
            };
            TraceStep { index, op: op.clone(), result, blocked: Vec::new(), digest: 0 }
        })
        .collect();
    ExecutionTrace { steps, final_store: Store::new(), txn_states, abort_causes: BTreeMap::new() }
}

/// Conflict-serializability by brute force: some ordering of the committed
/// transactions agrees with the order of every conflicting pair of accesses.
pub fn brute_force_serializable(trace: &ExecutionTrace) -> bool {
    let committed: BTreeSet<&str> =
        trace.txn_states.iter().filter(|(_, s)| **s == TxnState::Committed).map(|(t, _)| t.as_str()).collect();
    // (txn, item, is_write) in execution order
    let mut accesses: Vec<(&str, &str, bool)> = Vec::new();
    for step in &trace.steps {
        let (Some(txn), Some(item)) = (step.op.txn(), step.op.item()) else { continue };
        if !committed.contains(txn) {
            continue;
        }
        match &step.result {
            StepResult::Read { .. } => accesses.push((txn, item, false)),
            StepResult::Wrote { .. } => accesses.push((txn, item, true)),
            StepResult::CondWrote { affected, .. } => {
                accesses.push((txn, item, false));
                if *affected > 0 {
                    accesses.push((txn, item, true));
                }
            }
            _ => {}
        }
    }
    let mut must_precede: Vec<(&str, &str)> = Vec::new();
    for (i, &(t1, x1, w1)) in accesses.iter().enumerate() {
        for &(t2, x2, w2) in &accesses[i + 1..] {
            if t1 != t2 && x1 == x2 && (w1 || w2) {
                must_precede.push((t1, t2));
            }
        }
    }
    let txns: Vec<&str> = accesses.iter().map(|a| a.0).collect::<BTreeSet<_>>().into_iter().collect();
    permutations(&txns).into_iter().any(|order| {
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        must_precede.iter().all(|(a, b)| pos[a] < pos[b])
    })
}

fn permutations<'a>(items: &[&'a str]) -> Vec<Vec<&'a str>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

const ITEMS: [&str; 5] = ["x", "y", "acct:x", "t_1.k", "a-b"];

/// A well-formed history exercising the whole notation: headers, conditional
/// writes, validations, ticks, and transactions left unfinished.
pub fn notation_history<R: Rng + ?Sized>(rng: &mut R, max_txns: usize, max_ops: usize) -> History {
    let ids = ["A", "B", "T1", "c2", "Zz"];
    let txns = rng.random_range(1..=max_txns.min(ids.len()));
    let mut per_txn = Vec::new();
    let mut decls = BTreeMap::new();
    for id in ids.iter().take(txns) {
        let mut seq = Vec::new();
        let mut read: Vec<&str> = Vec::new();
        let mut validates = false;
        for _ in 0..rng.random_range(1..=(max_ops / txns).max(1)) {
            let item = ITEMS[rng.random_range(0..ITEMS.len())];
            match rng.random_range(0..10) {
                0..=3 => {
                    read.push(item);
                    seq.push(Operation::read(id, item));
                }
                4..=6 => seq.push(Operation::write(id, item)),
                7 if !read.is_empty() => {
                    let item = read[rng.random_range(0..read.len())];
                    let cond = ["k", "s_1", "v2"][rng.random_range(0..3)];
                    seq.push(Operation::cond_write(id, item, cond));
                }
                8 => {
                    validates = true;
                    seq.push(Operation::validate(id));
                }
                _ => seq.push(Operation::Tick),
            }
        }
        match rng.random_range(0..4) {
            0 => {}
            1 => seq.push(Operation::abort(id)),
            _ => seq.push(Operation::commit(id)),
        }
        per_txn.push(seq);
        if rng.random_bool(0.5) || validates && rng.random_bool(0.5) {
            let decl = random_decl(rng, validates);
            decls.insert(id.to_string(), decl);
        }
    }
    let mut h = History::new(interleave(rng, per_txn));
    h.decls = decls;
    h
}

fn random_decl<R: Rng + ?Sized>(rng: &mut R, validates: bool) -> TxnDecl {
    let isos = [Isolation::ReadCommitted, Isolation::RepeatableRead, Isolation::Snapshot, Isolation::Serializable];
    TxnDecl {
        isolation: rng.random_bool(0.5).then(|| isos[rng.random_range(0..isos.len())]),
        mode: rng.random_bool(0.5).then(|| if rng.random_bool(0.5) { CcMode::Lscc } else { CcMode::Mvcc }),
        occ: validates || rng.random_bool(0.2),
        delta: rng.random_bool(0.5).then(|| rng.random_range(-1000..=1000)),
        write: rng
            .random_bool(0.5)
            .then(|| if rng.random_bool(0.5) { WriteStyle::Blind } else { WriteStyle::Sensitive }),
    }
}

/// Bytes biased towards the notation's alphabet, with arbitrary bytes mixed in.
pub fn fuzz_bytes<R: Rng + ?Sized>(rng: &mut R, max_len: usize) -> Vec<u8> {
    const ALPHABET: &[u8] = b"rwcatickvalxyAB01(),:_.-=# \t\r\n\n";
    const WORDS: [&[u8]; 6] = [b"txn A ", b"iso=rc ", b"delta=-", b"occ", b"rA(x) ", b"wB(x,k) "];
    let len = rng.random_range(0..=max_len);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        match rng.random_range(0..10) {
            0 => out.push(rng.random()),
            1 => out.extend_from_slice(WORDS[rng.random_range(0..WORDS.len())]),
            _ => out.push(ALPHABET[rng.random_range(0..ALPHABET.len())]),
        }
    }
    out
}
