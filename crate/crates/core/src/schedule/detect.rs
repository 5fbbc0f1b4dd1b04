//! Lost-update and conflict-serializability detectors over execution traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::history::Operation;
use super::trace::{ExecutionTrace, StepResult};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LostUpdate {
    pub victim: String,
    pub overwriter: String,
    pub item: String,
    /// Trace step of the victim's overwritten write.
    pub victim_write_step: usize,
}

impl fmt::Display for LostUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} overwrote {}'s write of {} (step {})",
            self.overwriter, self.victim, self.item, self.victim_write_step
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConflictKind {
    ReadWrite,
    WriteRead,
    WriteWrite,
}

impl ConflictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConflictKind::ReadWrite => "rw",
            ConflictKind::WriteRead => "wr",
            ConflictKind::WriteWrite => "ww",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConflictEdge {
    pub from: String,
    pub to: String,
    pub item: String,
    pub kind: ConflictKind,
}

impl fmt::Display for ConflictEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}:{}", self.from, self.to, self.item, self.kind.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnomalyReport {
    pub lost_updates: Vec<LostUpdate>,
    pub serializable: bool,
    pub edges: Vec<ConflictEdge>,
}

/// One data access of a committed transaction, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub txn: String,
    pub item: String,
    pub write: bool,
}

/// Accesses by committed transactions that took effect. A conditional write reads
/// the item's stamp, and writes it too when it affected the row.
pub fn committed_accesses(trace: &ExecutionTrace) -> Vec<Access> {
    let mut out = Vec::new();
    for step in &trace.steps {
        let (Some(txn), Some(item)) = (step.op.txn(), step.op.item()) else { continue };
        if !trace.committed(txn) {
            continue;
        }
        let mut push = |write| out.push(Access { txn: txn.to_string(), item: item.to_string(), write });
        match (&step.op, &step.result) {
            (Operation::Read { .. }, StepResult::Read { .. }) => push(false),
            (_, StepResult::Wrote { .. }) => push(true),
            (_, StepResult::CondWrote { affected, .. }) => {
                push(false);
                if *affected > 0 {
                    push(true);
                }
            }
            _ => {}
        }
    }
    out
}

/// Conflict edges between distinct transactions, deduplicated and sorted.
pub fn conflict_edges(accesses: &[Access]) -> Vec<ConflictEdge> {
    let mut edges = BTreeSet::new();
    for (i, a) in accesses.iter().enumerate() {
        for b in &accesses[i + 1..] {
            if a.txn == b.txn || a.item != b.item || !(a.write || b.write) {
                continue;
            }
            let kind = match (a.write, b.write) {
                (false, true) => ConflictKind::ReadWrite,
                (true, false) => ConflictKind::WriteRead,
                _ => ConflictKind::WriteWrite,
            };
            edges.insert(ConflictEdge { from: a.txn.clone(), to: b.txn.clone(), item: a.item.clone(), kind });
        }
    }
    edges.into_iter().collect()
}

/// A serial order consistent with the edges, or `None` when they form a cycle.
pub fn serial_order(txns: &BTreeSet<String>, edges: &[ConflictEdge]) -> Option<Vec<String>> {
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut indegree: BTreeMap<&str, usize> = txns.iter().map(|t| (t.as_str(), 0)).collect();
    for e in edges {
        if succ.entry(&e.from).or_default().insert(&e.to) {
            *indegree.entry(&e.to).or_default() += 1;
            indegree.entry(&e.from).or_default();
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(t, _)| *t).collect();
    let mut order = Vec::new();
    while let Some(t) = ready.pop_first() {
        order.push(t.to_string());
        for s in succ.get(t).into_iter().flatten() {
            let d = indegree.get_mut(s).expect("counted");
            *d -= 1;
            if *d == 0 {
                ready.insert(s);
            }
        }
    }
    (order.len() == indegree.len()).then_some(order)
}

/// Conflict graph over committed transactions and its acyclicity verdict.
pub fn check_serializability(trace: &ExecutionTrace) -> AnomalyReport {
    let accesses = committed_accesses(trace);
    let edges = conflict_edges(&accesses);
    let txns: BTreeSet<String> = accesses.iter().map(|a| a.txn.clone()).collect();
    AnomalyReport { lost_updates: Vec::new(), serializable: serial_order(&txns, &edges).is_some(), edges }
}

/// Flags committed writes that another committed transaction overwrote with a
/// value derived from a version older than the one they produced.
///
/// Each write records the committed version it was derived from (its basis); each
/// commit records the version it produced. When an overwriter derived its value
/// from version `v` and its commit produced `w`, every other committed version
/// strictly between `v` and `w` was lost.
pub fn detect_lost_update(trace: &ExecutionTrace) -> AnomalyReport {
    // (txn, item) -> (basis of the latest write, step of that write)
    let mut last_write: BTreeMap<(String, String), (Option<u64>, usize)> = BTreeMap::new();
    // item -> [(txn, produced version)]
    let mut produced: BTreeMap<String, Vec<(String, u64)>> = BTreeMap::new();
    for step in &trace.steps {
        let Some(txn) = step.op.txn() else { continue };
        match &step.result {
            StepResult::Wrote { basis, .. } => {
                let item = step.op.item().expect("write has an item");
                last_write.insert((txn.to_string(), item.to_string()), (*basis, step.index));
            }
            StepResult::CondWrote { affected: 1, basis, .. } => {
                let item = step.op.item().expect("write has an item");
                last_write.insert((txn.to_string(), item.to_string()), (*basis, step.index));
            }
            StepResult::Committed { written, .. } => {
                for (item, version) in written {
                    produced.entry(item.clone()).or_default().push((txn.to_string(), *version));
                }
            }
            _ => {}
        }
    }

    let mut lost = BTreeSet::new();
    for (item, versions) in &produced {
        for (overwriter, w) in versions {
            let Some((Some(basis), _)) = last_write.get(&(overwriter.clone(), item.clone())) else { continue };
            for (victim, u) in versions {
                if victim != overwriter && *basis < *u && u < w {
                    let step = last_write.get(&(victim.clone(), item.clone())).map_or(0, |(_, s)| *s);
                    lost.insert(LostUpdate {
                        victim: victim.clone(),
                        overwriter: overwriter.clone(),
                        item: item.clone(),
                        victim_write_step: step,
                    });
                }
            }
        }
    }
    let mut lost_updates: Vec<LostUpdate> = lost.into_iter().collect();
    lost_updates.sort_by_key(|l| l.victim_write_step);
    AnomalyReport { lost_updates, serializable: true, edges: Vec::new() }
}

/// Both detectors combined.
pub fn analyze(trace: &ExecutionTrace) -> AnomalyReport {
    let mut report = check_serializability(trace);
    report.lost_updates = detect_lost_update(trace).lost_updates;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(txn: &str, item: &str, write: bool) -> Access {
        Access { txn: txn.into(), item: item.into(), write }
    }

    #[test]
    fn read_write_cycle_is_not_serializable() {
        let accesses = [acc("A", "x", false), acc("B", "x", false), acc("A", "x", true), acc("B", "x", true)];
        let edges = conflict_edges(&accesses);
        let txns = ["A".to_string(), "B".to_string()].into();
        assert!(serial_order(&txns, &edges).is_none());
        assert!(edges.iter().any(|e| e.from == "A" && e.to == "B" && e.kind == ConflictKind::WriteWrite));
        assert!(edges.iter().any(|e| e.from == "B" && e.to == "A" && e.kind == ConflictKind::ReadWrite));
    }

    #[test]
    fn serial_history_orders_transactions() {
        let accesses = [acc("B", "x", false), acc("B", "x", true), acc("A", "x", false), acc("A", "x", true)];
        let edges = conflict_edges(&accesses);
        let txns = ["A".to_string(), "B".to_string()].into();
        assert_eq!(serial_order(&txns, &edges), Some(vec!["B".to_string(), "A".to_string()]));
    }

    #[test]
    fn reads_alone_do_not_conflict() {
        let accesses = [acc("A", "x", false), acc("B", "x", false)];
        assert!(conflict_edges(&accesses).is_empty());
    }
}
