//! Row lock table for the locking scheme: S/U/X modes, FIFO wait queues with
//! upgrade priority, and the derived wait-for graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use super::store::RowKey;
use super::TxnId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockMode {
    Shared,
    Update,
    Exclusive,
}

impl LockMode {
    pub fn compatible(self, other: LockMode) -> bool {
        use LockMode::*;
        matches!((self, other), (Shared, Shared) | (Shared, Update) | (Update, Shared))
    }

    /// Whether holding `self` already satisfies a request for `wanted`.
    pub fn covers(self, wanted: LockMode) -> bool {
        self >= wanted
    }
}

impl fmt::Display for LockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LockMode::Shared => "S",
            LockMode::Update => "U",
            LockMode::Exclusive => "X",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockRequest {
    pub txn: TxnId,
    pub mode: LockMode,
    pub upgrade: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LockEntry {
    /// Strongest mode held per transaction.
    pub granted: BTreeMap<TxnId, LockMode>,
    pub queue: VecDeque<LockRequest>,
}

impl LockEntry {
    fn grantable(&self, txn: TxnId, mode: LockMode) -> bool {
        self.granted.iter().filter(|(holder, _)| **holder != txn).all(|(_, held)| mode.compatible(*held))
    }

    fn is_empty(&self) -> bool {
        self.granted.is_empty() && self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquire {
    Granted,
    Queued,
}

#[derive(Debug, Clone, Default)]
pub struct LockTable {
    entries: BTreeMap<RowKey, LockEntry>,
}

impl LockTable {
    pub fn held(&self, txn: TxnId, key: &RowKey) -> Option<LockMode> {
        self.entries.get(key)?.granted.get(&txn).copied()
    }

    pub fn entry(&self, key: &RowKey) -> Option<&LockEntry> {
        self.entries.get(key)
    }

    pub fn holders(&self, key: &RowKey) -> impl Iterator<Item = (TxnId, LockMode)> + '_ {
        self.entries.get(key).into_iter().flat_map(|e| e.granted.iter().map(|(t, m)| (*t, *m)))
    }

    /// Requests `mode` on `key`. A request from a transaction that already holds a
    /// weaker lock is an upgrade: it only has to be compatible with the other holders
    /// and is queued ahead of plain requests. Plain requests also wait behind any
    /// queued request.
    pub fn acquire(&mut self, txn: TxnId, key: &RowKey, mode: LockMode) -> Acquire {
        let entry = self.entries.entry(key.clone()).or_default();
        let current = entry.granted.get(&txn).copied();
        if current.is_some_and(|held| held.covers(mode)) {
            return Acquire::Granted;
        }
        let upgrade = current.is_some();
        if entry.grantable(txn, mode) && (upgrade || entry.queue.is_empty()) {
            entry.granted.insert(txn, mode);
            return Acquire::Granted;
        }
        let request = LockRequest { txn, mode, upgrade };
        if upgrade {
            let at = entry.queue.iter().take_while(|r| r.upgrade).count();
            entry.queue.insert(at, request);
        } else {
            entry.queue.push_back(request);
        }
        Acquire::Queued
    }

    /// Drops the lock held by `txn` on `key` back to `mode` (or releases it entirely
    /// when `mode` is `None`). Returns transactions whose queued requests were granted.
    pub fn downgrade(&mut self, txn: TxnId, key: &RowKey, mode: Option<LockMode>) -> Vec<TxnId> {
        let Some(entry) = self.entries.get_mut(key) else {
            return Vec::new();
        };
        match mode {
            Some(m) => {
                entry.granted.insert(txn, m);
            }
            None => {
                entry.granted.remove(&txn);
            }
        }
        self.regrant(key)
    }

    /// Releases every lock and queued request of `txn`. Returns woken transactions.
    pub fn release_all(&mut self, txn: TxnId) -> Vec<TxnId> {
        let keys: Vec<RowKey> = self
            .entries
            .iter()
            .filter(|(_, e)| e.granted.contains_key(&txn) || e.queue.iter().any(|r| r.txn == txn))
            .map(|(k, _)| k.clone())
            .collect();
        let mut woken = Vec::new();
        for key in keys {
            if let Some(entry) = self.entries.get_mut(&key) {
                entry.granted.remove(&txn);
                entry.queue.retain(|r| r.txn != txn);
            }
            woken.extend(self.regrant(&key));
        }
        woken
    }

    /// Grants queued requests front to back until one does not fit.
    fn regrant(&mut self, key: &RowKey) -> Vec<TxnId> {
        let mut woken = Vec::new();
        if let Some(entry) = self.entries.get_mut(key) {
            while let Some(front) = entry.queue.front().copied() {
                if !entry.grantable(front.txn, front.mode) {
                    break;
                }
                entry.queue.pop_front();
                let held = entry.granted.entry(front.txn).or_insert(front.mode);
                *held = (*held).max(front.mode);
                woken.push(front.txn);
            }
            if entry.is_empty() {
                self.entries.remove(key);
            }
        }
        woken
    }

    /// Wait-for edges: a queued request waits for every incompatible holder and for
    /// every request queued ahead of it.
    pub fn wait_for_edges(&self) -> BTreeMap<TxnId, BTreeSet<TxnId>> {
        let mut graph: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
        for entry in self.entries.values() {
            for (pos, request) in entry.queue.iter().enumerate() {
                let targets = graph.entry(request.txn).or_default();
                for (holder, held) in &entry.granted {
                    if *holder != request.txn && !request.mode.compatible(*held) {
                        targets.insert(*holder);
                    }
                }
                for ahead in entry.queue.iter().take(pos) {
                    if ahead.txn != request.txn {
                        targets.insert(ahead.txn);
                    }
                }
            }
        }
        graph
    }

    pub fn queued_requests(&self, txn: TxnId) -> usize {
        self.entries.values().map(|e| e.queue.iter().filter(|r| r.txn == txn).count()).sum()
    }

    /// Checks that no two holders of one key hold incompatible modes.
    pub fn verify(&self) -> Result<(), String> {
        for (key, entry) in &self.entries {
            let held: Vec<(TxnId, LockMode)> = entry.granted.iter().map(|(t, m)| (*t, *m)).collect();
            for (i, (a, ma)) in held.iter().enumerate() {
                for (b, mb) in &held[i + 1..] {
                    if !ma.compatible(*mb) {
                        return Err(format!("{key}: {a} holds {ma} while {b} holds {mb}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use LockMode::*;

    fn key() -> RowKey {
        RowKey::new("t", "x")
    }

    #[test]
    fn compatibility_matrix() {
        let expected = [
            (Shared, Shared, true),
            (Shared, Update, true),
            (Update, Shared, true),
            (Update, Update, false),
            (Update, Exclusive, false),
            (Shared, Exclusive, false),
            (Exclusive, Exclusive, false),
            (Exclusive, Shared, false),
        ];
        for (a, b, ok) in expected {
            assert_eq!(a.compatible(b), ok, "{a} vs {b}");
        }
    }

    #[test]
    fn upgrade_jumps_the_queue() {
        let mut t = LockTable::default();
        let (a, b) = (TxnId(1), TxnId(2));
        assert_eq!(t.acquire(a, &key(), Shared), Acquire::Granted);
        assert_eq!(t.acquire(b, &key(), Exclusive), Acquire::Queued);
        // a's upgrade only conflicts with other holders, and there are none.
        assert_eq!(t.acquire(a, &key(), Exclusive), Acquire::Granted);
        assert_eq!(t.held(a, &key()), Some(Exclusive));
        assert_eq!(t.release_all(a), vec![b]);
        assert_eq!(t.held(b, &key()), Some(Exclusive));
        t.verify().unwrap();
    }

    #[test]
    fn conversion_deadlock_edges() {
        let mut t = LockTable::default();
        let (a, b) = (TxnId(1), TxnId(2));
        t.acquire(a, &key(), Shared);
        t.acquire(b, &key(), Shared);
        assert_eq!(t.acquire(b, &key(), Exclusive), Acquire::Queued);
        assert_eq!(t.acquire(a, &key(), Exclusive), Acquire::Queued);
        let g = t.wait_for_edges();
        assert!(g[&a].contains(&b));
        assert!(g[&b].contains(&a));
    }

    #[test]
    fn plain_requests_respect_fifo() {
        let mut t = LockTable::default();
        let (a, b, c) = (TxnId(1), TxnId(2), TxnId(3));
        t.acquire(a, &key(), Shared);
        assert_eq!(t.acquire(b, &key(), Exclusive), Acquire::Queued);
        // compatible with the holder, but must not overtake b
        assert_eq!(t.acquire(c, &key(), Shared), Acquire::Queued);
        assert_eq!(t.wait_for_edges()[&c], BTreeSet::from([b]));
        assert_eq!(t.release_all(a), vec![b]);
        assert_eq!(t.release_all(b), vec![c]);
    }

    #[test]
    fn update_locks_exclude_each_other() {
        let mut t = LockTable::default();
        let (a, b, c) = (TxnId(1), TxnId(2), TxnId(3));
        assert_eq!(t.acquire(a, &key(), Update), Acquire::Granted);
        assert_eq!(t.acquire(c, &key(), Shared), Acquire::Granted);
        assert_eq!(t.acquire(b, &key(), Update), Acquire::Queued);
        t.verify().unwrap();
    }
}
