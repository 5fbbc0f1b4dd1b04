//! Scenarios shipped with the binary, in the scenario file format.

const ACCOUNT: &str = "row = acct|x|balance=1000|counter:0\n";

pub const SELECT_UPDATE_LOST: &str = "\
# SELECT then UPDATE with a value computed client-side: B's -200 is overwritten.
name = select-update-lost
engine = lscc
stamp = counter
iso = rc
history = txn A delta=-100 write=blind
history = txn B delta=-200 write=blind
history = rA(x) rB(x) wB(x) cB wA(x) cA
expect.final.x = 900
expect.lost_updates = 1
expect.lost_victims = B
expect.serializable = false
";

pub const SELECT_UPDATE_DEADLOCK: &str = "\
# Same flow with read locks held to commit: the lock upgrades deadlock.
name = select-update-deadlock
engine = lscc
stamp = counter
iso = rr
history = txn A delta=-100 write=blind
history = txn B delta=-200 write=blind
history = rA(x) rB(x) wB(x) cB wA(x) cA
expect.deadlock_victims = B
expect.state.A = committed
expect.state.B = aborted
expect.final.x = 900
expect.lost_updates = 0
";

pub const SENSITIVE_UPDATE: &str = "\
# A applies its change relative to the current balance after B commits.
name = sensitive-update
engine = lscc
stamp = counter
program = sensitive A item=x delta=-100
program = sensitive B item=x delta=-200
schedule = B B A A
expect.status.A = APPLIED
expect.final.x = 700
expect.lost_updates = 0
expect.sweep.lost_update_runs = 0
expect.sweep.final.x = 700
";

pub const CONDITIONAL_UPDATE: &str = "\
# A's update carries the stamp it read; B's commit in between changed it.
name = conditional-update
engine = lscc
stamp = counter
program = conditional A item=x delta=-100
program = sensitive B item=x delta=-200
schedule = A A B B A A
expect.status.A = CONFLICT_DETECTED
expect.final.x = 800
expect.lost_updates = 0
expect.sweep.lost_update_runs = 0
";

pub const RESELECT_UPDATE: &str = "\
# A re-reads the stamp under repeatable read, sees B's change, retries from it.
name = reselect-update
engine = lscc
stamp = counter
iso = rr
program = reselect A item=x delta=-100
program = sensitive B item=x delta=-200
schedule = A A B B A A A
expect.status.A = RETRIED_APPLIED
expect.final.x = 700
expect.lost_updates = 0
expect.sweep.lost_update_runs = 0
expect.sweep.final.x = 700
";

pub const BLIND_WRITE: &str = "\
# The user-level blind write: A2 writes the value computed from A1's stale read.
name = blind-write
engine = lscc
stamp = counter
program = blind A item=x delta=-100
program = sensitive B item=x delta=-200
schedule = A A B B A A
expect.status.A = APPLIED
expect.final.x = 900
expect.lost_updates = 1
expect.sweep.lost_update_runs = >=1
";

pub const OCC_FIRST: &str = "\
# Both read x; A validates and writes first, so B's validation fails.
name = occ-first
engine = lscc
stamp = counter
history = rA(x) rB(x) valA wA(x) valB aB
expect.state.A = committed
expect.state.B = aborted
";

pub const OCC_SECOND: &str = "\
# A gives up before validating, so B validates and commits.
name = occ-second
engine = lscc
stamp = counter
history = rA(x) rB(x) aA valB wB(x)
expect.state.A = aborted
expect.state.B = committed
";

pub const TIMESTAMP_COLLISION: &str = "\
# Coarse timestamps: B's commit gets the same stamp A read, so the check passes.
name = timestamp-collision
engine = lscc
stamp = coarse
resolution = 1
program = conditional A item=x delta=-100
program = sensitive B item=x delta=-200
schedule = A A B B A A
expect.status.A = APPLIED
expect.final.x = 900
expect.lost_updates = 1
expect.sweep.lost_update_runs = >=1
";

pub const U_LOCK_DEADLOCK: &str = "\
# Rowversion-style updates take U before X; two read-then-update txns deadlock.
name = u-lock-deadlock
engine = lscc
stamp = rowversion
iso = rr
history = txn A delta=-100 write=sensitive
history = txn B delta=-200 write=sensitive
history = rA(x) rB(x) wA(x) wB(x) cA cB
expect.deadlock_victims = B
expect.state.A = committed
expect.final.x = 900
";

/// Built-in scenarios by name, in listing order.
pub fn builtins() -> Vec<(&'static str, String)> {
    [
        ("select-update-lost", SELECT_UPDATE_LOST),
        ("select-update-deadlock", SELECT_UPDATE_DEADLOCK),
        ("blind-write", BLIND_WRITE),
        ("sensitive-update", SENSITIVE_UPDATE),
        ("conditional-update", CONDITIONAL_UPDATE),
        ("reselect-update", RESELECT_UPDATE),
        ("occ-first", OCC_FIRST),
        ("occ-second", OCC_SECOND),
        ("timestamp-collision", TIMESTAMP_COLLISION),
        ("u-lock-deadlock", U_LOCK_DEADLOCK),
    ]
    .into_iter()
    .map(|(name, body)| (name, format!("{ACCOUNT}{body}")))
    .collect()
}

pub fn builtin(name: &str) -> Option<String> {
    builtins().into_iter().find(|(n, _)| *n == name).map(|(_, text)| text)
}
