use std::fmt;
use std::str::FromStr;

use super::EngineError;

/// Server-side stamping strategy used to maintain the row version column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StampKind {
    /// Trigger-style counter, `+1` per committed write to the row.
    Counter,
    /// Clock value truncated to the configured resolution. Distinct writes may share a value.
    CoarseTimestamp,
    /// Commit sequence number of the last committed writer. Reads as indeterminate
    /// while another transaction holds a pending write on the row.
    CommitScn,
    /// Database-wide row version counter. Writers take an update (U) lock before
    /// converting to exclusive.
    RowVersion,
}

impl StampKind {
    pub const ALL: [StampKind; 4] =
        [StampKind::Counter, StampKind::CoarseTimestamp, StampKind::CommitScn, StampKind::RowVersion];

    pub fn as_str(self) -> &'static str {
        match self {
            StampKind::Counter => "counter",
            StampKind::CoarseTimestamp => "coarse",
            StampKind::CommitScn => "scn",
            StampKind::RowVersion => "rowversion",
        }
    }

    /// Whether writers acquire an update lock before the exclusive lock.
    pub fn uses_update_lock(self) -> bool {
        matches!(self, StampKind::RowVersion)
    }
}

impl fmt::Display for StampKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StampKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "counter" => Ok(StampKind::Counter),
            "coarse" | "coarse-timestamp" => Ok(StampKind::CoarseTimestamp),
            "scn" | "commit-scn" => Ok(StampKind::CommitScn),
            "rowversion" => Ok(StampKind::RowVersion),
            other => Err(format!("unknown stamp kind `{other}`")),
        }
    }
}

/// Opaque row version stamp.
///
/// Equality follows SQL comparison semantics: an indeterminate stamp is
/// unequal to every stamp, itself included. Use [`VersionStamp::same_as`]
/// when structural identity is wanted.
#[derive(Debug, Clone, Copy)]
pub struct VersionStamp {
    kind: StampKind,
    value: Option<u64>,
}

impl VersionStamp {
    pub fn new(kind: StampKind, value: u64) -> Self {
        Self { kind, value: Some(value) }
    }

    pub fn indeterminate(kind: StampKind) -> Self {
        Self { kind, value: None }
    }

    pub fn kind(&self) -> StampKind {
        self.kind
    }

    pub fn value(&self) -> Option<u64> {
        self.value
    }

    pub fn is_indeterminate(&self) -> bool {
        self.value.is_none()
    }

    /// Structural identity, treating two indeterminate stamps of one kind as identical.
    pub fn same_as(&self, other: &VersionStamp) -> bool {
        self.kind == other.kind && self.value == other.value
    }
}

impl PartialEq for VersionStamp {
    fn eq(&self, other: &Self) -> bool {
        match (self.value, other.value) {
            (Some(a), Some(b)) => self.kind == other.kind && a == b,
            _ => false,
        }
    }
}

impl fmt::Display for VersionStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{}:{}", self.kind, v),
            None => write!(f, "{}:null", self.kind),
        }
    }
}

impl FromStr for VersionStamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s.split_once(':').ok_or_else(|| format!("stamp `{s}` is not of the form kind:value"))?;
        let kind: StampKind = kind.parse()?;
        if value == "null" {
            return Ok(VersionStamp::indeterminate(kind));
        }
        let value = value.parse::<u64>().map_err(|_| format!("stamp value `{value}` is not an unsigned integer"))?;
        Ok(VersionStamp::new(kind, value))
    }
}

/// Maps a stamp onto a plain 64-bit integer for client-side comparison.
///
/// Counter, commit-scn and rowversion stamps map injectively. Coarse timestamps
/// map to their tick value, so colliding timestamps stay colliding.
pub fn normalize_stamp(stamp: &VersionStamp) -> Result<u64, EngineError> {
    stamp.value.ok_or(EngineError::IndeterminateStamp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indeterminate_is_unequal_to_itself() {
        let s = VersionStamp::indeterminate(StampKind::CommitScn);
        assert_ne!(s, s);
        assert!(s.same_as(&s));
    }

    #[test]
    fn kinds_never_compare_equal() {
        assert_ne!(VersionStamp::new(StampKind::Counter, 3), VersionStamp::new(StampKind::CommitScn, 3));
    }

    #[test]
    fn normalize() {
        assert_eq!(normalize_stamp(&VersionStamp::new(StampKind::Counter, 7)).unwrap(), 7);
        assert_eq!(normalize_stamp(&VersionStamp::new(StampKind::CommitScn, 42)).unwrap(), 42);
        assert!(matches!(
            normalize_stamp(&VersionStamp::indeterminate(StampKind::CommitScn)),
            Err(EngineError::IndeterminateStamp)
        ));
    }

    #[test]
    fn text_form_round_trips() {
        for kind in StampKind::ALL {
            let s = VersionStamp::new(kind, 19);
            let back: VersionStamp = s.to_string().parse().unwrap();
            assert!(back.same_as(&s));
        }
        let null: VersionStamp = "scn:null".parse().unwrap();
        assert!(null.is_indeterminate());
        assert!("counter".parse::<VersionStamp>().is_err());
        assert!("clock:1".parse::<VersionStamp>().is_err());
    }
}
