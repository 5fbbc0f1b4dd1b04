//! Rows, keys and the line-oriented store snapshot format.
//!
//! One row per line, sorted by key:
//!
//! ```text
//! table|id|col=val,col=val|stampkind:stampvalue
//! ```
//!
//! Blank lines and lines starting with `#` are ignored on load.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::stamp::{StampKind, VersionStamp};

/// Identity of a row; the unit of locking and versioning.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    table: String,
    id: String,
}

impl RowKey {
    /// Panics on an empty or malformed component. Use [`RowKey::try_new`] for untrusted input.
    pub fn new(table: impl Into<String>, id: impl Into<String>) -> Self {
        Self::try_new(table, id).expect("invalid row key")
    }

    pub fn try_new(table: impl Into<String>, id: impl Into<String>) -> Result<Self, String> {
        let table = table.into();
        let id = id.into();
        for (what, s) in [("table", &table), ("id", &id)] {
            if s.is_empty() {
                return Err(format!("empty {what}"));
            }
            if let Some(c) = s.chars().find(|c| is_reserved(*c)) {
                return Err(format!("{what} `{s}` contains reserved character {c:?}"));
            }
        }
        Ok(Self { table, id })
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.table, self.id)
    }
}

fn is_reserved(c: char) -> bool {
    matches!(c, '|' | ',' | '=' | ':' | '\n' | '\r') || c.is_whitespace()
}

/// A committed row: named integer columns plus the server-maintained stamp.
#[derive(Debug, Clone)]
pub struct Row {
    pub key: RowKey,
    pub columns: BTreeMap<String, i64>,
    pub stamp: VersionStamp,
}

impl Row {
    pub fn new(key: RowKey, columns: BTreeMap<String, i64>, stamp: VersionStamp) -> Self {
        Self { key, columns, stamp }
    }

    pub fn column(&self, name: &str) -> Option<i64> {
        self.columns.get(name).copied()
    }

    /// The row's first column in name order; histories address rows through it.
    pub fn primary_column(&self) -> &str {
        self.columns.keys().next().map(String::as_str).unwrap_or("")
    }
}

impl PartialEq for Row {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.columns == other.columns && self.stamp.same_as(&other.stamp)
    }
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|", self.key.table, self.key.id)?;
        for (i, (name, value)) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{name}={value}")?;
        }
        write!(f, "|{}", self.stamp)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct SnapshotError {
    pub line: usize,
    pub message: String,
}

impl FromStr for Row {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = line.split('|').collect();
        let [table, id, columns, stamp] = parts[..] else {
            return Err(format!("expected 4 `|`-separated fields, found {}", parts.len()));
        };
        let key = RowKey::try_new(table, id)?;
        let mut map = BTreeMap::new();
        for pair in columns.split(',') {
            let (name, value) =
                pair.split_once('=').ok_or_else(|| format!("column `{pair}` is not of the form name=value"))?;
            if name.is_empty() || name.chars().any(is_reserved) {
                return Err(format!("invalid column name `{name}`"));
            }
            let value: i64 =
                value.parse().map_err(|_| format!("column `{name}` value `{value}` is not a 64-bit integer"))?;
            if map.insert(name.to_string(), value).is_some() {
                return Err(format!("duplicate column `{name}`"));
            }
        }
        let stamp: VersionStamp = stamp.parse()?;
        if stamp.is_indeterminate() {
            return Err("stored stamps cannot be indeterminate".into());
        }
        Ok(Row::new(key, map, stamp))
    }
}

/// A set of committed rows, ordered by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    rows: BTreeMap<RowKey, Row>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row with the given columns and an initial stamp of zero.
    pub fn with_row<'a>(
        mut self,
        key: RowKey,
        kind: StampKind,
        columns: impl IntoIterator<Item = (&'a str, i64)>,
    ) -> Self {
        let columns: BTreeMap<String, i64> = columns.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert!(!columns.is_empty(), "a row needs at least one column");
        self.insert(Row::new(key, columns, VersionStamp::new(kind, 0)));
        self
    }

    pub fn insert(&mut self, row: Row) -> Option<Row> {
        self.rows.insert(row.key.clone(), row)
    }

    pub fn get(&self, key: &RowKey) -> Option<&Row> {
        self.rows.get(key)
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rewrites every stamp to `kind`, keeping its value.
    pub fn restamp(mut self, kind: StampKind) -> Self {
        for row in self.rows.values_mut() {
            let value = row.stamp.value().unwrap_or(0);
            row.stamp = VersionStamp::new(kind, value);
        }
        self
    }

    /// Resolves a history item: either the full `table:id` form or a row id that is
    /// unique across tables.
    pub fn resolve(&self, item: &str) -> Option<&RowKey> {
        if let Some((table, id)) = item.split_once(':') {
            return self.rows.keys().find(|k| k.table == table && k.id == id);
        }
        let mut matches = self.rows.keys().filter(|k| k.id == item);
        let first = matches.next()?;
        match matches.next() {
            Some(_) => None,
            None => Some(first),
        }
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for row in self.rows.values() {
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, SnapshotError> {
        let mut store = Store::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Row = line.parse().map_err(|message| SnapshotError { line: idx + 1, message })?;
            let key = row.key.clone();
            if store.insert(row).is_some() {
                return Err(SnapshotError { line: idx + 1, message: format!("duplicate row {key}") });
            }
        }
        Ok(store)
    }
}
