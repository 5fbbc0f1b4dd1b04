//! Scenario files: one `key = value` per line, `#` comments.
//!
//! ```text
//! name = conditional-update
//! engine = lscc                 # lscc | mvcc
//! stamp = counter               # counter | coarse | scn | rowversion
//! iso = rc                      # rc | rr | snap | ser
//! resolution = 1                # coarse-timestamp granularity, in ticks
//! row = acct|x|balance=1000|counter:0
//! program = conditional A item=x delta=-100
//! program = sensitive B item=x delta=-200
//! schedule = A A B B A A
//! expect.status.A = CONFLICT_DETECTED
//! expect.final.x = 800
//! ```
//!
//! Instead of programs a scenario may give a history, one `history =` line per
//! line of history text. Expectation values may be prefixed with `>=` or `<=`.

use std::fmt;

use thiserror::Error;

use crate::engine::{CcMode, EngineConfig, Isolation, Row, StampKind, Store};
use crate::patterns::{PatternKind, PatternProgram, DEFAULT_MAX_RETRIES};
use crate::schedule::{parse_history, History, HistoryError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ScenarioError {
    fn at(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self { line, column, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramSpec {
    pub kind: PatternKind,
    pub label: String,
    pub item: String,
    pub delta: i64,
    pub isolation: Option<Isolation>,
    pub retries: usize,
}

#[derive(Debug, Clone)]
pub enum Body {
    History(History),
    Programs { programs: Vec<ProgramSpec>, schedule: Option<Vec<usize>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Eq,
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expectation {
    /// Key without the `expect.` prefix, e.g. `final.x`.
    pub key: String,
    pub comparison: Comparison,
    pub value: String,
    pub line: usize,
}

impl Expectation {
    pub fn is_sweep(&self) -> bool {
        self.key.starts_with("sweep.")
    }

    /// Whether `actual` satisfies the expectation; numeric comparisons for `>=`/`<=`,
    /// case-insensitive text equality otherwise.
    pub fn accepts(&self, actual: &str) -> bool {
        match self.comparison {
            Comparison::Eq => match (self.value.parse::<i64>(), actual.parse::<i64>()) {
                (Ok(e), Ok(a)) => e == a,
                _ => self.value.eq_ignore_ascii_case(actual),
            },
            Comparison::AtLeast | Comparison::AtMost => match (self.value.parse::<i64>(), actual.parse::<i64>()) {
                (Ok(e), Ok(a)) if self.comparison == Comparison::AtLeast => a >= e,
                (Ok(e), Ok(a)) => a <= e,
                _ => false,
            },
        }
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::Eq => "",
            Comparison::AtLeast => ">=",
            Comparison::AtMost => "<=",
        };
        write!(f, "{op}{}", self.value)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub cc_mode: CcMode,
    pub stamping: StampKind,
    pub isolation: Option<Isolation>,
    pub resolution: u64,
    pub rows: Vec<Row>,
    pub body: Body,
    pub expectations: Vec<Expectation>,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub cc_mode: Option<CcMode>,
    pub stamping: Option<StampKind>,
    pub isolation: Option<Isolation>,
}

impl Scenario {
    pub fn config(&self) -> EngineConfig {
        EngineConfig::new(self.cc_mode, self.stamping).with_resolution(self.resolution)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(m) = o.cc_mode {
            self.cc_mode = m;
        }
        if let Some(s) = o.stamping {
            self.stamping = s;
        }
        if let Some(i) = o.isolation {
            self.isolation = Some(i);
        }
    }

    /// Initial store; rows take the configured stamp kind. Without rows, every
    /// referenced item becomes a `items|<item>|value=0` row.
    pub fn store(&self) -> Store {
        if self.rows.is_empty() {
            let history = match &self.body {
                Body::History(h) => h.clone(),
                Body::Programs { programs, .. } => {
                    let ops = programs.iter().map(|p| crate::schedule::Operation::read(&p.label, &p.item)).collect();
                    History::new(ops)
                }
            };
            return crate::schedule::default_store(&history, &self.config());
        }
        let mut store = Store::new();
        for row in &self.rows {
            store.insert(row.clone());
        }
        store.restamp(self.stamping)
    }

    /// Isolation for a program: its own, else the scenario's, else the weakest
    /// level the pattern accepts.
    pub fn program_isolation(&self, spec: &ProgramSpec) -> Isolation {
        spec.isolation.or(self.isolation).unwrap_or(match (spec.kind, self.cc_mode) {
            (PatternKind::Reselect, CcMode::Lscc) => Isolation::RepeatableRead,
            (PatternKind::Reselect, CcMode::Mvcc) => Isolation::Snapshot,
            _ => Isolation::ReadCommitted,
        })
    }

    pub fn build_program(&self, spec: &ProgramSpec) -> PatternProgram {
        PatternProgram::new(spec.kind, &spec.label, &spec.item, spec.delta)
            .with_isolation(self.program_isolation(spec))
            .with_max_retries(spec.retries)
    }
}

#[derive(Default)]
struct Draft {
    name: Option<String>,
    cc_mode: Option<CcMode>,
    stamping: Option<StampKind>,
    isolation: Option<Isolation>,
    resolution: Option<u64>,
    rows: Vec<Row>,
    history: Vec<(usize, usize, String)>,
    programs: Vec<(usize, ProgramSpec)>,
    schedule: Option<(usize, usize, String)>,
    expectations: Vec<Expectation>,
}

fn set_once<T>(slot: &mut Option<T>, value: T, key: &str, line: usize) -> Result<(), ScenarioError> {
    if slot.is_some() {
        return Err(ScenarioError::at(line, 1, format!("`{key}` is given twice")));
    }
    *slot = Some(value);
    Ok(())
}

fn parse_program(value: &str, line: usize, col: usize) -> Result<ProgramSpec, ScenarioError> {
    let err = |m: String| ScenarioError::at(line, col, m);
    let mut words = value.split_whitespace();
    let kind: PatternKind = words
        .next()
        .ok_or_else(|| err("expected `<pattern> <label> item=<item> delta=<n>`".into()))?
        .parse()
        .map_err(err)?;
    let label = words.next().ok_or_else(|| err("program needs a label".into()))?.to_string();
    if !label.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(err(format!("label `{label}` must be alphanumeric")));
    }
    let mut spec =
        ProgramSpec { kind, label, item: String::new(), delta: 0, isolation: None, retries: DEFAULT_MAX_RETRIES };
    for word in words {
        let (k, v) = word.split_once('=').ok_or_else(|| err(format!("expected key=value, found `{word}`")))?;
        match k {
            "item" => spec.item = v.to_string(),
            "delta" => spec.delta = v.parse().map_err(|_| err(format!("delta `{v}` is not an integer")))?,
            "iso" => spec.isolation = Some(v.parse().map_err(err)?),
            "retries" => spec.retries = v.parse().map_err(|_| err(format!("retries `{v}` is not a count")))?,
            _ => return Err(err(format!("unknown program attribute `{k}`"))),
        }
    }
    if spec.item.is_empty() {
        return Err(err("program needs item=<item>".into()));
    }
    Ok(spec)
}

fn parse_expectation(key: &str, value: &str, line: usize) -> Expectation {
    let (comparison, value) = if let Some(v) = value.strip_prefix(">=") {
        (Comparison::AtLeast, v.trim())
    } else if let Some(v) = value.strip_prefix("<=") {
        (Comparison::AtMost, v.trim())
    } else {
        (Comparison::Eq, value)
    };
    Expectation { key: key.to_string(), comparison, value: value.to_string(), line }
}

pub fn parse_scenario(text: &str, default_name: &str) -> Result<Scenario, ScenarioError> {
    let mut d = Draft::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indent = raw.len() - trimmed.len();
        let Some((key, rest)) = trimmed.split_once('=') else {
            return Err(ScenarioError::at(line, indent + 1, "expected `key = value`"));
        };
        let key = key.trim();
        let eq = raw.find('=').expect("split on `=`");
        let value_col = raw[..eq].chars().count() + 1 + (rest.len() - rest.trim_start().len()) + 1;
        // `history` keeps its value verbatim (it has its own comments); others drop a trailing comment.
        let value = if key == "history" { rest.trim() } else { rest.split_once('#').map_or(rest, |(v, _)| v).trim() };
        let bad = |m: String| ScenarioError::at(line, value_col, m);
        match key {
            "name" => set_once(&mut d.name, value.to_string(), key, line)?,
            "engine" => set_once(&mut d.cc_mode, value.parse().map_err(bad)?, key, line)?,
            "stamp" => set_once(&mut d.stamping, value.parse().map_err(bad)?, key, line)?,
            "iso" => set_once(&mut d.isolation, value.parse().map_err(bad)?, key, line)?,
            "resolution" => {
                let r: u64 =
                    value.parse().map_err(|_| bad(format!("resolution `{value}` is not a positive integer")))?;
                if r == 0 {
                    return Err(bad("resolution must be at least 1".into()));
                }
                set_once(&mut d.resolution, r, key, line)?
            }
            "row" => d.rows.push(value.parse().map_err(bad)?),
            "history" => d.history.push((line, value_col, value.to_string())),
            "program" => d.programs.push((line, parse_program(value, line, value_col)?)),
            "schedule" => set_once(&mut d.schedule, (line, value_col, value.to_string()), key, line)?,
            k if k.starts_with("expect.") && k.len() > "expect.".len() => {
                d.expectations.push(parse_expectation(&k["expect.".len()..], value, line))
            }
            _ => return Err(ScenarioError::at(line, indent + 1, format!("unknown key `{key}`"))),
        }
    }

    let body = match (d.history.is_empty(), d.programs.is_empty()) {
        (false, false) => {
            return Err(ScenarioError::at(d.programs[0].0, 1, "a scenario has either a history or programs, not both"))
        }
        (true, true) => return Err(ScenarioError::at(1, 1, "scenario has neither `history` nor `program` lines")),
        (false, true) => {
            let text: Vec<&str> = d.history.iter().map(|(_, _, t)| t.as_str()).collect();
            match parse_history(&text.join("\n")) {
                Ok(h) => Body::History(h),
                Err(e) => {
                    let (line, column) = e.position();
                    // An empty history reports the line after the last one.
                    let (file_line, col, _) = &d.history[(line - 1).min(d.history.len() - 1)];
                    let message = match &e {
                        HistoryError::Parse(p) => {
                            let text = p.to_string();
                            text.split_once(": ").map_or(text.clone(), |(_, m)| m.to_string())
                        }
                        HistoryError::IllFormed { error, .. } => error.to_string(),
                    };
                    return Err(ScenarioError::at(*file_line, col + column - 1, message));
                }
            }
        }
        (true, false) => {
            let mut labels: Vec<&str> = Vec::new();
            for (line, p) in &d.programs {
                if labels.contains(&p.label.as_str()) {
                    return Err(ScenarioError::at(*line, 1, format!("program label `{}` is used twice", p.label)));
                }
                labels.push(&p.label);
            }
            let schedule = match &d.schedule {
                None => None,
                Some((line, col, text)) => {
                    let mut out = Vec::new();
                    for word in text.split(|c: char| c.is_whitespace() || c == ',').filter(|w| !w.is_empty()) {
                        let idx = labels.iter().position(|l| *l == word).ok_or_else(|| {
                            ScenarioError::at(*line, *col, format!("schedule names unknown program `{word}`"))
                        })?;
                        out.push(idx);
                    }
                    Some(out)
                }
            };
            Body::Programs { programs: d.programs.into_iter().map(|(_, p)| p).collect(), schedule }
        }
    };
    if let (Body::History(_), Some((line, _, _))) = (&body, &d.schedule) {
        return Err(ScenarioError::at(*line, 1, "`schedule` applies to programs; a history is its own schedule"));
    }

    Ok(Scenario {
        name: d.name.unwrap_or_else(|| default_name.to_string()),
        cc_mode: d.cc_mode.unwrap_or(CcMode::Lscc),
        stamping: d.stamping.unwrap_or(StampKind::Counter),
        isolation: d.isolation,
        resolution: d.resolution.unwrap_or(1),
        rows: d.rows,
        body,
        expectations: d.expectations,
    })
}
