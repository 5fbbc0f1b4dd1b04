//! Text and machine reports.
//!
//! Machine reports hold one `|`-separated record per line; the first field names
//! the record:
//!
//! ```text
//! scenario|<name>|<LSCC|MVCC>|<stamp kind>|<iso or default>
//! step|<index>|<op>|<result>|<store digest>
//! txn|<name>|<state>[|<abort cause>]
//! outcome|<label>|<status or error>|final=<n or none>|attempts=<n>
//! lost_update|<victim>|<overwriter>|<item>|<victim write step>
//! edge|<from>|<to>|<item>|<rw|wr|ww>
//! serializable|<true|false>
//! stuck|<blocked txns, comma-separated>
//! row|<store snapshot line>
//! sweep|<name>|<exhaustive|sampled>|interleavings=<n>
//! run|<index>|<schedule labels>|lost=<n>|serializable=<bool>|<item>=<final>...
//! summary|<metric>|<count>
//! final|<item>|<value>|<runs>
//! status|<label>|<status>|<runs>
//! counterexample|<kind>|<schedule labels>|<executed operations>
//! expect|<key>|<expected>|<actual>|<pass|fail>
//! verdict|<match|mismatch|none>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::scenario::{Body, Scenario};
use crate::patterns::{outcome_of, PatternError, PatternOutcome};
use crate::schedule::{
    analyze, AnomalyReport, ExecError, ExecutionTrace, Exploration, Interleaving, Program, StepResult,
};

#[derive(Debug, Clone)]
pub struct Check {
    pub key: String,
    pub expected: String,
    pub actual: String,
    pub passed: bool,
}

fn check_all(s: &Scenario, sweep: bool, actual: impl Fn(&str) -> String) -> Vec<Check> {
    s.expectations
        .iter()
        .filter(|e| e.is_sweep() == sweep)
        .map(|e| {
            let got = actual(&e.key);
            Check { key: e.key.clone(), expected: e.to_string(), passed: e.accepts(&got), actual: got }
        })
        .collect()
}

fn header(s: &Scenario) -> String {
    let iso = s.isolation.map_or("default", |i| i.short());
    format!("{}|{}|{}|{}", s.name, s.cc_mode, s.stamping, iso)
}

fn item_value(trace: &ExecutionTrace, item: &str) -> Option<i64> {
    let store = &trace.final_store;
    let row = store.get(store.resolve(item)?)?;
    row.column(row.primary_column())
}

fn names(list: impl IntoIterator<Item = String>) -> String {
    let mut v: Vec<String> = list.into_iter().collect();
    v.sort();
    v.dedup();
    if v.is_empty() {
        "none".into()
    } else {
        v.join(",")
    }
}

/// Labels of the pattern programs, in declaration order.
fn labels(s: &Scenario) -> Vec<String> {
    match &s.body {
        Body::Programs { programs, .. } => programs.iter().map(|p| p.label.clone()).collect(),
        Body::History(_) => Vec::new(),
    }
}

fn schedule_labels(s: &Scenario, programs: &[Box<dyn Program>], schedule: &[usize]) -> String {
    let _ = s;
    schedule.iter().map(|&i| programs[i].label().to_string()).collect::<Vec<_>>().join(" ")
}

fn executed_history(trace: &ExecutionTrace) -> String {
    trace
        .steps
        .iter()
        .filter(|st| !matches!(st.result, StepResult::Blocked | StepResult::Skipped(_) | StepResult::Failed(_)))
        .map(|st| st.op.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn outcome_text(o: &Result<PatternOutcome, PatternError>) -> (String, String, usize) {
    match o {
        Ok(o) => (o.status.to_string(), o.final_value.map_or("none".into(), |v| v.to_string()), o.attempts),
        Err(e) => (format!("error: {e}"), "none".into(), 0),
    }
}

fn paint(text: &str, passed: bool, color: bool) -> String {
    if color {
        let code = if passed { 32 } else { 31 };
        format!("\x1b[{code}m{text}\x1b[0m")
    } else {
        text.to_string()
    }
}

fn verdict(checks: &[Check], stuck: bool) -> &'static str {
    if stuck || checks.iter().any(|c| !c.passed) {
        "mismatch"
    } else if checks.is_empty() {
        "none"
    } else {
        "match"
    }
}

pub struct RunReport {
    pub header: String,
    pub trace: ExecutionTrace,
    pub anomalies: AnomalyReport,
    pub outcomes: Vec<(String, Result<PatternOutcome, PatternError>)>,
    pub stuck: Option<Vec<String>>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn new(
        s: &Scenario,
        trace: ExecutionTrace,
        anomalies: AnomalyReport,
        programs: &[Box<dyn Program>],
        stuck: Option<Vec<String>>,
    ) -> Self {
        let outcomes: Vec<_> = labels(s).into_iter().filter_map(|l| outcome_of(programs, &l).map(|o| (l, o))).collect();
        let checks = check_all(s, false, |key| {
            let (head, rest) = key.split_once('.').unwrap_or((key, ""));
            match head {
                "final" => item_value(&trace, rest).map_or("missing".into(), |v| v.to_string()),
                "lost_updates" => anomalies.lost_updates.len().to_string(),
                "lost_victims" => names(anomalies.lost_updates.iter().map(|l| l.victim.clone())),
                "serializable" => anomalies.serializable.to_string(),
                "deadlock_victims" => names(trace.deadlock_victims().into_iter().map(str::to_string)),
                "state" => trace.txn_states.get(rest).map_or("none".into(), |st| st.to_string()),
                "status" | "attempts" => match outcomes.iter().find(|(l, _)| l == rest) {
                    Some((_, o)) => {
                        let (status, _, attempts) = outcome_text(o);
                        if head == "status" {
                            status
                        } else {
                            attempts.to_string()
                        }
                    }
                    None => "none".into(),
                },
                "stuck" => stuck.is_some().to_string(),
                _ => "unknown-key".into(),
            }
        });
        Self { header: header(s), trace, anomalies, outcomes, stuck, checks }
    }

    pub fn matched(&self) -> bool {
        verdict(&self.checks, self.stuck.is_some()) != "mismatch"
    }

    pub fn machine(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario|{}", self.header);
        for step in &self.trace.steps {
            let _ = writeln!(out, "step|{step}");
        }
        for (name, state) in &self.trace.txn_states {
            match self.trace.abort_causes.get(name) {
                Some(cause) => writeln!(out, "txn|{name}|{state}|{cause}"),
                None => writeln!(out, "txn|{name}|{state}"),
            }
            .ok();
        }
        for (label, o) in &self.outcomes {
            let (status, value, attempts) = outcome_text(o);
            let _ = writeln!(out, "outcome|{label}|{status}|final={value}|attempts={attempts}");
        }
        for l in &self.anomalies.lost_updates {
            let _ = writeln!(out, "lost_update|{}|{}|{}|{}", l.victim, l.overwriter, l.item, l.victim_write_step);
        }
        for e in &self.anomalies.edges {
            let _ = writeln!(out, "edge|{}|{}|{}|{}", e.from, e.to, e.item, e.kind.as_str());
        }
        let _ = writeln!(out, "serializable|{}", self.anomalies.serializable);
        if let Some(blocked) = &self.stuck {
            let _ = writeln!(out, "stuck|{}", blocked.join(","));
        }
        for row in self.trace.final_store.rows() {
            let _ = writeln!(out, "row|{row}");
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "expect|{}|{}|{}|{}",
                c.key,
                c.expected,
                c.actual,
                if c.passed { "pass" } else { "fail" }
            );
        }
        let _ = writeln!(out, "verdict|{}", verdict(&self.checks, self.stuck.is_some()));
        out
    }

    pub fn text(&self, color: bool) -> String {
        let mut out = String::new();
        let parts: Vec<&str> = self.header.split('|').collect();
        let _ = writeln!(out, "scenario {} ({}, {} stamps, isolation {})", parts[0], parts[1], parts[2], parts[3]);
        let _ = writeln!(out, "\ntrace");
        for step in &self.trace.steps {
            let blocked =
                if step.blocked.is_empty() { String::new() } else { format!("  waiting: {}", step.blocked.join(",")) };
            let _ = writeln!(out, "  {:>3}  {:<12} {}{}", step.index, step.op.to_string(), step.result, blocked);
        }
        let _ = writeln!(out, "\ntransactions");
        for (name, state) in &self.trace.txn_states {
            let cause = self.trace.abort_causes.get(name).map_or(String::new(), |c| format!(" ({c})"));
            let _ = writeln!(out, "  {name:<6} {state}{cause}");
        }
        if !self.outcomes.is_empty() {
            let _ = writeln!(out, "\noutcomes");
            for (label, o) in &self.outcomes {
                let (status, value, attempts) = outcome_text(o);
                let _ = writeln!(out, "  {label:<6} {status}  final={value}  attempts={attempts}");
                if let Ok(o) = o {
                    for (before, now) in &o.observed_stamps {
                        let _ = writeln!(out, "         stamp read {before}, found {now}");
                    }
                }
            }
        }
        let _ = writeln!(out, "\nanomalies");
        if self.anomalies.lost_updates.is_empty() {
            let _ = writeln!(out, "  no lost update");
        }
        for l in &self.anomalies.lost_updates {
            let _ = writeln!(out, "  lost update: {l}");
        }
        let edges: Vec<String> = self.anomalies.edges.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "  conflict graph: {}", if edges.is_empty() { "empty".into() } else { edges.join(" ") });
        let _ = writeln!(out, "  conflict-serializable: {}", if self.anomalies.serializable { "yes" } else { "no" });
        if let Some(blocked) = &self.stuck {
            let _ = writeln!(out, "  schedule stuck: {} blocked with no deadlock", blocked.join(", "));
        }
        let _ = writeln!(out, "\nfinal store");
        for row in self.trace.final_store.rows() {
            let _ = writeln!(out, "  {row}");
        }
        write_checks(&mut out, &self.checks, verdict(&self.checks, self.stuck.is_some()), color);
        out
    }
}

fn write_checks(out: &mut String, checks: &[Check], verdict: &str, color: bool) {
    if !checks.is_empty() {
        let _ = writeln!(out, "\nexpectations");
        for c in checks {
            let mark = paint(if c.passed { "PASS" } else { "FAIL" }, c.passed, color);
            let _ = writeln!(out, "  {mark}  {} = {} (got {})", c.key, c.expected, c.actual);
        }
    }
    let _ = writeln!(out, "\nverdict: {}", paint(verdict, verdict != "mismatch", color));
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub schedule: String,
    pub lost_updates: usize,
    pub serializable: bool,
    pub deadlock: bool,
    pub error: Option<String>,
    pub finals: BTreeMap<String, i64>,
    pub history: String,
}

pub struct SweepReport {
    pub header: String,
    pub sampled: bool,
    pub runs: Vec<SweepRun>,
    pub statuses: BTreeMap<(String, String), usize>,
    pub finals: BTreeMap<(String, i64), usize>,
    pub checks: Vec<Check>,
}

impl SweepReport {
    pub fn collect(s: &Scenario, runs: impl Iterator<Item = Interleaving>, exploration: Exploration) -> Self {
        let items: Vec<String> = match &s.body {
            Body::History(h) => h.items().into_iter().collect(),
            Body::Programs { programs, .. } => {
                let mut v: Vec<String> = programs.iter().map(|p| p.item.clone()).collect();
                v.sort();
                v.dedup();
                v
            }
        };
        let label_list = labels(s);
        let mut out = Vec::new();
        let mut statuses = BTreeMap::new();
        let mut finals = BTreeMap::new();
        for run in runs {
            let schedule = schedule_labels(s, &run.programs, &run.schedule);
            for l in &label_list {
                if let Some(o) = outcome_of(&run.programs, l) {
                    *statuses.entry((l.clone(), outcome_text(&o).0)).or_insert(0) += 1;
                }
            }
            let (trace, error) = match run.result {
                Ok(t) => (Some(t), None),
                Err(ExecError::StuckSchedule { trace, .. }) => (Some(*trace), Some("stuck".to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            let mut r = SweepRun {
                schedule,
                lost_updates: 0,
                serializable: true,
                deadlock: false,
                error,
                finals: BTreeMap::new(),
                history: String::new(),
            };
            if let Some(trace) = trace {
                let a = analyze(&trace);
                r.lost_updates = a.lost_updates.len();
                r.serializable = a.serializable;
                r.deadlock = !trace.deadlock_victims().is_empty();
                r.history = executed_history(&trace);
                for item in &items {
                    if let Some(v) = item_value(&trace, item) {
                        r.finals.insert(item.clone(), v);
                        *finals.entry((item.clone(), v)).or_insert(0) += 1;
                    }
                }
            }
            out.push(r);
        }
        let mut report = Self {
            header: header(s),
            sampled: matches!(exploration, Exploration::Sample { .. }),
            runs: out,
            statuses,
            finals,
            checks: Vec::new(),
        };
        report.checks = check_all(s, true, |key| report.metric(key.trim_start_matches("sweep.")));
        report
    }

    fn metric(&self, key: &str) -> String {
        let count = |f: &dyn Fn(&SweepRun) -> bool| self.runs.iter().filter(|r| f(r)).count().to_string();
        match key.split_once('.') {
            Some(("final", item)) => {
                let values: Vec<i64> = self.finals.keys().filter(|(i, _)| i == item).map(|(_, v)| *v).collect();
                match values[..] {
                    [] => "missing".into(),
                    [v] => v.to_string(),
                    _ => "mixed".into(),
                }
            }
            _ => match key {
                "interleavings" => self.runs.len().to_string(),
                "lost_update_runs" => count(&|r| r.lost_updates > 0),
                "nonserializable_runs" => count(&|r| !r.serializable),
                "deadlock_runs" => count(&|r| r.deadlock),
                "failed_runs" => count(&|r| r.error.is_some()),
                _ => "unknown-key".into(),
            },
        }
    }

    pub fn matched(&self) -> bool {
        verdict(&self.checks, false) != "mismatch"
    }

    fn summary(&self) -> Vec<(&'static str, String)> {
        ["interleavings", "lost_update_runs", "nonserializable_runs", "deadlock_runs", "failed_runs"]
            .into_iter()
            .map(|k| (k, self.metric(k)))
            .collect()
    }

    fn counterexamples(&self) -> Vec<(&'static str, &SweepRun)> {
        let mut out = Vec::new();
        if let Some(r) = self.runs.iter().find(|r| r.lost_updates > 0) {
            out.push(("lost_update", r));
        }
        if let Some(r) = self.runs.iter().find(|r| !r.serializable) {
            out.push(("nonserializable", r));
        }
        if let Some(r) = self.runs.iter().find(|r| r.error.is_some()) {
            out.push(("failed", r));
        }
        out
    }

    pub fn machine(&self) -> String {
        let mut out = String::new();
        let mode = if self.sampled { "sampled" } else { "exhaustive" };
        let name = self.header.split('|').next().unwrap_or("");
        let _ = writeln!(out, "scenario|{}", self.header);
        let _ = writeln!(out, "sweep|{name}|{mode}|interleavings={}", self.runs.len());
        for (i, r) in self.runs.iter().enumerate() {
            let finals: Vec<String> = r.finals.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let err = r.error.as_ref().map_or(String::new(), |e| format!("|error={e}"));
            let _ = writeln!(
                out,
                "run|{i}|{}|lost={}|serializable={}|{}{err}",
                r.schedule,
                r.lost_updates,
                r.serializable,
                finals.join("|")
            );
        }
        for (k, v) in self.summary() {
            let _ = writeln!(out, "summary|{k}|{v}");
        }
        for ((item, value), n) in &self.finals {
            let _ = writeln!(out, "final|{item}|{value}|{n}");
        }
        for ((label, status), n) in &self.statuses {
            let _ = writeln!(out, "status|{label}|{status}|{n}");
        }
        for (kind, r) in self.counterexamples() {
            let _ = writeln!(out, "counterexample|{kind}|{}|{}", r.schedule, r.history);
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "expect|{}|{}|{}|{}",
                c.key,
                c.expected,
                c.actual,
                if c.passed { "pass" } else { "fail" }
            );
        }
        let _ = writeln!(out, "verdict|{}", verdict(&self.checks, false));
        out
    }

    pub fn text(&self, color: bool) -> String {
        let mut out = String::new();
        let parts: Vec<&str> = self.header.split('|').collect();
        let mode = if self.sampled { "sampled" } else { "all" };
        let _ = writeln!(
            out,
            "sweep {} ({}, {} stamps, isolation {}): {mode} {} interleavings",
            parts[0],
            parts[1],
            parts[2],
            parts[3],
            self.runs.len()
        );
        let _ = writeln!(out, "\nsummary");
        for (k, v) in self.summary() {
            let _ = writeln!(out, "  {k:<22} {v}");
        }
        let _ = writeln!(out, "\nfinal values");
        for ((item, value), n) in &self.finals {
            let _ = writeln!(out, "  {item:<8} {value:>8}  in {n} runs");
        }
        if !self.statuses.is_empty() {
            let _ = writeln!(out, "\noutcomes");
            for ((label, status), n) in &self.statuses {
                let _ = writeln!(out, "  {label:<6} {status:<22} in {n} runs");
            }
        }
        for (kind, r) in self.counterexamples() {
            let _ = writeln!(out, "\ncounterexample ({kind})\n  schedule: {}\n  executed: {}", r.schedule, r.history);
        }
        write_checks(&mut out, &self.checks, verdict(&self.checks, false), color);
        out
    }
}
