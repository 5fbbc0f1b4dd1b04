//! `rvv` command-line front end: run scenarios, sweep their interleavings, report.

pub mod builtins;
pub mod report;
pub mod scenario;

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::Path;

use clap::{Parser, Subcommand, ValueEnum};

use crate::engine::{CcMode, Engine, Isolation, StampKind};
use crate::schedule::{
    analyze, enumerate_interleavings, precheck, programs_from_history, run_programs, ExecError, ExecOptions,
    Exploration, Program,
};
pub use report::{RunReport, SweepReport};
pub use scenario::{parse_scenario, Body, Overrides, Scenario, ScenarioError};

/// Exit status: the run matched its expectations (or had none).
pub const EXIT_MATCH: i32 = 0;
/// Exit status: an expectation failed or the schedule got stuck.
pub const EXIT_MISMATCH: i32 = 1;
/// Exit status: bad arguments, unreadable or malformed input.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "rvv", version, about = "Row version verification and lost-update playground")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Concurrency control: lscc or mvcc.
    #[arg(long, global = true)]
    pub engine: Option<CcMode>,
    /// Stamping: counter, coarse, scn or rowversion.
    #[arg(long, global = true)]
    pub stamp: Option<StampKind>,
    /// Default isolation: rc, rr, snap or ser.
    #[arg(long, global = true)]
    pub iso: Option<Isolation>,
    /// Sample at most N interleavings instead of enumerating all.
    #[arg(long, global = true, value_name = "N")]
    pub limit: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub report: ReportFormat,
    /// Seed for sampled interleavings.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file or built-in scenario once.
    Run { scenario: String },
    /// Run a scenario under every interleaving of its transactions.
    Sweep { scenario: String },
    /// List the built-in scenarios.
    List,
}

/// Loads a scenario by built-in name or file path.
pub fn load_scenario(name: &str) -> Result<Scenario, String> {
    let (text, default_name, origin) = match builtins::builtin(name) {
        Some(text) => (text, name.to_string(), name.to_string()),
        None => {
            let path = Path::new(name);
            let bytes = std::fs::read(path).map_err(|e| format!("{name}: {e} (and no built-in has that name)"))?;
            let text = String::from_utf8(bytes).map_err(|e| {
                let at = e.utf8_error().valid_up_to();
                let before = &e.as_bytes()[..at];
                let line = before.iter().filter(|b| **b == b'\n').count() + 1;
                let col = at - before.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1) + 1;
                format!("{name}:{line}:{col}: invalid UTF-8")
            })?;
            let stem = path.file_stem().map_or(name.to_string(), |s| s.to_string_lossy().into_owned());
            (text, stem, name.to_string())
        }
    };
    parse_scenario(&text, &default_name).map_err(|e| format!("{origin}:{}:{}: {}", e.line, e.column, e.message))
}

fn validate(s: &Scenario) -> Result<(), String> {
    if let Some(iso) = s.isolation {
        if !iso.valid_for(s.cc_mode) {
            return Err(format!("isolation {iso} is not available under {}", s.cc_mode));
        }
    }
    if let Body::Programs { programs, .. } = &s.body {
        for p in programs {
            let iso = s.program_isolation(p);
            if !iso.valid_for(s.cc_mode) {
                return Err(format!("program {}: isolation {iso} is not available under {}", p.label, s.cc_mode));
            }
        }
    }
    Ok(())
}

fn factory(s: &Scenario) -> impl Fn() -> Vec<Box<dyn Program>> + '_ {
    move || match &s.body {
        Body::History(h) => programs_from_history(h, s.isolation.unwrap_or(Isolation::ReadCommitted)).0,
        Body::Programs { programs, .. } => {
            programs.iter().map(|p| Box::new(s.build_program(p)) as Box<dyn Program>).collect()
        }
    }
}

fn schedule_of(s: &Scenario, programs: &[Box<dyn Program>]) -> Vec<usize> {
    match &s.body {
        Body::History(h) => programs_from_history(h, Isolation::ReadCommitted).1,
        Body::Programs { schedule: Some(schedule), .. } => schedule.clone(),
        Body::Programs { schedule: None, .. } => {
            programs.iter().enumerate().flat_map(|(i, p)| std::iter::repeat_n(i, p.slots())).collect()
        }
    }
}

fn options(s: &Scenario) -> ExecOptions {
    ExecOptions { default_isolation: s.isolation, check_invariants: true }
}

/// Executes the scenario once on a fresh engine.
pub fn run_scenario(s: &Scenario) -> Result<RunReport, ExecError> {
    if let Body::History(h) = &s.body {
        precheck(h, &s.config(), &s.store())?;
    }
    let mut engine = Engine::new(s.config(), s.store())?;
    let mut programs = factory(s)();
    let schedule = schedule_of(s, &programs);
    let (trace, stuck) = match run_programs(&mut engine, &mut programs, &schedule, options(s)) {
        Ok(trace) => (trace, None),
        Err(ExecError::StuckSchedule { blocked, trace }) => (*trace, Some(blocked)),
        Err(e) => return Err(e),
    };
    let anomalies = analyze(&trace);
    Ok(RunReport::new(s, trace, anomalies, &programs, stuck))
}

/// Executes the scenario under every interleaving (or a sample of `limit`).
pub fn sweep_scenario(s: &Scenario, limit: Option<usize>, seed: u64) -> Result<SweepReport, ExecError> {
    let exploration = match limit {
        Some(limit) => Exploration::Sample { limit, seed },
        None => Exploration::Exhaustive,
    };
    let runs = enumerate_interleavings(factory(s), s.config(), s.store(), options(s), exploration)?;
    Ok(SweepReport::collect(s, runs, exploration))
}

fn color_enabled(format: ReportFormat) -> bool {
    format == ReportFormat::Text && std::env::var_os("RVV_NO_COLOR").is_none() && std::io::stdout().is_terminal()
}

/// Runs the command line; returns the process exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_MATCH };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let color = color_enabled(args.report);
    let name = match &args.command {
        Command::List => {
            for (name, text) in builtins::builtins() {
                let about = text.lines().find_map(|l| l.strip_prefix("# ")).unwrap_or("");
                let _ = writeln!(out, "{name:<24} {about}");
            }
            return EXIT_MATCH;
        }
        Command::Run { scenario } | Command::Sweep { scenario } => scenario.clone(),
    };
    let mut scenario = match load_scenario(&name) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    scenario.apply(Overrides { cc_mode: args.engine, stamping: args.stamp, isolation: args.iso });
    if let Err(e) = validate(&scenario) {
        let _ = writeln!(err, "error: {name}: {e}");
        return EXIT_USAGE;
    }

    let result = match args.command {
        Command::Run { .. } => run_scenario(&scenario).map(|r| {
            let text = match args.report {
                ReportFormat::Text => r.text(color),
                ReportFormat::Machine => r.machine(),
            };
            (text, r.matched())
        }),
        Command::Sweep { .. } => sweep_scenario(&scenario, args.limit, args.seed).map(|r| {
            let text = match args.report {
                ReportFormat::Text => r.text(color),
                ReportFormat::Machine => r.machine(),
            };
            (text, r.matched())
        }),
        Command::List => unreachable!("handled above"),
    };
    match result {
        Ok((text, matched)) => {
            let _ = out.write_all(text.as_bytes());
            if matched {
                EXIT_MATCH
            } else {
                EXIT_MISMATCH
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {name}: {e}");
            EXIT_USAGE
        }
    }
}
