//! Command-line front end. Every command returns a process exit code.

use crate::analyzer::{self, campaign, limits, profile, AnalyzerError};
use crate::checkers::{check_agreement, check_linearizable, check_sec, detect_progress, detect_split_brain, Verdict};
use crate::config::RunConfig;
use crate::mechanisms::{self, MechanismKind};
use crate::model::{OpId, WriterId};
use crate::runner::RunOutput;
use crate::simnet::{format_digest, trace_digest};
use clap::{Parser, Subcommand};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

pub mod exit {
    pub const PASS: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const TIMEOUT: i32 = 3;
    pub const COVERAGE: i32 = 4;
    pub const DIVERGED: i32 = 5;
}

pub const TRACE_HEADER: &str = "#syncframe-trace v1";

#[derive(Parser, Debug)]
#[command(name = "syncframe", version, about = "Simulate, profile and check synchronization mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a JSON run configuration and write trace, history and verdicts.
    Simulate { config: PathBuf },
    /// Derive a mechanism's profile and diff it against the golden table.
    Profile {
        /// Mechanism name, or `all`.
        mechanism: String,
        #[arg(long)]
        n: usize,
    },
    /// Check the limit formulas against enumeration oracles.
    VerifyLimits {
        #[arg(long)]
        n_max: usize,
    },
    /// Re-execute a trace file and compare it record by record.
    Replay { trace: PathBuf },
    /// Crash-fault campaign over seeds `0..seeds`.
    Campaign {
        mechanism: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        f: usize,
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Parses `args` (including the program name) and dispatches.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::PASS };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match cli.command {
        Command::Simulate { config } => cmd_simulate(&config, out, err),
        Command::Profile { mechanism, n } => cmd_profile(&mechanism, n, out, err),
        Command::VerifyLimits { n_max } => cmd_verify_limits(n_max, out, err),
        Command::Replay { trace } => cmd_replay(&trace, out, err),
        Command::Campaign { mechanism, n, f, seeds, jobs } => cmd_campaign(&mechanism, n, f, seeds, jobs, out, err),
    }
}

fn parse_kind(name: &str, err: &mut dyn Write) -> Option<MechanismKind> {
    match name.parse::<MechanismKind>() {
        Ok(k) => Some(k),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            None
        }
    }
}

/// Trace file contents: header, embedded config, records, digest.
pub fn render_trace(config: &RunConfig, out: &RunOutput) -> String {
    let mut s = format!("{TRACE_HEADER}\n#config {}\n", config.to_json());
    for line in out.trace_lines() {
        s.push_str(&line);
        s.push('\n');
    }
    s.push_str(&format!("#digest {}\n", format_digest(out.digest)));
    s
}

fn json_lines<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
}

/// Runs the checkers named in `config` against `out`.
pub fn run_checkers(config: &RunConfig, out: &RunOutput) -> Vec<Verdict> {
    let n = config.sim.n;
    let workload = config.to_workload();
    config
        .checkers
        .iter()
        .map(|name| match name.as_str() {
            "linearizable" => check_linearizable(&out.history, config.mechanism.default_projection())
                .unwrap_or_else(|e| Verdict::fail("linearizable", e.to_string())),
            "sec" => {
                let live: Vec<WriterId> = out.live.iter().copied().collect();
                let regs: Vec<_> = live.iter().map(|&w| out.registers[w].clone()).collect();
                let delivered: Vec<BTreeSet<OpId>> = match &out.delivered {
                    Some(d) => live.iter().map(|&w| d[w].clone()).collect(),
                    None => regs.iter().map(|r| r.series().iter().map(|op| op.id()).collect()).collect(),
                };
                check_sec(&regs, &delivered)
            }
            "split-brain" => detect_split_brain(&out.registers, &(0..n).collect()),
            "agreement" => check_agreement(&out.registers, &out.live),
            "progress" => detect_progress(&out.history, &workload, out.end_tick),
            other => Verdict::fail(other, "unknown checker".into()),
        })
        .collect()
}

fn write_outputs(config: &RunConfig, out: &RunOutput, verdicts: &[Verdict]) -> std::io::Result<()> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trace.log"), render_trace(config, out))?;
    std::fs::write(dir.join("history.log"), json_lines(&out.history.events))?;
    std::fs::write(dir.join("passes.log"), json_lines(&out.passes))?;
    std::fs::write(dir.join("digest.txt"), format_digest(out.digest) + "\n")?;
    std::fs::write(dir.join("verdicts.log"), verdicts.iter().map(|v| format!("{v}\n")).collect::<String>())
}

pub fn cmd_simulate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let config = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "config error in {}: {e}", path.display());
            return exit::CONFIG;
        }
    };
    let (output, timed_out) = match mechanisms::run(config.mechanism, &config.params, &config.sim, &config.to_workload()) {
        Ok(o) => (o, None),
        Err(f) => match f.partial {
            Some(p) => (*p, Some(f.error)),
            None => {
                let _ = writeln!(err, "error: {}", f.error);
                return exit::CONFIG;
            }
        },
    };
    let verdicts = run_checkers(&config, &output);
    if let Err(e) = write_outputs(&config, &output, &verdicts) {
        let _ = writeln!(err, "cannot write to {}: {e}", config.output_dir.display());
        return exit::CONFIG;
    }
    for v in &verdicts {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(out, "digest {}", format_digest(output.digest));
    if let Some(e) = timed_out {
        let _ = writeln!(err, "error: {e}");
        return exit::TIMEOUT;
    }
    if verdicts.iter().all(Verdict::is_pass) { exit::PASS } else { exit::CHECK_FAILED }
}

pub fn cmd_profile(mechanism: &str, n: usize, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if n < 3 {
        let _ = writeln!(err, "error: --n must be at least 3");
        return exit::CONFIG;
    }
    let kinds = if mechanism == "all" {
        profile::golden_kinds()
    } else {
        match parse_kind(mechanism, err) {
            Some(k) => vec![k],
            None => return exit::CONFIG,
        }
    };
    let mut code = exit::PASS;
    let mut table = Vec::new();
    for kind in kinds {
        match analyzer::profile_mechanism(kind, n) {
            Ok(cmp) => {
                for row in cmp.derived_rows() {
                    let _ = writeln!(out, "{row}");
                }
                for d in cmp.diff() {
                    let _ = writeln!(err, "{d}");
                }
                if !cmp.matches() {
                    code = code.max(exit::CHECK_FAILED);
                }
                table.push((kind, cmp.derived));
            }
            Err(e @ AnalyzerError::IncompleteCoverage { .. }) => {
                let _ = writeln!(err, "error: {e}");
                code = code.max(exit::COVERAGE);
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = code.max(exit::CONFIG);
            }
        }
    }
    let _ = write!(out, "\n{}", profile::comparison_table(&table));
    code
}

pub fn cmd_verify_limits(n_max: usize, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if !(2..=12).contains(&n_max) {
        let _ = writeln!(err, "error: --n-max must be within 2..=12");
        return exit::CONFIG;
    }
    let summary = limits::verify_limits(n_max);
    let _ = writeln!(out, "# dynamic arbiter: n|q|f|formula|oracle|witness");
    for r in &summary.dynamic {
        let _ = writeln!(out, "{r}");
    }
    let _ = writeln!(out, "# static arbiter: n|q|f|formula|oracle|witness");
    for r in &summary.statics {
        let _ = writeln!(out, "{r}");
    }
    for v in &summary.verdicts {
        let _ = writeln!(out, "{v}");
    }
    let bad = summary.disagreements();
    let _ = writeln!(out, "disagreements {bad}");
    if bad == 0 { exit::PASS } else { exit::CHECK_FAILED }
}

pub fn cmd_replay(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "cannot read {}: {e}", path.display());
            return exit::CONFIG;
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    let malformed = |err: &mut dyn Write, what: &str| {
        let _ = writeln!(err, "malformed trace {}: {what}", path.display());
        exit::CONFIG
    };
    if lines.first() != Some(&TRACE_HEADER) {
        return malformed(err, "missing header");
    }
    let Some(config_json) = lines.get(1).and_then(|l| l.strip_prefix("#config ")) else {
        return malformed(err, "missing #config line");
    };
    let Some(stored_digest) = lines.last().and_then(|l| l.strip_prefix("#digest ")) else {
        return malformed(err, "missing #digest line (truncated?)");
    };
    let config = match RunConfig::parse(config_json) {
        Ok(c) => c,
        Err(e) => return malformed(err, &format!("embedded config: {e}")),
    };
    let recorded = &lines[2..lines.len() - 1];
    let fresh = match mechanisms::run(config.mechanism, &config.params, &config.sim, &config.to_workload()) {
        Ok(o) => o,
        Err(f) => match f.partial {
            Some(p) => *p,
            None => return malformed(err, &f.error.to_string()),
        },
    };
    let lines_now = fresh.trace_lines();
    for i in 0..recorded.len().max(lines_now.len()) {
        let (a, b) = (recorded.get(i).copied(), lines_now.get(i).map(String::as_str));
        if a != b {
            let _ = writeln!(err, "diverged at record {i}");
            let _ = writeln!(err, "  recorded: {}", a.unwrap_or("<end of trace>"));
            let _ = writeln!(err, "  replayed: {}", b.unwrap_or("<end of trace>"));
            return exit::DIVERGED;
        }
    }
    let digest = format_digest(trace_digest(recorded));
    if digest != stored_digest {
        let _ = writeln!(err, "digest mismatch: recorded {stored_digest}, replayed {digest}");
        return exit::DIVERGED;
    }
    let _ = writeln!(out, "replay ok {digest} ({} records)", recorded.len());
    exit::PASS
}

pub fn cmd_campaign(mechanism: &str, n: usize, f: usize, seeds: u64, jobs: usize, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(kind) = parse_kind(mechanism, err) else {
        return exit::CONFIG;
    };
    if n == 0 || f >= n {
        let _ = writeln!(err, "error: need 0 <= f < n");
        return exit::CONFIG;
    }
    let seeds: Vec<u64> = (0..seeds).collect();
    let summary = campaign::fault_campaign(kind, n, f, &seeds, jobs);
    for r in summary.details.iter().filter(|r| !r.progress_ok || !r.safety_ok) {
        let _ = writeln!(out, "{r}");
    }
    let _ = writeln!(out, "{summary}");
    if summary.progress_failures + summary.safety_failures == 0 { exit::PASS } else { exit::CHECK_FAILED }
}
