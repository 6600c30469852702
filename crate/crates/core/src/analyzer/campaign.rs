//! Seeded crash-fault campaigns.

use crate::checkers::{check_sec, detect_progress, detect_split_brain};
use crate::mechanisms::{self, MechanismKind, MechanismParams};
use crate::model::WriterId;
use crate::rng::SplitMix64;
use crate::runner::{RunOutput, Workload};
use crate::simnet::{FaultPlan, SimConfig};
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;

const MAX_TICKS: u64 = 20_000;

/// When crashes land relative to the pass they interrupt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashPhase {
    AfterPre,
    MidExe,
    Quiescence,
}

impl CrashPhase {
    pub fn for_seed(seed: u64) -> Self {
        match seed % 3 {
            0 => CrashPhase::AfterPre,
            1 => CrashPhase::MidExe,
            _ => CrashPhase::Quiescence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CampaignRun {
    pub seed: u64,
    pub phase: CrashPhase,
    pub progress_ok: bool,
    pub safety_ok: bool,
    pub detail: String,
}

impl fmt::Display for CampaignRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
        write!(f, "seed={} phase={:?} progress={} safety={} {}", self.seed, self.phase, flag(self.progress_ok), flag(self.safety_ok), self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CampaignSummary {
    pub kind: MechanismKind,
    pub n: usize,
    pub f: usize,
    pub runs: usize,
    pub progress_failures: usize,
    pub safety_failures: usize,
    pub details: Vec<CampaignRun>,
}

impl fmt::Display for CampaignSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|n={}|f={}|runs={}|progress_failures={}|safety_failures={}",
            self.kind, self.n, self.f, self.runs, self.progress_failures, self.safety_failures
        )
    }
}

/// Two halves cut off from each other from the first tick, with one
/// proposer on each side writing a different value to the same key.
pub fn partition_scenario(n: usize, seed: u64) -> (SimConfig, Workload) {
    let half = n / 2;
    let left: BTreeSet<WriterId> = (0..half).collect();
    let right: BTreeSet<WriterId> = (half..n).collect();
    let mut rng = SplitMix64::new(seed);
    let max_delay = rng.range_inclusive(1, 3);
    let config = SimConfig::new(n, seed)
        .with_delays(1, max_delay)
        .with_max_ticks(MAX_TICKS)
        .with_faults(FaultPlan::default().partition(0, vec![left, right]));
    let workload = Workload::new().write(0, 0, 1, 1).write(half, 0, 2, 1);
    (config, workload)
}

/// Random workload plus `f` crash-stop faults for `seed`.
pub fn crash_scenario(kind: MechanismKind, n: usize, f: usize, seed: u64) -> (SimConfig, Workload) {
    let mut rng = SplitMix64::new(seed ^ 0x5eed_cafe);
    let max_delay = rng.range_inclusive(1, 3);
    let phase = CrashPhase::for_seed(seed);
    let mut workload = Workload::new();
    let mut issues = Vec::new();
    for i in 0..6 {
        let writer = rng.range_inclusive(0, n as u64 - 1) as usize;
        let key = rng.range_inclusive(0, 1);
        let tick = rng.range_inclusive(0, 120);
        workload = workload.write(writer, key as u32, 100 + i, tick);
        issues.push(tick);
    }
    if kind.is_linearizable() {
        for _ in 0..2 {
            let writer = rng.range_inclusive(0, n as u64 - 1) as usize;
            workload = workload.read(writer, rng.range_inclusive(0, 1) as u32, rng.range_inclusive(0, 120));
        }
    }
    let mut victims: Vec<WriterId> = (0..n).collect();
    rng.shuffle(&mut victims);
    victims.truncate(f);
    let mut crashes: Vec<(u64, WriterId)> = victims
        .iter()
        .map(|&v| {
            let base = issues[rng.range_inclusive(0, issues.len() as u64 - 1) as usize];
            let tick = match phase {
                CrashPhase::AfterPre => base + 2 * max_delay,
                CrashPhase::MidExe => base + 3 * max_delay,
                CrashPhase::Quiescence => 400 + rng.range_inclusive(0, 20),
            };
            (tick, v)
        })
        .collect();
    crashes.sort();
    if phase == CrashPhase::Quiescence {
        let last = crashes.last().map_or(400, |c| c.0);
        if let Some(survivor) = (0..n).find(|w| !victims.contains(w)) {
            workload = workload.write(survivor, 0, 999, last + 10);
        }
    }
    let plan = crashes.into_iter().fold(FaultPlan::default(), |p, (t, v)| p.crash(t, v));
    let config = SimConfig::new(n, seed).with_delays(1, max_delay).with_max_ticks(MAX_TICKS).with_faults(plan);
    (config, workload)
}

fn judge(kind: MechanismKind, n: usize, out: &RunOutput, workload: &Workload, timed_out: bool) -> (bool, bool, String) {
    let mut notes = Vec::new();
    let mut safety_ok = out.violations.is_empty();
    if let Some(v) = out.violations.first() {
        notes.push(format!("violation: {v}"));
    }
    if kind.is_crdt() {
        let live: Vec<WriterId> = out.live.iter().copied().collect();
        let regs: Vec<_> = live.iter().map(|&w| out.registers[w].clone()).collect();
        let delivered: Vec<_> = out.delivered.as_ref().map(|d| live.iter().map(|&w| d[w].clone()).collect()).unwrap_or_default();
        let v = check_sec(&regs, &delivered);
        safety_ok &= v.is_pass();
        notes.push(v.to_string());
    } else {
        let everyone: BTreeSet<WriterId> = (0..n).collect();
        let v = detect_split_brain(&out.registers, &everyone);
        safety_ok &= v.is_pass();
        if !v.is_pass() {
            notes.push(v.to_string());
        }
    }
    let progress = detect_progress(&out.history, workload, out.end_tick);
    let progress_ok = !timed_out && progress.is_pass();
    if timed_out {
        notes.push(format!("timeout at tick {}", out.end_tick));
    } else if !progress.is_pass() {
        notes.push(progress.to_string());
    }
    (progress_ok, safety_ok, notes.join("; "))
}

pub fn campaign_run(kind: MechanismKind, n: usize, f: usize, seed: u64) -> CampaignRun {
    let (config, workload) = if kind == MechanismKind::BrokenSubMajorityPaxos {
        partition_scenario(n, seed)
    } else {
        crash_scenario(kind, n, f, seed)
    };
    let phase = CrashPhase::for_seed(seed);
    let (progress_ok, safety_ok, detail) = match mechanisms::run(kind, &MechanismParams::default(), &config, &workload) {
        Ok(out) => judge(kind, n, &out, &workload, false),
        Err(fail) => match fail.partial {
            Some(out) => judge(kind, n, &out, &workload, true),
            None => (false, true, fail.error.to_string()),
        },
    };
    CampaignRun { seed, phase, progress_ok, safety_ok, detail }
}

/// Runs one campaign per seed, `jobs` seeds at a time; results are in seed
/// order regardless of `jobs`.
pub fn fault_campaign(kind: MechanismKind, n: usize, f: usize, seeds: &[u64], jobs: usize) -> CampaignSummary {
    let jobs = jobs.max(1).min(seeds.len().max(1));
    let chunk = seeds.len().div_ceil(jobs).max(1);
    let details: Vec<CampaignRun> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&seed| campaign_run(kind, n, f, seed)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("campaign worker panicked")).collect()
    });
    CampaignSummary {
        kind,
        n,
        f,
        runs: details.len(),
        progress_failures: details.iter().filter(|r| !r.progress_ok).count(),
        safety_failures: details.iter().filter(|r| !r.safety_ok).count(),
        details,
    }
}
