//! Profile derivation from pass traces and comparison with the golden tables.

use super::formula::{eval, FormulaError};
use super::AnalyzerError;
use crate::mechanisms::{self, MechanismKind, MechanismParams};
use crate::model::{classify_consistency, Consistency, Loading, MechanismProfile, PassTrace, ProfileRow, Rtt, WriterId};
use crate::runner::{RunOutput, Workload};
use crate::simnet::{FaultPlan, SimConfig};
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

const GOLDEN: &str = include_str!("../../data/golden_profiles.json");

#[derive(Debug, Deserialize)]
struct GoldenFile {
    schema: String,
    mechanisms: BTreeMap<String, GoldenProfile>,
}

#[derive(Debug, Deserialize)]
struct GoldenProfile {
    consistency: String,
    writing_freedom: String,
    latency: BTreeMap<String, String>,
    loading: BTreeMap<String, String>,
    fault_tolerance: String,
}

fn golden_file() -> Result<GoldenFile, AnalyzerError> {
    let file: GoldenFile = serde_json::from_str(GOLDEN).map_err(|e| AnalyzerError::Golden(e.to_string()))?;
    if file.schema != "syncframe/golden-profiles/v1" {
        return Err(AnalyzerError::Golden(format!("unknown schema {}", file.schema)));
    }
    Ok(file)
}

fn golden_err(e: FormulaError) -> AnalyzerError {
    AnalyzerError::Golden(e.to_string())
}

fn eval_loading(cell: &str, n: usize) -> Result<Loading, AnalyzerError> {
    match cell.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        Some(inner) => {
            let (lo, hi) = inner.split_once(',').ok_or_else(|| AnalyzerError::Golden(format!("bad range {cell}")))?;
            Ok(Loading::Range(eval(lo, n).map_err(golden_err)?, eval(hi, n).map_err(golden_err)?))
        }
        None => Ok(Loading::Exact(eval(cell, n).map_err(golden_err)?)),
    }
}

/// The golden profile of `kind` evaluated at `n`.
pub fn golden_profile(kind: MechanismKind, n: usize) -> Result<MechanismProfile, AnalyzerError> {
    let file = golden_file()?;
    let g = file.mechanisms.get(kind.name()).ok_or(AnalyzerError::NoGolden(kind))?;
    let consistency = match g.consistency.as_str() {
        "1" => Consistency::Linearizable,
        "seq" => Consistency::Sequential,
        "Z+" => Consistency::Eventual,
        other => return Err(AnalyzerError::Golden(format!("unknown consistency {other}"))),
    };
    let latency_rtt = g
        .latency
        .iter()
        .map(|(case, v)| Ok((case.clone(), v.parse::<Rtt>().map_err(AnalyzerError::Golden)?)))
        .collect::<Result<_, AnalyzerError>>()?;
    let loading = g
        .loading
        .iter()
        .map(|(case, v)| Ok((case.clone(), eval_loading(v, n)?)))
        .collect::<Result<_, AnalyzerError>>()?;
    Ok(MechanismProfile {
        consistency,
        writing_freedom: eval(&g.writing_freedom, n).map_err(golden_err)?,
        latency_rtt,
        loading,
        fault_tolerance: eval(&g.fault_tolerance, n).map_err(golden_err)?,
    })
}

pub fn golden_kinds() -> Vec<MechanismKind> {
    MechanismKind::ALL
        .iter()
        .copied()
        .filter(|k| golden_file().is_ok_and(|f| f.mechanisms.contains_key(k.name())))
        .collect()
}

enum LoadingKey {
    ByStage,
    ByCase,
    Single,
    Unrestricted,
}

fn loading_key(kind: MechanismKind) -> LoadingKey {
    match kind {
        MechanismKind::Paxos | MechanismKind::BrokenSubMajorityPaxos => LoadingKey::ByStage,
        MechanismKind::Epaxos | MechanismKind::EpaxosPriority => LoadingKey::ByCase,
        MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset => LoadingKey::Unrestricted,
        MechanismKind::Raft | MechanismKind::Vr | MechanismKind::AtomicCas => LoadingKey::Single,
    }
}

fn summarize(sizes: &BTreeSet<usize>) -> Loading {
    let (lo, hi) = (*sizes.first().unwrap(), *sizes.last().unwrap());
    if lo == hi { Loading::Exact(lo) } else { Loading::Range(lo, hi) }
}

/// Leadership epoch of a converged write, for mechanisms that have one.
fn epoch(kind: MechanismKind, w: &crate::model::WriteOp) -> Option<u64> {
    match kind {
        MechanismKind::Raft => w.meta.ballot,
        MechanismKind::Vr => w.meta.view,
        _ => None,
    }
}

pub fn derive_profile(kind: MechanismKind, traces: &[PassTrace], n: usize) -> Result<MechanismProfile, AnalyzerError> {
    let seen: BTreeSet<&str> = traces.iter().map(|t| t.case.as_str()).collect();
    let missing: Vec<String> = kind.cases().iter().filter(|c| !seen.contains(*c)).map(|c| c.to_string()).collect();
    if !missing.is_empty() {
        return Err(AnalyzerError::IncompleteCoverage { kind, missing });
    }
    let consistency = classify_consistency(traces, false)?;

    let mut latency_rtt: BTreeMap<String, Rtt> = BTreeMap::new();
    for t in traces {
        let e = latency_rtt.entry(t.case.clone()).or_insert(Rtt::default());
        *e = (*e).max(t.total_rtts());
    }

    let mut sizes: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for t in traces {
        match loading_key(kind) {
            LoadingKey::ByStage => {
                for q in &t.quorums {
                    sizes.entry(q.stage.to_string()).or_default().insert(q.size());
                }
            }
            LoadingKey::ByCase => {
                if let Some(q) = t.quorums.last() {
                    sizes.entry(t.case.clone()).or_default().insert(q.size());
                }
            }
            LoadingKey::Single | LoadingKey::Unrestricted => {
                sizes.entry("-".into()).or_default().extend(t.quorums.iter().map(|q| q.size()));
            }
        }
    }
    let loading = sizes
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(case, s)| {
            let cell = match loading_key(kind) {
                LoadingKey::Unrestricted if s.iter().all(|&v| (1..=n).contains(&v)) => Loading::Range(1, n),
                _ => summarize(s),
            };
            (case.clone(), cell)
        })
        .collect();

    let mut writers: BTreeMap<Option<u64>, BTreeSet<WriterId>> = BTreeMap::new();
    for w in traces.iter().flat_map(|t| &t.converged).filter(|w| w.is_value_write()) {
        writers.entry(epoch(kind, w)).or_default().insert(w.writer_id);
    }
    let writing_freedom = writers.values().map(BTreeSet::len).max().unwrap_or(0);

    Ok(MechanismProfile {
        consistency,
        writing_freedom,
        latency_rtt,
        loading,
        fault_tolerance: kind.declared_fault_tolerance(n),
    })
}

/// No-fault configuration and workload that walks every labeled case of
/// `kind` under several proposers.
pub fn canonical_scenario(kind: MechanismKind, n: usize) -> (SimConfig, Workload) {
    const GAP: u64 = 30;
    let config = SimConfig::new(n, 1);
    let mut w = Workload::new();
    match kind {
        MechanismKind::Paxos | MechanismKind::BrokenSubMajorityPaxos => {
            for i in 0..n {
                w = w.write(i, 0, i as i64 + 1, GAP * i as u64);
            }
        }
        MechanismKind::Raft => {
            for i in 0..n {
                w = w.write(i, i as u32, i as i64 + 1, GAP * i as u64);
            }
        }
        MechanismKind::Vr => {
            // The view-0 leader is down from the start, forcing a view change.
            for i in 1..n {
                w = w.write(i, i as u32, i as i64 + 1, 5 + GAP * (i as u64 - 1));
            }
            return (config.with_faults(FaultPlan::default().crash(0, 0)), w);
        }
        MechanismKind::Epaxos | MechanismKind::EpaxosPriority => {
            w = w.write(0, 0, 1, 0).write(1, 0, 2, 0);
            for i in 0..n {
                w = w.write(i, 10 + i as u32, 10 + i as i64, 40 + GAP * i as u64);
            }
        }
        MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset => {
            w = w.write(0, 0, 1, 0).write(0, 0, 2, 0);
            for i in 0..n {
                w = w.write(i, 0, 10 + i as i64, 20 + 10 * i as u64);
            }
        }
        MechanismKind::AtomicCas => {
            for i in 0..n {
                w = w.write(i, 0, i as i64 + 1, 0);
            }
        }
    }
    (config, w)
}

pub fn canonical_run(kind: MechanismKind, n: usize) -> Result<RunOutput, AnalyzerError> {
    let (config, workload) = canonical_scenario(kind, n);
    mechanisms::run(kind, &MechanismParams::default(), &config, &workload)
        .map_err(|f| AnalyzerError::Run(f.error.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileComparison {
    pub kind: MechanismKind,
    pub n: usize,
    pub derived: MechanismProfile,
    pub golden: MechanismProfile,
}

impl ProfileComparison {
    pub fn derived_rows(&self) -> Vec<ProfileRow> {
        self.derived.rows(self.kind.name())
    }

    /// Rows present on one side only, prefixed `-` (golden) or `+` (derived).
    pub fn diff(&self) -> Vec<String> {
        let d: BTreeSet<ProfileRow> = self.derived_rows().into_iter().collect();
        let g: BTreeSet<ProfileRow> = self.golden.rows(self.kind.name()).into_iter().collect();
        g.difference(&d).map(|r| format!("- {r}")).chain(d.difference(&g).map(|r| format!("+ {r}"))).collect()
    }

    pub fn matches(&self) -> bool {
        self.derived == self.golden
    }
}

pub fn profile_mechanism(kind: MechanismKind, n: usize) -> Result<ProfileComparison, AnalyzerError> {
    let golden = golden_profile(kind, n)?;
    let out = canonical_run(kind, n)?;
    let derived = derive_profile(kind, &out.passes, n)?;
    Ok(ProfileComparison { kind, n, derived, golden })
}

fn cases_cell<T: ToString>(m: &BTreeMap<String, T>) -> String {
    m.iter()
        .map(|(c, v)| if c == "-" { v.to_string() } else { format!("{} ({c})", v.to_string()) })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Aligned text table, one row per profile.
pub fn comparison_table(profiles: &[(MechanismKind, MechanismProfile)]) -> String {
    let header = ["Mechanism", "Consistency", "W. Freedom", "Latency", "Loading", "Fault Tolerance"].map(String::from);
    let mut rows = vec![header.to_vec()];
    for (kind, p) in profiles {
        rows.push(vec![
            kind.name().to_string(),
            p.consistency.symbol().to_string(),
            p.writing_freedom.to_string(),
            cases_cell(&p.latency_rtt),
            cases_cell(&p.loading),
            p.fault_tolerance.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_paxos_at_five() {
        let g = golden_profile(MechanismKind::Paxos, 5).unwrap();
        assert_eq!(g.loading["pre"], Loading::Exact(5));
        assert_eq!(g.loading["exe"], Loading::Exact(3));
        assert_eq!(g.fault_tolerance, 2);
    }

    #[test]
    fn golden_covers_every_listed_case() {
        for kind in golden_kinds() {
            let g = golden_profile(kind, 5).unwrap();
            let cases: BTreeSet<&str> = g.latency_rtt.keys().map(String::as_str).collect();
            assert_eq!(cases, kind.cases().iter().copied().collect(), "{kind}");
        }
    }

    #[test]
    fn missing_case_is_reported() {
        let t = PassTrace::new("fast", 0, crate::model::ArbiterKind::Dynamic);
        match derive_profile(MechanismKind::Epaxos, &[t], 5) {
            Err(AnalyzerError::IncompleteCoverage { missing, .. }) => assert_eq!(missing, vec!["slow".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
