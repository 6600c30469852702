//! Quorum and fault-tolerance limits, each checked against a brute-force
//! enumeration oracle.

use crate::checkers::Verdict;
use crate::model::ArbiterKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LimitError {
    #[error("quorums of size {q} over {n} writers need not intersect")]
    NonIntersecting { n: usize, q: usize },
    #[error("invalid parameters n={n} q={q}")]
    InvalidParameters { n: usize, q: usize },
}

/// Largest fault count any quorum-based mechanism tolerates.
pub fn majority_max_faults(n: usize) -> usize {
    assert!(n >= 1, "n must be positive");
    (n - 1) / 2
}

/// Dynamic-arbiter limit: `2(n−q) + f − 2 < n`.
pub fn dynamic_limit_safe(n: usize, q: usize, f: usize) -> bool {
    let (n, q, f) = (n as i64, q as i64, f as i64);
    2 * (n - q) + f - 2 < n
}

/// Static-arbiter limit: `(n−q) + f ≤ ⌈(n−1)/2⌉`.
pub fn static_limit_safe(n: usize, q: usize, f: usize) -> bool {
    (n - q) + f <= (n - 1).div_ceil(2)
}

/// ROLL inequality `2F + f − 1 ≤ n` with quorum deficit `F = n − q`.
pub fn roll_safe(n: usize, q: usize, f: usize) -> bool {
    let big_f = (n - q) as i64;
    2 * big_f + f as i64 - 1 <= n as i64
}

pub fn limit_safe(arbiter: ArbiterKind, n: usize, q: usize, f: usize) -> bool {
    match arbiter {
        ArbiterKind::Static => static_limit_safe(n, q, f),
        _ => dynamic_limit_safe(n, q, f),
    }
}

fn subsets_of_size(n: usize, k: usize) -> impl Iterator<Item = u32> {
    (0u32..1 << n).filter(move |m| m.count_ones() as usize == k)
}

/// Enumerates every pair of `q`-quorums and returns the largest number of
/// writers outside their intersection.
pub fn max_uncovered(n: usize, q: usize) -> Result<usize, LimitError> {
    if q == 0 || q > n || n > 16 {
        return Err(LimitError::InvalidParameters { n, q });
    }
    if 2 * q < n {
        return Err(LimitError::NonIntersecting { n, q });
    }
    let quorums: Vec<u32> = subsets_of_size(n, q).collect();
    let mut best = 0;
    for &a in &quorums {
        for &b in &quorums {
            best = best.max(n - (a & b).count_ones() as usize);
        }
    }
    Ok(best)
}

fn members(mask: u32) -> BTreeSet<usize> {
    (0..32).filter(|i| mask >> i & 1 == 1).collect()
}

/// Searches for two disjoint writer groups, each at least `threshold`
/// strong. Returns a witness pair if one exists.
pub fn split_brain_witness(n: usize, threshold: usize) -> Option<(BTreeSet<usize>, BTreeSet<usize>)> {
    let all = (1u32 << n) - 1;
    for a in 0u32..=all {
        if (a.count_ones() as usize) < threshold || a == 0 {
            continue;
        }
        let rest = all & !a;
        // Walk the subsets of the complement.
        let mut b = rest;
        loop {
            if b != 0 && b.count_ones() as usize >= threshold {
                return Some((members(a), members(b)));
            }
            if b == 0 {
                break;
            }
            b = (b - 1) & rest;
        }
    }
    None
}

pub fn split_brain_possible(n: usize, threshold: usize) -> bool {
    split_brain_witness(n, threshold).is_some()
}

/// Oracle for the static limit: every choice of a `q`-quorum and `f`
/// crashed writers leaves at most `⌈(n−1)/2⌉` writers outside the quorum or
/// crashed.
pub fn static_oracle(n: usize, q: usize, f: usize) -> (bool, Option<String>) {
    let bound = (n - 1).div_ceil(2);
    for quorum in subsets_of_size(n, q) {
        for crashed in subsets_of_size(n, f) {
            let exposed = (!quorum | crashed) & ((1u32 << n) - 1);
            if exposed.count_ones() as usize > bound {
                return (false, Some(format!("Q={:?} F={:?}", members(quorum), members(crashed))));
            }
        }
    }
    (true, None)
}

/// Largest `f < n` the limit admits for quorum size `q`, capped at the
/// majority bound.
pub fn max_faults(arbiter: ArbiterKind, n: usize, q: usize) -> Option<usize> {
    let raw = (0..n).rev().find(|&f| limit_safe(arbiter, n, q, f))?;
    Some(raw.min(majority_max_faults(n)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitReport {
    pub arbiter: ArbiterKind,
    pub n: usize,
    pub q: usize,
    pub f: usize,
    pub formula_safe: bool,
    pub oracle_safe: bool,
    pub witness: Option<String>,
}

impl fmt::Display for LimitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}|{}",
            self.n,
            self.q,
            self.f,
            self.formula_safe,
            self.oracle_safe,
            self.witness.as_deref().unwrap_or("-")
        )
    }
}

pub fn dynamic_report(n: usize, q: usize, f: usize) -> LimitReport {
    let formula_safe = dynamic_limit_safe(n, q, f);
    let oracle_safe = roll_safe(n, q, f);
    let witness = (formula_safe != oracle_safe).then(|| format!("F={} disagrees", n - q));
    LimitReport { arbiter: ArbiterKind::Dynamic, n, q, f, formula_safe, oracle_safe, witness }
}

pub fn static_report(n: usize, q: usize, f: usize) -> LimitReport {
    let formula_safe = static_limit_safe(n, q, f);
    let (oracle_safe, counter) = static_oracle(n, q, f);
    let witness = (formula_safe != oracle_safe).then(|| counter.unwrap_or_else(|| "no exposing configuration".into()));
    LimitReport { arbiter: ArbiterKind::Static, n, q, f, formula_safe, oracle_safe, witness }
}

fn triples(n_max: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (2..=n_max).flat_map(|n| (1..=n).flat_map(move |q| (0..n).map(move |f| (n, q, f))))
}

pub fn roll_equivalence(n_max: usize) -> Verdict {
    let bad: Vec<LimitReport> = triples(n_max).map(|(n, q, f)| dynamic_report(n, q, f)).filter(|r| r.witness.is_some()).collect();
    match bad.first() {
        None => Verdict::pass("roll-equivalence", Some(format!("n<={n_max}"))),
        Some(r) => Verdict::fail("roll-equivalence", format!("{} disagreements, first {r}", bad.len())),
    }
}

pub fn uncovered_sweep(n_max: usize) -> Verdict {
    for n in 1..=n_max {
        for q in n.div_ceil(2)..=n {
            let got = max_uncovered(n, q).expect("intersecting regime");
            let formula = n.min(2 * (n - q));
            if got != formula {
                return Verdict::fail("max-uncovered", format!("n={n} q={q}: enumeration {got}, formula {formula}"));
            }
        }
    }
    Verdict::pass("max-uncovered", Some(format!("n<={n_max}")))
}

pub fn split_brain_sweep(n_max: usize) -> Verdict {
    for n in 1..=n_max {
        for t in 1..=n {
            if split_brain_possible(n, t) != (t <= n / 2) {
                return Verdict::fail("split-brain-threshold", format!("n={n} t={t}"));
            }
        }
    }
    Verdict::pass("split-brain-threshold", Some(format!("n<={n_max}")))
}

/// Raising `q` never makes a safe configuration unsafe; raising `f` never
/// makes an unsafe one safe.
pub fn monotonicity(n_max: usize) -> Verdict {
    for arbiter in [ArbiterKind::Dynamic, ArbiterKind::Static] {
        for (n, q, f) in triples(n_max) {
            let here = limit_safe(arbiter, n, q, f);
            if q < n && here && !limit_safe(arbiter, n, q + 1, f) {
                return Verdict::fail("monotonicity", format!("{arbiter:?} n={n} q={q}->{} f={f}", q + 1));
            }
            if f + 1 < n && !here && limit_safe(arbiter, n, q, f + 1) {
                return Verdict::fail("monotonicity", format!("{arbiter:?} n={n} q={q} f={f}->{}", f + 1));
            }
        }
    }
    Verdict::pass("monotonicity", None)
}

/// The reported static fault bound never exceeds the majority bound.
pub fn cap_check(n_max: usize) -> Verdict {
    for n in 2..=n_max {
        for q in 1..=n {
            if let Some(f) = max_faults(ArbiterKind::Static, n, q) {
                if f > majority_max_faults(n) {
                    return Verdict::fail("fault-cap", format!("n={n} q={q} f={f}"));
                }
            }
        }
    }
    Verdict::pass("fault-cap", None)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LimitsSummary {
    pub dynamic: Vec<LimitReport>,
    pub statics: Vec<LimitReport>,
    pub verdicts: Vec<Verdict>,
}

impl LimitsSummary {
    pub fn disagreements(&self) -> usize {
        self.dynamic.iter().chain(&self.statics).filter(|r| r.formula_safe != r.oracle_safe).count()
            + self.verdicts.iter().filter(|v| !v.is_pass()).count()
    }
}

pub fn verify_limits(n_max: usize) -> LimitsSummary {
    LimitsSummary {
        dynamic: triples(n_max).map(|(n, q, f)| dynamic_report(n, q, f)).collect(),
        statics: triples(n_max).map(|(n, q, f)| static_report(n, q, f)).collect(),
        verdicts: vec![roll_equivalence(n_max), uncovered_sweep(n_max), split_brain_sweep(n_max), monotonicity(n_max), cap_check(n_max)],
    }
}
