//! Synchronization mechanisms as deterministic state machines behind the
//! [`Mechanism`](crate::runner::Mechanism) interface.

pub mod atomic;
pub mod crdt;
pub mod epaxos;
pub mod paxos;
pub mod raft;
pub mod vr;

use crate::model::{Metadata, ModelError, OpKind, ProjectionKind, Stage, Tick, Value, WriteOp, WriterId};
use crate::runner::{run_until_quiescent, RunFailure, RunOutput, Workload};
use crate::simnet::{ClientRequest, SimConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    Paxos,
    Raft,
    Vr,
    Epaxos,
    EpaxosPriority,
    CrdtGcounter,
    CrdtOrset,
    AtomicCas,
    /// Unsafe: commits on a sub-majority. Exists only to exhibit split brain.
    BrokenSubMajorityPaxos,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 9] = [
        MechanismKind::Paxos,
        MechanismKind::Raft,
        MechanismKind::Vr,
        MechanismKind::Epaxos,
        MechanismKind::EpaxosPriority,
        MechanismKind::CrdtGcounter,
        MechanismKind::CrdtOrset,
        MechanismKind::AtomicCas,
        MechanismKind::BrokenSubMajorityPaxos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Paxos => "paxos",
            MechanismKind::Raft => "raft",
            MechanismKind::Vr => "vr",
            MechanismKind::Epaxos => "epaxos",
            MechanismKind::EpaxosPriority => "epaxos-priority",
            MechanismKind::CrdtGcounter => "crdt-gcounter",
            MechanismKind::CrdtOrset => "crdt-orset",
            MechanismKind::AtomicCas => "atomic-cas",
            MechanismKind::BrokenSubMajorityPaxos => "broken-sub-majority-paxos",
        }
    }

    /// Mechanisms whose passes each converge a single write.
    pub fn is_linearizable(self) -> bool {
        !matches!(self, MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset)
    }

    pub fn is_crdt(self) -> bool {
        matches!(self, MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset)
    }

    pub fn default_projection(self) -> ProjectionKind {
        match self {
            MechanismKind::CrdtGcounter => ProjectionKind::Sum,
            MechanismKind::CrdtOrset => ProjectionKind::ObservedRemoveSet,
            _ => ProjectionKind::LastWrite,
        }
    }

    /// Declared fault tolerance at `n` writers.
    pub fn declared_fault_tolerance(self, n: usize) -> usize {
        match self {
            MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset | MechanismKind::AtomicCas => n.saturating_sub(1),
            MechanismKind::BrokenSubMajorityPaxos => 0,
            _ => n.saturating_sub(1) / 2,
        }
    }

    /// Labeled cases a profile must cover; `-` when the mechanism has one.
    pub fn cases(self) -> &'static [&'static str] {
        match self {
            MechanismKind::Raft => &["electing", "elected"],
            MechanismKind::Vr => &["normal", "changing"],
            MechanismKind::Epaxos | MechanismKind::EpaxosPriority => &["fast", "slow"],
            _ => &["-"],
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MechanismError {
    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),
    #[error("unknown case `{case}` for {kind}")]
    UnknownCase { kind: MechanismKind, case: String },
    #[error("priority tree: {0}")]
    InvalidPriorityTree(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl FromStr for MechanismKind {
    type Err = MechanismError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let alias = match norm.as_str() {
            "crdt" | "gcounter" => Some(MechanismKind::CrdtGcounter),
            "orset" => Some(MechanismKind::CrdtOrset),
            "atomic" | "cas" => Some(MechanismKind::AtomicCas),
            "broken-paxos" => Some(MechanismKind::BrokenSubMajorityPaxos),
            _ => None,
        };
        alias
            .or_else(|| MechanismKind::ALL.into_iter().find(|k| k.name() == norm))
            .ok_or_else(|| MechanismError::UnknownMechanism(s.to_string()))
    }
}

pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

/// EPaxos fast-quorum size: `⌊3n/4⌋`, or `⌈3n/4⌉` with `ceiling`, never
/// below a majority.
pub fn fast_quorum(n: usize, ceiling: bool) -> usize {
    let q = if ceiling { (3 * n).div_ceil(4) } else { 3 * n / 4 };
    q.max(majority(n)).min(n)
}

/// Loading of one table cell evaluated at `n`.
pub fn quorum_size(kind: MechanismKind, stage: Stage, case: &str, n: usize) -> Result<usize, MechanismError> {
    let unknown = || MechanismError::UnknownCase { kind, case: case.to_string() };
    match (kind, stage, case) {
        (MechanismKind::Paxos, Stage::Pre, "-") => Ok(n),
        (MechanismKind::Paxos, Stage::Exe, "-") => Ok(majority(n)),
        (MechanismKind::BrokenSubMajorityPaxos, Stage::Pre, "-") => Ok(n),
        (MechanismKind::BrokenSubMajorityPaxos, Stage::Exe, "-") => Ok((n / 2).max(1)),
        (MechanismKind::Raft, Stage::Pre, "electing") | (MechanismKind::Raft, Stage::Exe, "elected") => Ok(n),
        (MechanismKind::Vr, Stage::Pre, "changing") | (MechanismKind::Vr, Stage::Exe, "normal") => Ok(n),
        (MechanismKind::Epaxos | MechanismKind::EpaxosPriority, Stage::Exe, "fast") => Ok(fast_quorum(n, false)),
        (MechanismKind::Epaxos | MechanismKind::EpaxosPriority, Stage::Exe, "slow") => Ok(majority(n)),
        (MechanismKind::AtomicCas, Stage::Exe, "-") => Ok(n),
        (MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset, Stage::Exe, "-") => Ok(n),
        _ => Err(unknown()),
    }
}

/// Pre-assigned writer hierarchy. Writers absent from the map are roots.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityTree {
    pub parent: BTreeMap<WriterId, Option<WriterId>>,
}

impl PriorityTree {
    pub fn new(parent: BTreeMap<WriterId, Option<WriterId>>) -> Result<Self, MechanismError> {
        let tree = Self { parent };
        tree.validate()?;
        Ok(tree)
    }

    /// Heap-shaped tree: the parent of `i > 0` is `(i - 1) / 2`.
    pub fn heap(n: usize) -> Self {
        let parent = (0..n).map(|i| (i, if i == 0 { None } else { Some((i - 1) / 2) })).collect();
        Self { parent }
    }

    /// Total order `0 → 1 → … → n-1`.
    pub fn chain(n: usize) -> Self {
        let parent = (0..n).map(|i| (i, i.checked_sub(1))).collect();
        Self { parent }
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        if !self.parent.is_empty() && self.parent.values().all(Option::is_some) {
            return Err(MechanismError::InvalidPriorityTree("no root".into()));
        }
        for &start in self.parent.keys() {
            let mut seen = BTreeSet::from([start]);
            let mut cur = start;
            while let Some(p) = self.parent_of(cur) {
                if !seen.insert(p) {
                    return Err(MechanismError::InvalidPriorityTree(format!("cycle through writer {p}")));
                }
                cur = p;
            }
        }
        Ok(())
    }

    pub fn parent_of(&self, w: WriterId) -> Option<WriterId> {
        self.parent.get(&w).copied().flatten()
    }

    /// True iff `a` is a proper ancestor of `b`.
    pub fn is_ancestor(&self, a: WriterId, b: WriterId) -> bool {
        let mut cur = b;
        while let Some(p) = self.parent_of(cur) {
            if p == a {
                return true;
            }
            cur = p;
        }
        false
    }

    /// Priority rank of each writer in `0..n`: depth-first preorder with
    /// roots and children visited by ascending id. Ancestors precede their
    /// descendants; among siblings the lowest id comes first.
    pub fn ranks(&self, n: usize) -> Vec<usize> {
        let mut children: BTreeMap<Option<WriterId>, Vec<WriterId>> = BTreeMap::new();
        for w in 0..n {
            children.entry(self.parent_of(w).filter(|p| *p < n)).or_default().push(w);
        }
        let mut rank = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack: Vec<WriterId> = children.get(&None).cloned().unwrap_or_default();
        stack.reverse();
        while let Some(w) = stack.pop() {
            if rank[w] != usize::MAX {
                continue;
            }
            rank[w] = next;
            next += 1;
            if let Some(kids) = children.get(&Some(w)) {
                stack.extend(kids.iter().rev());
            }
        }
        rank
    }
}

/// Tunables shared by all mechanisms; each reads the ones it needs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismParams {
    /// Base retry timeout `T` in ticks; backoff draws from `[T, 2T]`.
    pub retry_timeout: Option<Tick>,
    /// Use `⌈3n/4⌉` instead of `⌊3n/4⌋` for the EPaxos fast quorum.
    pub fast_quorum_ceiling: bool,
    pub priority_tree: Option<PriorityTree>,
    /// Paxos commit threshold override (promises and accepts).
    pub accept_threshold: Option<usize>,
}

impl MechanismParams {
    /// Effective retry timeout: comfortably above one round trip.
    pub fn timeout(&self, config: &SimConfig) -> Tick {
        let floor = 4 * config.max_delay + 4;
        self.retry_timeout.unwrap_or(floor).max(2 * config.max_delay + 1)
    }

    pub fn validate(&self, kind: MechanismKind, n: usize) -> Result<(), MechanismError> {
        if let Some(t) = &self.priority_tree {
            t.validate()?;
            if let Some(w) = t.parent.keys().chain(t.parent.values().flatten()).find(|w| **w >= n) {
                return Err(MechanismError::InvalidPriorityTree(format!("writer {w} out of range")));
            }
        }
        if let Some(t) = self.accept_threshold {
            if t == 0 || t > n {
                return Err(MechanismError::InvalidParameter(format!("accept_threshold {t} not in 1..={n}")));
            }
            if kind != MechanismKind::Paxos && kind != MechanismKind::BrokenSubMajorityPaxos {
                return Err(MechanismError::InvalidParameter(format!("accept_threshold does not apply to {kind}")));
            }
        }
        if self.retry_timeout == Some(0) {
            return Err(MechanismError::InvalidParameter("retry_timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the log entry for a client request. Reads become φ read barriers.
pub(crate) fn request_op(writer: WriterId, seq: u64, req: &ClientRequest, meta: Metadata) -> WriteOp {
    let op = match &req.op {
        OpKind::Write(v) => WriteOp::new(writer, seq, req.key, v.clone()),
        OpKind::Read => WriteOp::new(writer, seq, req.key, Value::Null),
    };
    let meta = if meta.is_empty() { Metadata::with_time(req.id + 1) } else { meta };
    op.with_meta(meta).with_origin(req.id)
}

/// Result of applying a committed entry that answers a local request.
pub(crate) fn answer(register: &crate::model::Register, op: &WriteOp) -> crate::model::OpResult {
    if op.is_value_write() {
        crate::model::OpResult::Ok
    } else {
        crate::model::OpResult::Read(register.project_key_prefix(op.key, register.len()))
    }
}

/// Appends a committed entry to `register` and reports the commit; a
/// duplicate is reported as a violation instead.
pub(crate) fn append<M: Clone>(io: &mut crate::runner::Io<'_, M>, register: &mut crate::model::Register, op: WriteOp) -> bool {
    match register.append_committed(op.clone()) {
        Ok(()) => {
            io.commit(op);
            true
        }
        Err(ModelError::DuplicateCommit(id)) => {
            io.violation(format!("duplicate commit {id} at replica {}", register.replica_id));
            false
        }
        Err(e) => {
            io.violation(e.to_string());
            false
        }
    }
}

/// Runs `workload` on a fresh instance of `kind`.
pub fn run(
    kind: MechanismKind,
    params: &MechanismParams,
    config: &SimConfig,
    workload: &Workload,
) -> Result<RunOutput, RunFailure> {
    let n = config.n;
    match kind {
        MechanismKind::Paxos | MechanismKind::BrokenSubMajorityPaxos => {
            run_until_quiescent(config, &mut paxos::Paxos::new(kind, n, params, config), workload)
        }
        MechanismKind::Raft => run_until_quiescent(config, &mut raft::Raft::new(n, params, config), workload),
        MechanismKind::Vr => run_until_quiescent(config, &mut vr::Vr::new(n, params, config), workload),
        MechanismKind::Epaxos | MechanismKind::EpaxosPriority => {
            run_until_quiescent(config, &mut epaxos::Epaxos::new(kind, n, params, config), workload)
        }
        MechanismKind::CrdtGcounter | MechanismKind::CrdtOrset => {
            run_until_quiescent(config, &mut crdt::Crdt::new(kind, n), workload)
        }
        MechanismKind::AtomicCas => run_until_quiescent(config, &mut atomic::AtomicCas::new(n), workload),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_cells() {
        assert_eq!(quorum_size(MechanismKind::Paxos, Stage::Exe, "-", 5), Ok(3));
        assert_eq!(quorum_size(MechanismKind::Epaxos, Stage::Exe, "fast", 5), Ok(3));
        assert_eq!(quorum_size(MechanismKind::Raft, Stage::Pre, "electing", 5), Ok(5));
        assert!(quorum_size(MechanismKind::Raft, Stage::Pre, "bogus", 5).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MechanismKind::ALL {
            assert_eq!(k.name().parse::<MechanismKind>(), Ok(k));
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert_eq!("crdt".parse::<MechanismKind>(), Ok(MechanismKind::CrdtGcounter));
    }

    #[test]
    fn priority_ranks_put_ancestors_first() {
        let t = PriorityTree::heap(5);
        assert_eq!(t.ranks(5), vec![0, 1, 4, 2, 3]);
        for a in 0..5 {
            for b in 0..5 {
                if t.is_ancestor(a, b) {
                    assert!(t.ranks(5)[a] < t.ranks(5)[b]);
                }
            }
        }
    }

    #[test]
    fn priority_tree_rejects_cycles() {
        let parent = BTreeMap::from([(0, Some(1)), (1, Some(0)), (2, None)]);
        assert!(PriorityTree::new(parent).is_err());
    }

    #[test]
    fn fast_quorum_sizes() {
        assert_eq!(fast_quorum(5, false), 3);
        assert_eq!(fast_quorum(5, true), 4);
        assert_eq!(fast_quorum(7, false), 5);
        assert_eq!(fast_quorum(3, false), 2);
    }
}
