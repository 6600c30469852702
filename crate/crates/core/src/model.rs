//! Domain types of the convergence framework: writes, registers and their
//! projections, quorums, pass traces and property profiles.
//!
//! Everything here is a plain value type. Protocol logic lives in
//! [`crate::mechanisms`].

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

pub type WriterId = usize;
pub type Tick = u64;
pub type Key = u32;
pub type RequestId = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("duplicate commit of {0}")]
    DuplicateCommit(OpId),
    #[error("metadata-only write {0} carries no metadata")]
    EmptyMetadata(OpId),
    #[error("invalid pass path {0:?}")]
    InvalidPath(Vec<Stage>),
    #[error("completed pass {0} converged no write")]
    EmptyConverged(u64),
    #[error("write {0} is both converged and aborted")]
    ConvergedAborted(OpId),
    #[error("quorum member {member} outside [0, {n})")]
    QuorumMember { member: WriterId, n: usize },
    #[error("quorum is empty")]
    EmptyQuorum,
    #[error("no traces to classify")]
    InsufficientData,
    #[error("history event at tick {0} precedes its predecessor")]
    TimeRegression(Tick),
    #[error("response to request {0} without a prior invocation")]
    UnmatchedResponse(RequestId),
}

/// A write value. `Null` is the distinguished φ of metadata-only writes and is
/// distinct from an empty payload.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Null,
    Bytes(Vec<u8>),
}

impl Value {
    pub fn int(v: i64) -> Self {
        Value::Bytes(v.to_le_bytes().to_vec())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Integer reading of an 8-byte little-endian payload.
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Bytes(b) if b.len() == 8 => {
                let mut raw = [0u8; 8];
                raw.copy_from_slice(b);
                Some(i64::from_le_bytes(raw))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "φ"),
            v => match v.as_int() {
                Some(i) => write!(f, "{i}"),
                None => {
                    let Value::Bytes(b) = v else { unreachable!() };
                    write!(f, "0x")?;
                    b.iter().try_for_each(|byte| write!(f, "{byte:02x}"))
                }
            },
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Globally unique identity of a write: (writer, per-writer sequence).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId {
    pub writer: WriterId,
    pub seq: u64,
}

impl OpId {
    pub fn new(writer: WriterId, seq: u64) -> Self {
        Self { writer, seq }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}#{}", self.writer, self.seq)
    }
}

impl fmt::Debug for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Coordination metadata `m` attached to a write.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Metadata {
    pub ballot: Option<u64>,
    pub logical_time: Option<u64>,
    pub deps: Option<BTreeSet<OpId>>,
    /// Lower number is higher priority.
    pub priority: Option<u32>,
    pub view: Option<u64>,
}

impl Metadata {
    pub fn is_empty(&self) -> bool {
        self.ballot.is_none()
            && self.logical_time.is_none()
            && self.deps.is_none()
            && self.priority.is_none()
            && self.view.is_none()
    }

    pub fn with_ballot(ballot: u64) -> Self {
        Self { ballot: Some(ballot), ..Self::default() }
    }

    pub fn with_view(view: u64) -> Self {
        Self { view: Some(view), ..Self::default() }
    }

    pub fn with_time(t: u64) -> Self {
        Self { logical_time: Some(t), ..Self::default() }
    }
}

/// A `(v, m)` write.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WriteOp {
    pub writer_id: WriterId,
    pub op_seq: u64,
    pub key: Key,
    pub value: Value,
    pub meta: Metadata,
    /// Client request this write serves, if any.
    pub origin: Option<RequestId>,
}

impl WriteOp {
    pub fn new(writer_id: WriterId, op_seq: u64, key: Key, value: Value) -> Self {
        Self { writer_id, op_seq, key, value, meta: Metadata::default(), origin: None }
    }

    /// A φ-valued write used only to spread metadata.
    pub fn metadata_only(
        writer_id: WriterId,
        op_seq: u64,
        key: Key,
        meta: Metadata,
    ) -> Result<Self, ModelError> {
        if meta.is_empty() {
            return Err(ModelError::EmptyMetadata(OpId::new(writer_id, op_seq)));
        }
        Ok(Self { writer_id, op_seq, key, value: Value::Null, meta, origin: None })
    }

    pub fn with_origin(mut self, origin: RequestId) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn with_meta(mut self, meta: Metadata) -> Self {
        self.meta = meta;
        self
    }

    pub fn id(&self) -> OpId {
        OpId::new(self.writer_id, self.op_seq)
    }

    pub fn is_value_write(&self) -> bool {
        !self.value.is_null()
    }
}

/// The projecting action ℱ applied to a register's series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    LastWrite,
    Sum,
    SetUnion,
    LogSequence,
    /// Values are encoded observed-remove set operations.
    ObservedRemoveSet,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Projection {
    /// `LastWrite` over a series without value writes.
    Empty,
    Value(Value),
    Int(i64),
    Set(BTreeSet<Value>),
    Seq(Vec<Value>),
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Projection::Empty => write!(f, "empty"),
            Projection::Value(v) => write!(f, "{v}"),
            Projection::Int(i) => write!(f, "{i}"),
            Projection::Set(s) => {
                let items: Vec<String> = s.iter().map(ToString::to_string).collect();
                write!(f, "{{{}}}", items.join(","))
            }
            Projection::Seq(s) => {
                let items: Vec<String> = s.iter().map(ToString::to_string).collect();
                write!(f, "[{}]", items.join(","))
            }
        }
    }
}

/// Applies ℱ to a sequence of writes. φ-valued writes are skipped: they carry
/// metadata only.
pub fn project_series<'a, I>(kind: ProjectionKind, series: I) -> Projection
where
    I: IntoIterator<Item = &'a WriteOp>,
{
    let values = series.into_iter().filter(|w| w.is_value_write()).map(|w| &w.value);
    match kind {
        ProjectionKind::LastWrite => values.last().cloned().map_or(Projection::Empty, Projection::Value),
        // Non-integer payloads contribute nothing to a sum.
        ProjectionKind::Sum => Projection::Int(values.filter_map(Value::as_int).sum()),
        ProjectionKind::SetUnion => Projection::Set(values.cloned().collect()),
        ProjectionKind::LogSequence => Projection::Seq(values.cloned().collect()),
        ProjectionKind::ObservedRemoveSet => {
            let ops: Vec<_> = values.filter_map(crate::mechanisms::crdt::OrSetOp::decode).collect();
            Projection::Set(
                crate::mechanisms::crdt::OrSet::from_ops(ops.iter())
                    .elements()
                    .into_iter()
                    .map(Value::int)
                    .collect(),
            )
        }
    }
}

/// One replica's register: an append-only address series plus ℱ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub replica_id: WriterId,
    series: Vec<WriteOp>,
    pub projection: ProjectionKind,
    #[serde(skip)]
    ids: BTreeSet<OpId>,
}

impl Register {
    pub fn new(replica_id: WriterId, projection: ProjectionKind) -> Self {
        Self { replica_id, series: Vec::new(), projection, ids: BTreeSet::new() }
    }

    pub fn series(&self) -> &[WriteOp] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn contains(&self, id: OpId) -> bool {
        self.ids.contains(&id)
    }

    pub fn append_committed(&mut self, w: WriteOp) -> Result<(), ModelError> {
        if !self.ids.insert(w.id()) {
            return Err(ModelError::DuplicateCommit(w.id()));
        }
        self.series.push(w);
        Ok(())
    }

    pub fn project(&self) -> Projection {
        project_series(self.projection, &self.series)
    }

    /// Projection of the writes that target `key`.
    pub fn project_key(&self, key: Key) -> Projection {
        project_series(self.projection, self.series.iter().filter(|w| w.key == key))
    }

    /// Projection of `key` over the first `len` entries.
    pub fn project_key_prefix(&self, key: Key, len: usize) -> Projection {
        project_series(self.projection, self.series[..len.min(self.series.len())].iter().filter(|w| w.key == key))
    }

    pub fn keys(&self) -> BTreeSet<Key> {
        self.series.iter().map(|w| w.key).collect()
    }

    pub fn key_series(&self, key: Key) -> Vec<OpId> {
        self.series.iter().filter(|w| w.key == key).map(WriteOp::id).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pre,
    Exe,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pre => "pre",
            Stage::Exe => "exe",
        })
    }
}

/// The writers contacted in one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quorum {
    pub members: BTreeSet<WriterId>,
    pub stage: Stage,
}

impl Quorum {
    pub fn new(members: BTreeSet<WriterId>, stage: Stage, n: usize) -> Result<Self, ModelError> {
        if members.is_empty() {
            return Err(ModelError::EmptyQuorum);
        }
        if let Some(&member) = members.iter().find(|&&m| m >= n) {
            return Err(ModelError::QuorumMember { member, n });
        }
        Ok(Self { members, stage })
    }

    pub fn all(n: usize, stage: Stage) -> Self {
        Self { members: (0..n).collect(), stage }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Round-trip count in half-RTT units, so 0.5 and 1.5 are exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rtt(u32);

impl Rtt {
    pub const HALF: Rtt = Rtt(1);
    pub const ONE: Rtt = Rtt(2);

    pub fn from_halves(halves: u32) -> Self {
        Rtt(halves)
    }

    pub fn whole(rtts: u32) -> Self {
        Rtt(rtts * 2)
    }

    pub fn halves(self) -> u32 {
        self.0
    }
}

impl std::ops::Add for Rtt {
    type Output = Rtt;
    fn add(self, rhs: Rtt) -> Rtt {
        Rtt(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Rtt {
    fn sum<I: Iterator<Item = Rtt>>(iter: I) -> Rtt {
        iter.fold(Rtt::default(), |a, b| a + b)
    }
}

impl fmt::Display for Rtt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}.5", self.0 / 2)
        }
    }
}

impl std::str::FromStr for Rtt {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("not a multiple of 0.5: {s}");
        match s.split_once('.') {
            None => s.parse::<u32>().map(Rtt::whole).map_err(|_| bad()),
            Some((whole, "5")) => Ok(Rtt(whole.parse::<u32>().map_err(|_| bad())? * 2 + 1)),
            Some((whole, "0")) => whole.parse::<u32>().map(Rtt::whole).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArbiterKind {
    Static,
    Dynamic,
    None,
}

/// One pass of synchronization from a set of concurrent writes to the
/// converged set `w`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassTrace {
    pub pass_index: u64,
    /// Mechanism-specific labeled case, e.g. `fast`/`slow`, `electing`.
    pub case: String,
    pub coordinator: WriterId,
    pub path: Vec<Stage>,
    pub rtts_per_stage: BTreeMap<Stage, Rtt>,
    pub quorums: Vec<Quorum>,
    pub converged: Vec<WriteOp>,
    pub aborted: Vec<WriteOp>,
    pub arbiter_kind: ArbiterKind,
}

impl PassTrace {
    pub fn new(case: &str, coordinator: WriterId, arbiter_kind: ArbiterKind) -> Self {
        Self {
            pass_index: 0,
            case: case.to_string(),
            coordinator,
            path: Vec::new(),
            rtts_per_stage: BTreeMap::new(),
            quorums: Vec::new(),
            converged: Vec::new(),
            aborted: Vec::new(),
            arbiter_kind,
        }
    }

    /// Records a stage walked with its round trips.
    pub fn stage(mut self, stage: Stage, rtts: Rtt) -> Self {
        if self.path.last() != Some(&stage) {
            self.path.push(stage);
        }
        let acc = self.rtts_per_stage.entry(stage).or_default();
        *acc = *acc + rtts;
        self
    }

    pub fn quorum(mut self, q: Quorum) -> Self {
        self.quorums.push(q);
        self
    }

    pub fn converge(mut self, w: WriteOp) -> Self {
        self.converged.push(w);
        self
    }

    pub fn total_rtts(&self) -> Rtt {
        self.rtts_per_stage.values().copied().sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let valid = [vec![Stage::Pre], vec![Stage::Pre, Stage::Exe], vec![Stage::Exe]];
        if !valid.contains(&self.path) {
            return Err(ModelError::InvalidPath(self.path.clone()));
        }
        if self.converged.is_empty() {
            return Err(ModelError::EmptyConverged(self.pass_index));
        }
        let converged: BTreeSet<OpId> = self.converged.iter().map(WriteOp::id).collect();
        if let Some(w) = self.aborted.iter().find(|w| converged.contains(&w.id())) {
            return Err(ModelError::ConvergedAborted(w.id()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Consistency {
    /// Every pass converges exactly one write.
    Linearizable,
    /// Writes of one writer never share a pass.
    Sequential,
    /// Pass size unconstrained.
    Eventual,
}

impl Consistency {
    /// Symbol used in the property tables.
    pub fn symbol(self) -> &'static str {
        match self {
            Consistency::Linearizable => "1",
            Consistency::Sequential => "seq",
            Consistency::Eventual => "Z+",
        }
    }
}

/// Classifies consistency from the size of converged sets.
pub fn classify_consistency(traces: &[PassTrace], per_writer_ordered: bool) -> Result<Consistency, ModelError> {
    if traces.is_empty() {
        return Err(ModelError::InsufficientData);
    }
    if traces.iter().all(|t| t.converged.len() == 1) {
        return Ok(Consistency::Linearizable);
    }
    let writers_disjoint = traces.iter().all(|t| {
        let writers: BTreeSet<WriterId> = t.converged.iter().map(|w| w.writer_id).collect();
        writers.len() == t.converged.len()
    });
    if per_writer_ordered && writers_disjoint {
        Ok(Consistency::Sequential)
    } else {
        Ok(Consistency::Eventual)
    }
}

/// Loading cell: an exact quorum size, or any size in a range when the
/// mechanism places no restriction on its communication targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loading {
    Exact(usize),
    Range(usize, usize),
}

impl fmt::Display for Loading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loading::Exact(v) => write!(f, "{v}"),
            Loading::Range(lo, hi) => write!(f, "[{lo},{hi}]"),
        }
    }
}

/// The five-property summary of a mechanism.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismProfile {
    pub consistency: Consistency,
    pub writing_freedom: usize,
    pub latency_rtt: BTreeMap<String, Rtt>,
    pub loading: BTreeMap<String, Loading>,
    pub fault_tolerance: usize,
}

/// One `mechanism|property|case|value` cell.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProfileRow {
    pub mechanism: String,
    pub property: String,
    pub case: String,
    pub value: String,
}

impl fmt::Display for ProfileRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|{}", self.mechanism, self.property, self.case, self.value)
    }
}

impl MechanismProfile {
    pub fn rows(&self, mechanism: &str) -> Vec<ProfileRow> {
        let row = |property: &str, case: &str, value: String| ProfileRow {
            mechanism: mechanism.to_string(),
            property: property.to_string(),
            case: case.to_string(),
            value,
        };
        let mut rows = vec![
            row("consistency", "-", self.consistency.symbol().to_string()),
            row("writing_freedom", "-", self.writing_freedom.to_string()),
        ];
        rows.extend(self.latency_rtt.iter().map(|(c, v)| row("latency", c, v.to_string())));
        rows.extend(self.loading.iter().map(|(c, v)| row("loading", c, v.to_string())));
        rows.push(row("fault_tolerance", "-", self.fault_tolerance.to_string()));
        rows.sort();
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Write(Value),
    Read,
}

/// A client operation as seen by the history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientOp {
    pub id: RequestId,
    pub key: Key,
    pub kind: OpKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpResult {
    Ok,
    Aborted,
    Read(Projection),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Invoke(ClientOp),
    Respond(RequestId, OpResult),
    Commit(WriteOp),
    Crash,
    Recover,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub time: Tick,
    pub replica: WriterId,
    pub kind: EventKind,
}

/// Global timeline of invocations, responses and commits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<HistoryEvent>,
}

impl History {
    pub fn push(&mut self, time: Tick, replica: WriterId, kind: EventKind) {
        self.events.push(HistoryEvent { time, replica, kind });
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut invoked = BTreeSet::new();
        let mut last = 0;
        for e in &self.events {
            if e.time < last {
                return Err(ModelError::TimeRegression(e.time));
            }
            last = e.time;
            match &e.kind {
                EventKind::Invoke(op) => {
                    invoked.insert(op.id);
                }
                EventKind::Respond(id, _) if !invoked.contains(id) => {
                    return Err(ModelError::UnmatchedResponse(*id));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Writes committed at `replica`, in commit order.
    pub fn commits_at(&self, replica: WriterId) -> Vec<&WriteOp> {
        self.events
            .iter()
            .filter(|e| e.replica == replica)
            .filter_map(|e| match &e.kind {
                EventKind::Commit(w) => Some(w),
                _ => None,
            })
            .collect()
    }

    /// Writers crashed at the end of the history.
    pub fn crashed_at_end(&self) -> BTreeSet<WriterId> {
        let mut down = BTreeSet::new();
        for e in &self.events {
            match e.kind {
                EventKind::Crash => {
                    down.insert(e.replica);
                }
                EventKind::Recover => {
                    down.remove(&e.replica);
                }
                _ => {}
            }
        }
        down
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(writer: WriterId, seq: u64, v: i64) -> WriteOp {
        WriteOp::new(writer, seq, 0, Value::int(v))
    }

    fn reg(kind: ProjectionKind, values: &[i64]) -> Register {
        let mut r = Register::new(0, kind);
        for (i, v) in values.iter().enumerate() {
            r.append_committed(w(0, i as u64, *v)).unwrap();
        }
        r
    }

    #[test]
    fn sum_projection() {
        assert_eq!(reg(ProjectionKind::Sum, &[5]).project(), Projection::Int(5));
        assert_eq!(reg(ProjectionKind::Sum, &[1, 2, 3]).project(), Projection::Int(6));
    }

    #[test]
    fn last_write_projection() {
        assert_eq!(reg(ProjectionKind::LastWrite, &[7, 9]).project(), Projection::Value(Value::int(9)));
        assert_eq!(reg(ProjectionKind::LastWrite, &[]).project(), Projection::Empty);
    }

    #[test]
    fn set_and_log_projection() {
        let set = reg(ProjectionKind::SetUnion, &[3, 1, 3]).project();
        assert_eq!(set, Projection::Set([Value::int(1), Value::int(3)].into_iter().collect()));
        let log = reg(ProjectionKind::LogSequence, &[3, 1, 3]).project();
        assert_eq!(log, Projection::Seq(vec![Value::int(3), Value::int(1), Value::int(3)]));
    }

    #[test]
    fn metadata_only_writes_are_skipped() {
        let mut r = reg(ProjectionKind::LastWrite, &[4]);
        r.append_committed(WriteOp::metadata_only(1, 0, 0, Metadata::with_ballot(2)).unwrap()).unwrap();
        assert_eq!(r.project(), Projection::Value(Value::int(4)));
    }

    #[test]
    fn null_differs_from_empty_payload() {
        assert_ne!(Value::Null, Value::Bytes(vec![]));
        assert!(WriteOp::metadata_only(0, 0, 0, Metadata::default()).is_err());
    }

    #[test]
    fn append_and_duplicate() {
        let mut r = Register::new(0, ProjectionKind::LastWrite);
        r.append_committed(w(0, 0, 1)).unwrap();
        assert_eq!(r.len(), 1);
        r.append_committed(w(1, 0, 2)).unwrap();
        assert_eq!(r.series().iter().map(WriteOp::id).collect::<Vec<_>>(), vec![OpId::new(0, 0), OpId::new(1, 0)]);
        assert_eq!(r.append_committed(w(0, 0, 1)), Err(ModelError::DuplicateCommit(OpId::new(0, 0))));
        assert_eq!(r.len(), 2);
    }

    fn pass_of(sizes: &[&[WriterId]]) -> Vec<PassTrace> {
        let mut seq = 0;
        sizes
            .iter()
            .map(|writers| {
                let mut t = PassTrace::new("-", 0, ArbiterKind::None).stage(Stage::Exe, Rtt::HALF);
                for &wr in *writers {
                    seq += 1;
                    t = t.converge(w(wr, seq, 0));
                }
                t
            })
            .collect()
    }

    #[test]
    fn classify() {
        assert_eq!(classify_consistency(&pass_of(&[&[0], &[1], &[2]]), false), Ok(Consistency::Linearizable));
        assert_eq!(classify_consistency(&pass_of(&[&[0, 1, 2], &[0, 1]]), true), Ok(Consistency::Sequential));
        assert_eq!(
            classify_consistency(&pass_of(&[&[0, 0, 1, 2], &[0, 0, 1, 1, 2, 3, 4]]), true),
            Ok(Consistency::Eventual)
        );
        assert_eq!(classify_consistency(&[], true), Err(ModelError::InsufficientData));
    }

    #[test]
    fn pass_validation() {
        let ok = PassTrace::new("-", 0, ArbiterKind::Static)
            .stage(Stage::Pre, Rtt::ONE)
            .stage(Stage::Exe, Rtt::ONE)
            .converge(w(0, 0, 1));
        ok.validate().unwrap();
        assert_eq!(ok.total_rtts(), Rtt::whole(2));
        let bad = PassTrace::new("-", 0, ArbiterKind::Static)
            .stage(Stage::Exe, Rtt::ONE)
            .stage(Stage::Pre, Rtt::ONE)
            .converge(w(0, 0, 1));
        assert!(matches!(bad.validate(), Err(ModelError::InvalidPath(_))));
        let empty = PassTrace::new("-", 0, ArbiterKind::Static).stage(Stage::Exe, Rtt::ONE);
        assert!(matches!(empty.validate(), Err(ModelError::EmptyConverged(_))));
    }

    #[test]
    fn rtt_display_and_parse() {
        assert_eq!(Rtt::from_halves(3).to_string(), "1.5");
        assert_eq!(Rtt::HALF.to_string(), "0.5");
        assert_eq!("1.5".parse::<Rtt>(), Ok(Rtt::from_halves(3)));
        assert_eq!("2".parse::<Rtt>(), Ok(Rtt::whole(2)));
        assert!("0.25".parse::<Rtt>().is_err());
    }

    #[test]
    fn quorum_bounds() {
        assert!(Quorum::new([0, 5].into_iter().collect(), Stage::Pre, 5).is_err());
        assert!(Quorum::new(BTreeSet::new(), Stage::Pre, 5).is_err());
        assert_eq!(Quorum::all(5, Stage::Exe).size(), 5);
    }

    proptest::proptest! {
        #[test]
        fn projection_is_deterministic(values in proptest::collection::vec(-50i64..50, 0..20)) {
            for kind in [ProjectionKind::LastWrite, ProjectionKind::Sum, ProjectionKind::SetUnion, ProjectionKind::LogSequence] {
                let a = reg(kind, &values);
                let b = reg(kind, &values);
                proptest::prop_assert_eq!(a.project(), b.project());
            }
        }

        #[test]
        fn append_preserves_prefix(values in proptest::collection::vec(-50i64..50, 1..20)) {
            let mut r = Register::new(0, ProjectionKind::LogSequence);
            for (i, v) in values.iter().enumerate() {
                let before = r.series().to_vec();
                r.append_committed(w(0, i as u64, *v)).unwrap();
                proptest::prop_assert_eq!(r.len(), before.len() + 1);
                proptest::prop_assert_eq!(&r.series()[..before.len()], &before[..]);
            }
        }
    }
}
