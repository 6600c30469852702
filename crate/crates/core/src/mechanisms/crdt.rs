//! Grow-only counter and observed-remove set, replicated by one-way gossip.
//!
//! Each replica applies local updates immediately and answers the client.
//! Updates are flushed one tick later to every other replica together with
//! the sender's full counter state. Receiving new operations closes a pass
//! of half a round trip with no arbiter.

use super::MechanismKind;
use crate::model::{
    ArbiterKind, OpId, OpKind, OpResult, PassTrace, Quorum, Register, Rtt, Stage, Value, WriteOp, WriterId,
};
use crate::runner::{Io, Mechanism};
use crate::simnet::ClientRequest;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Per-writer increment totals; merge is the pointwise maximum.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GCounter {
    pub counts: Vec<u64>,
}

impl GCounter {
    pub fn new(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn increment(&mut self, writer: WriterId, by: u64) {
        if self.counts.len() <= writer {
            self.counts.resize(writer + 1, 0);
        }
        self.counts[writer] += by;
    }

    pub fn merge(&mut self, other: &GCounter) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a = (*a).max(*b);
        }
    }

    pub fn value(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// One observed-remove set operation. Adds are tagged with their op id;
/// a remove names the add tags it observed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OrSetOp {
    Add { elem: i64, tag: OpId },
    Remove { elem: i64, tags: BTreeSet<OpId> },
}

impl OrSetOp {
    pub fn encode(&self) -> Value {
        Value::Bytes(serde_json::to_vec(self).expect("or-set op serializes"))
    }

    pub fn decode(v: &Value) -> Option<OrSetOp> {
        match v {
            Value::Bytes(b) => serde_json::from_slice(b).ok(),
            Value::Null => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrSet {
    live: BTreeMap<i64, BTreeSet<OpId>>,
    removed: BTreeSet<OpId>,
}

impl OrSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ops<'a, I: IntoIterator<Item = &'a OrSetOp>>(ops: I) -> Self {
        let mut s = Self::new();
        for op in ops {
            s.apply(op);
        }
        s
    }

    pub fn apply(&mut self, op: &OrSetOp) {
        match op {
            OrSetOp::Add { elem, tag } => {
                if !self.removed.contains(tag) {
                    self.live.entry(*elem).or_default().insert(*tag);
                }
            }
            OrSetOp::Remove { elem, tags } => {
                self.removed.extend(tags.iter().copied());
                if let Some(live) = self.live.get_mut(elem) {
                    live.retain(|t| !tags.contains(t));
                    if live.is_empty() {
                        self.live.remove(elem);
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: &OrSet) {
        self.removed.extend(other.removed.iter().copied());
        for (elem, tags) in &other.live {
            self.live.entry(*elem).or_default().extend(tags.iter().copied());
        }
        let removed = &self.removed;
        self.live.retain(|_, tags| {
            tags.retain(|t| !removed.contains(t));
            !tags.is_empty()
        });
    }

    /// Tags currently witnessing `elem`.
    pub fn observed(&self, elem: i64) -> BTreeSet<OpId> {
        self.live.get(&elem).cloned().unwrap_or_default()
    }

    pub fn contains(&self, elem: i64) -> bool {
        self.live.contains_key(&elem)
    }

    pub fn elements(&self) -> BTreeSet<i64> {
        self.live.keys().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gossip {
    pub ops: Vec<WriteOp>,
    pub counter: Option<GCounter>,
    /// Asks the receiver to answer with everything it knows.
    pub pull: bool,
}

#[derive(Clone, Debug)]
struct Replica {
    register: Register,
    known: BTreeSet<OpId>,
    counter: GCounter,
    orset: OrSet,
    next_seq: u64,
    /// Local ops not yet gossiped.
    unsent: Vec<WriteOp>,
    flush_armed: bool,
    pull: bool,
}

pub struct Crdt {
    kind: MechanismKind,
    n: usize,
    replicas: Vec<Replica>,
}

const FLUSH_TIMER: u64 = 1;

impl Crdt {
    pub fn new(kind: MechanismKind, n: usize) -> Self {
        assert!(kind.is_crdt(), "{kind} is not a CRDT");
        let replicas = (0..n)
            .map(|i| Replica {
                register: Register::new(i, kind.default_projection()),
                known: BTreeSet::new(),
                counter: GCounter::new(n),
                orset: OrSet::new(),
                next_seq: 0,
                unsent: Vec::new(),
                flush_armed: false,
                pull: false,
            })
            .collect();
        Self { kind, n, replicas }
    }

    fn apply(&mut self, io: &mut Io<'_, Gossip>, op: WriteOp) -> bool {
        let r = &mut self.replicas[io.node];
        if !r.known.insert(op.id()) {
            return false;
        }
        match self.kind {
            MechanismKind::CrdtGcounter => {
                let by = op.value.as_int().unwrap_or(0).max(0) as u64;
                r.counter.increment(op.writer_id, by);
            }
            _ => {
                if let Some(o) = OrSetOp::decode(&op.value) {
                    r.orset.apply(&o);
                }
            }
        }
        super::append(io, &mut r.register, op);
        true
    }

    fn arm_flush(&mut self, io: &mut Io<'_, Gossip>) {
        let r = &mut self.replicas[io.node];
        if !r.flush_armed {
            r.flush_armed = true;
            io.set_timer(1, FLUSH_TIMER);
        }
    }
}

impl Mechanism for Crdt {
    type Msg = Gossip;

    fn kind(&self) -> MechanismKind {
        self.kind
    }

    fn n(&self) -> usize {
        self.n
    }

    fn on_client(&mut self, io: &mut Io<'_, Gossip>, req: &ClientRequest) {
        let me = io.node;
        let value = match &req.op {
            OpKind::Read => {
                let r = &self.replicas[me];
                io.respond(req.id, OpResult::Read(r.register.project_key(req.key)));
                return;
            }
            OpKind::Write(v) => v.clone(),
        };
        let seq = self.replicas[me].next_seq;
        let id = OpId::new(me, seq);
        let value = match self.kind {
            MechanismKind::CrdtGcounter => match value.as_int() {
                Some(v) if v >= 0 => value,
                _ => {
                    io.respond(req.id, OpResult::Aborted);
                    return;
                }
            },
            _ => {
                let elem = value.as_int().unwrap_or(0);
                let op = if elem >= 0 {
                    OrSetOp::Add { elem, tag: id }
                } else {
                    OrSetOp::Remove { elem: -elem, tags: self.replicas[me].orset.observed(-elem) }
                };
                op.encode()
            }
        };
        self.replicas[me].next_seq += 1;
        let op = WriteOp::new(me, seq, req.key, value).with_origin(req.id);
        self.apply(io, op.clone());
        self.replicas[me].unsent.push(op);
        io.respond(req.id, OpResult::Ok);
        self.arm_flush(io);
    }

    fn on_message(&mut self, io: &mut Io<'_, Gossip>, src: WriterId, msg: Gossip) {
        let mut fresh = Vec::new();
        for op in msg.ops {
            if self.apply(io, op.clone()) {
                fresh.push(op);
            }
        }
        if let Some(c) = &msg.counter {
            self.replicas[io.node].counter.merge(c);
        }
        if msg.pull {
            let r = &self.replicas[io.node];
            let counter = (self.kind == MechanismKind::CrdtGcounter).then(|| r.counter.clone());
            io.send(src, Gossip { ops: r.register.series().to_vec(), counter, pull: false });
        }
        if fresh.is_empty() {
            return;
        }
        let members: BTreeSet<WriterId> = [src, io.node].into();
        let mut pass = PassTrace::new("-", src, ArbiterKind::None)
            .stage(Stage::Exe, Rtt::HALF)
            .quorum(Quorum::new(members, Stage::Exe, self.n).expect("members in range"));
        for op in fresh {
            pass = pass.converge(op);
        }
        io.pass(pass);
    }

    fn on_timer(&mut self, io: &mut Io<'_, Gossip>, _id: u64) {
        let me = io.node;
        let r = &mut self.replicas[me];
        r.flush_armed = false;
        let ops = std::mem::take(&mut r.unsent);
        let pull = std::mem::take(&mut r.pull);
        if ops.is_empty() && !pull {
            return;
        }
        let counter = (self.kind == MechanismKind::CrdtGcounter).then(|| r.counter.clone());
        io.send_to((0..self.n).filter(|&d| d != me), Gossip { ops, counter, pull });
    }

    fn on_crash(&mut self, node: WriterId) {
        self.replicas[node].flush_armed = false;
    }

    fn on_recover(&mut self, io: &mut Io<'_, Gossip>) {
        // Anti-entropy both ways: re-offer everything seen, pull what was missed.
        let r = &mut self.replicas[io.node];
        r.unsent = r.register.series().to_vec();
        r.pull = true;
        self.arm_flush(io);
    }

    fn registers(&self) -> Vec<Register> {
        self.replicas.iter().map(|r| r.register.clone()).collect()
    }

    fn delivered(&self) -> Option<Vec<BTreeSet<OpId>>> {
        Some(self.replicas.iter().map(|r| r.known.clone()).collect())
    }
}

impl Crdt {
    /// Counter state of each replica (grow-only counter only).
    pub fn counters(&self) -> Vec<GCounter> {
        self.replicas.iter().map(|r| r.counter.clone()).collect()
    }
}
