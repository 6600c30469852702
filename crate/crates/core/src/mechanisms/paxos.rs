//! Chained single-decree Paxos. Slot `s` decides the `s`-th entry of every
//! replica's register. Any writer may propose: phase one sends `Prepare` to
//! all writers, phase two sends `Accept` to the first quorum of promisers.
//! Acceptors announce `Accepted` to every learner, so a decision survives a
//! proposer crash.

use super::{majority, request_op, MechanismKind, MechanismParams};
use crate::model::{
    ArbiterKind, Metadata, OpId, PassTrace, Quorum, Register, RequestId, Rtt, Stage, Tick, WriteOp, WriterId,
};
use crate::runner::{Io, Mechanism};
use crate::simnet::{ClientRequest, SimConfig};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub type Slot = usize;
pub type Ballot = u64;

#[derive(Clone, Debug, PartialEq)]
pub enum PaxosMsg {
    Prepare { slot: Slot, ballot: Ballot },
    Promise { slot: Slot, ballot: Ballot, accepted: Option<(Ballot, WriteOp)> },
    Accept { slot: Slot, ballot: Ballot, op: WriteOp },
    Accepted { slot: Slot, ballot: Ballot, op: WriteOp },
    Nack { slot: Slot, ballot: Ballot, promised: Ballot },
    Decided { slot: Slot, op: WriteOp },
    Sync { from: Slot },
}

/// Durable acceptor state for one writer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Acceptor {
    promised: BTreeMap<Slot, Ballot>,
    accepted: BTreeMap<Slot, (Ballot, WriteOp)>,
}

/// Acceptor reply to a message, or `None` when it is not an acceptor input.
pub fn acceptor_step(acc: &mut Acceptor, msg: &PaxosMsg) -> Option<PaxosMsg> {
    match msg {
        PaxosMsg::Prepare { slot, ballot } => {
            let promised = acc.promised.get(slot).copied().unwrap_or(0);
            if *ballot >= promised {
                acc.promised.insert(*slot, *ballot);
                Some(PaxosMsg::Promise { slot: *slot, ballot: *ballot, accepted: acc.accepted.get(slot).cloned() })
            } else {
                Some(PaxosMsg::Nack { slot: *slot, ballot: *ballot, promised })
            }
        }
        PaxosMsg::Accept { slot, ballot, op } => {
            let promised = acc.promised.get(slot).copied().unwrap_or(0);
            if *ballot >= promised {
                acc.promised.insert(*slot, *ballot);
                acc.accepted.insert(*slot, (*ballot, op.clone()));
                Some(PaxosMsg::Accepted { slot: *slot, ballot: *ballot, op: op.clone() })
            } else {
                Some(PaxosMsg::Nack { slot: *slot, ballot: *ballot, promised })
            }
        }
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Phase {
    Preparing,
    Accepting { value: WriteOp, quorum: BTreeSet<WriterId> },
    Backoff,
}

#[derive(Clone, Debug)]
struct Attempt {
    slot: Slot,
    ballot: Ballot,
    phase: Phase,
    promises: Vec<(WriterId, Option<(Ballot, WriteOp)>)>,
}

#[derive(Clone, Debug)]
struct Node {
    // Stable storage.
    acceptor: Acceptor,
    register: Register,
    decided: BTreeMap<Slot, WriteOp>,
    decided_ids: BTreeSet<OpId>,
    queue: VecDeque<WriteOp>,
    awaiting: BTreeSet<RequestId>,
    next_seq: u64,
    round: u64,
    // Volatile.
    votes: BTreeMap<(Slot, Ballot), BTreeSet<WriterId>>,
    attempt: Option<Attempt>,
    generation: u64,
}

pub struct Paxos {
    kind: MechanismKind,
    n: usize,
    threshold: usize,
    timeout: Tick,
    nodes: Vec<Node>,
}

impl Paxos {
    pub fn new(kind: MechanismKind, n: usize, params: &MechanismParams, config: &SimConfig) -> Self {
        let default = if kind == MechanismKind::BrokenSubMajorityPaxos { (n / 2).max(1) } else { majority(n) };
        let nodes = (0..n)
            .map(|i| Node {
                acceptor: Acceptor::default(),
                register: Register::new(i, kind.default_projection()),
                decided: BTreeMap::new(),
                decided_ids: BTreeSet::new(),
                queue: VecDeque::new(),
                awaiting: BTreeSet::new(),
                next_seq: 0,
                round: 0,
                votes: BTreeMap::new(),
                attempt: None,
                generation: 0,
            })
            .collect();
        Self { kind, n, threshold: params.accept_threshold.unwrap_or(default), timeout: params.timeout(config), nodes }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    fn first_open_slot(node: &Node) -> Slot {
        (0..).find(|s| !node.decided.contains_key(s)).expect("unbounded")
    }

    fn arm(&mut self, io: &mut Io<'_, PaxosMsg>, delay: Tick) {
        let node = &mut self.nodes[io.node];
        node.generation += 1;
        io.set_timer(delay, node.generation);
    }

    fn start_attempt(&mut self, io: &mut Io<'_, PaxosMsg>) {
        let n = self.n as u64;
        let node = &mut self.nodes[io.node];
        while node.queue.front().is_some_and(|op| node.decided_ids.contains(&op.id())) {
            node.queue.pop_front();
        }
        if node.queue.is_empty() {
            node.attempt = None;
            return;
        }
        node.round += 1;
        let ballot = node.round * n + io.node as u64;
        let slot = Self::first_open_slot(node);
        node.attempt = Some(Attempt { slot, ballot, phase: Phase::Preparing, promises: Vec::new() });
        io.broadcast(PaxosMsg::Prepare { slot, ballot });
        let t = self.timeout;
        self.arm(io, t);
    }

    fn back_off(&mut self, io: &mut Io<'_, PaxosMsg>) {
        if let Some(a) = self.nodes[io.node].attempt.as_mut() {
            a.phase = Phase::Backoff;
        }
        let delay = io.backoff(self.timeout);
        self.arm(io, delay);
    }

    fn decide(&mut self, io: &mut Io<'_, PaxosMsg>, slot: Slot, op: WriteOp) {
        let me = io.node;
        let node = &mut self.nodes[me];
        if let Some(prev) = node.decided.get(&slot) {
            if prev.id() != op.id() {
                io.violation(format!("slot {slot} decided twice: {} and {}", prev.id(), op.id()));
            }
            return;
        }
        node.decided.insert(slot, op.clone());
        node.decided_ids.insert(op.id());
        while let Some(next) = node.decided.get(&node.register.len()).cloned() {
            if super::append(io, &mut node.register, next.clone()) {
                if let Some(origin) = next.origin.filter(|o| next.writer_id == me && node.awaiting.remove(o)) {
                    io.respond(origin, super::answer(&node.register, &next));
                }
            } else {
                break;
            }
        }
        let Some(attempt) = node.attempt.as_ref().filter(|a| a.slot == slot) else {
            return;
        };
        if let Phase::Accepting { value, quorum } = &attempt.phase {
            if value.id() == op.id() && node.votes.get(&(slot, attempt.ballot)).is_some_and(|v| v.len() >= self.threshold)
            {
                let members = quorum.clone();
                io.pass(
                    PassTrace::new("-", me, ArbiterKind::Static)
                        .stage(Stage::Pre, Rtt::ONE)
                        .quorum(Quorum::all(self.n, Stage::Pre))
                        .stage(Stage::Exe, Rtt::ONE)
                        .quorum(Quorum::new(members, Stage::Exe, self.n).expect("members in range"))
                        .converge(op),
                );
            }
        }
        self.start_attempt(io);
    }

    fn on_promise(&mut self, io: &mut Io<'_, PaxosMsg>, src: WriterId, slot: Slot, ballot: Ballot, acc: Option<(Ballot, WriteOp)>) {
        let threshold = self.threshold;
        let node = &mut self.nodes[io.node];
        let Some(a) = node.attempt.as_mut().filter(|a| a.slot == slot && a.ballot == ballot) else {
            return;
        };
        if a.phase != Phase::Preparing || a.promises.iter().any(|(w, _)| *w == src) {
            return;
        }
        a.promises.push((src, acc));
        if a.promises.len() < threshold {
            return;
        }
        let adopted = a.promises.iter().filter_map(|(_, acc)| acc.as_ref()).max_by_key(|(b, _)| *b).map(|(_, op)| op.clone());
        let value = adopted.unwrap_or_else(|| node.queue.front().cloned().expect("attempt implies queued op"));
        let quorum: BTreeSet<WriterId> = a.promises.iter().map(|(w, _)| *w).collect();
        a.phase = Phase::Accepting { value: value.clone(), quorum: quorum.clone() };
        io.send_to(quorum, PaxosMsg::Accept { slot, ballot, op: value });
        let t = self.timeout;
        self.arm(io, t);
    }
}

impl Mechanism for Paxos {
    type Msg = PaxosMsg;

    fn kind(&self) -> MechanismKind {
        self.kind
    }

    fn n(&self) -> usize {
        self.n
    }

    fn on_client(&mut self, io: &mut Io<'_, PaxosMsg>, req: &ClientRequest) {
        let node = &mut self.nodes[io.node];
        let op = request_op(io.node, node.next_seq, req, Metadata::default());
        node.next_seq += 1;
        node.awaiting.insert(req.id);
        node.queue.push_back(op);
        if node.attempt.is_none() {
            self.start_attempt(io);
        }
    }

    fn on_message(&mut self, io: &mut Io<'_, PaxosMsg>, src: WriterId, msg: PaxosMsg) {
        let me = io.node;
        match msg {
            PaxosMsg::Prepare { slot, .. } | PaxosMsg::Accept { slot, .. } if self.nodes[me].decided.contains_key(&slot) => {
                let op = self.nodes[me].decided[&slot].clone();
                io.send(src, PaxosMsg::Decided { slot, op });
            }
            PaxosMsg::Prepare { .. } => {
                if let Some(reply) = acceptor_step(&mut self.nodes[me].acceptor, &msg) {
                    io.send(src, reply);
                }
            }
            PaxosMsg::Accept { .. } => {
                if let Some(reply) = acceptor_step(&mut self.nodes[me].acceptor, &msg) {
                    match reply {
                        PaxosMsg::Accepted { .. } => io.broadcast(reply),
                        nack => io.send(src, nack),
                    }
                }
            }
            PaxosMsg::Promise { slot, ballot, accepted } => self.on_promise(io, src, slot, ballot, accepted),
            PaxosMsg::Accepted { slot, ballot, op } => {
                let voters = self.nodes[me].votes.entry((slot, ballot)).or_default();
                voters.insert(src);
                if voters.len() >= self.threshold {
                    self.decide(io, slot, op);
                }
            }
            PaxosMsg::Nack { slot, ballot, promised } => {
                let n = self.n as u64;
                let node = &mut self.nodes[me];
                node.round = node.round.max(promised / n);
                let current = node.attempt.as_ref().is_some_and(|a| a.slot == slot && a.ballot == ballot && a.phase != Phase::Backoff);
                if current {
                    self.back_off(io);
                }
            }
            PaxosMsg::Decided { slot, op } => self.decide(io, slot, op),
            PaxosMsg::Sync { from } => {
                let node = &self.nodes[me];
                for (slot, op) in node.decided.range(from..) {
                    io.send(src, PaxosMsg::Decided { slot: *slot, op: op.clone() });
                }
            }
        }
    }

    fn on_timer(&mut self, io: &mut Io<'_, PaxosMsg>, id: u64) {
        if id == self.nodes[io.node].generation && self.nodes[io.node].attempt.is_some() {
            self.start_attempt(io);
        }
    }

    fn on_crash(&mut self, node: WriterId) {
        let node = &mut self.nodes[node];
        node.votes.clear();
        node.attempt = None;
    }

    fn on_recover(&mut self, io: &mut Io<'_, PaxosMsg>) {
        let from = self.nodes[io.node].register.len();
        io.broadcast(PaxosMsg::Sync { from });
        self.start_attempt(io);
    }

    fn registers(&self) -> Vec<Register> {
        self.nodes.iter().map(|n| n.register.clone()).collect()
    }
}
