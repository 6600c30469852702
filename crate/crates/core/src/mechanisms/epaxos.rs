//! Egalitarian Paxos over per-key conflicts, with an optional priority tree.
//!
//! Every writer coordinates its own instances. `PreAccept` goes to a fast
//! quorum; identical dependency replies commit in one round trip. Divergent
//! replies either take a second `Accept` round to a majority (classic), or,
//! with a priority tree, commit the union of a majority's replies at once
//! and let each replica order the resulting cycles by priority rank.
//!
//! Committed instances execute in dependency order: strongly connected
//! components of the dependency graph run deps-first, members of one
//! component sorted by rank.

use super::{fast_quorum, majority, request_op, MechanismKind, MechanismParams, PriorityTree};
use crate::model::{
    ArbiterKind, Key, Metadata, OpId, PassTrace, Quorum, Register, RequestId, Rtt, Stage, Tick, WriteOp, WriterId,
};
use crate::runner::{Io, Mechanism};
use crate::simnet::{ClientRequest, SimConfig};
use std::collections::{BTreeMap, BTreeSet};

pub type Deps = BTreeSet<OpId>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    PreAccepted,
    Accepted,
    Committed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub op: WriteOp,
    pub deps: Deps,
    pub status: Status,
    pub accepted_ballot: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EpMsg {
    PreAccept { op: WriteOp, deps: Deps, ballot: u64 },
    PreAcceptOk { inst: OpId, deps: Deps, ballot: u64 },
    Accept { op: WriteOp, deps: Deps, ballot: u64 },
    AcceptOk { inst: OpId, ballot: u64 },
    Commit { op: WriteOp, deps: Deps },
    Nack { inst: OpId, ballot: u64 },
    Prepare { inst: OpId, key: Key, ballot: u64 },
    PrepareOk { inst: OpId, ballot: u64, record: Option<Record>, known: Deps },
    Sync,
}

#[derive(Clone, Debug)]
enum Phase {
    PreAccepting { replies: Vec<(WriterId, Deps)>, fq: BTreeSet<WriterId>, expanded: bool },
    Accepting { deps: Deps, acks: BTreeSet<WriterId>, quorums: Vec<BTreeSet<WriterId>>, recovered: bool },
    Preparing { replies: Vec<(WriterId, Option<Record>, Deps)> },
}

#[derive(Clone, Debug)]
struct Coord {
    op: WriteOp,
    ballot: u64,
    phase: Phase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TimerKind {
    Coordinate,
    Recover,
}

#[derive(Clone, Debug)]
struct Replica {
    // Stable storage.
    instances: BTreeMap<OpId, Record>,
    promised: BTreeMap<OpId, u64>,
    by_key: BTreeMap<Key, BTreeSet<OpId>>,
    executed: BTreeSet<OpId>,
    register: Register,
    next_seq: u64,
    awaiting: BTreeSet<RequestId>,
    // Volatile.
    coord: BTreeMap<OpId, Coord>,
    timers: BTreeMap<u64, (OpId, TimerKind)>,
    next_timer: u64,
}

impl Replica {
    fn conflicts(&self, key: Key, inst: OpId) -> Deps {
        self.by_key.get(&key).map(|s| s.iter().copied().filter(|i| *i != inst).collect()).unwrap_or_default()
    }

    fn store(&mut self, rec: Record) {
        self.by_key.entry(rec.op.key).or_default().insert(rec.op.id());
        self.instances.insert(rec.op.id(), rec);
    }

    fn is_committed(&self, inst: OpId) -> bool {
        self.instances.get(&inst).is_some_and(|r| r.status == Status::Committed)
    }
}

/// Total order key for members of one strongly connected component.
pub fn order_key(op: OpId, ranks: Option<&[usize]>) -> (usize, u64, WriterId) {
    match ranks {
        Some(r) => (r.get(op.writer).copied().unwrap_or(usize::MAX), op.seq, op.writer),
        None => (op.writer, op.seq, 0),
    }
}

/// Strongly connected components of `graph` restricted to its keys, in an
/// order where every component follows the components it depends on.
pub fn sccs_deps_first(graph: &BTreeMap<OpId, Deps>) -> Vec<Vec<OpId>> {
    struct State<'a> {
        graph: &'a BTreeMap<OpId, Deps>,
        index: BTreeMap<OpId, usize>,
        low: BTreeMap<OpId, usize>,
        on_stack: BTreeSet<OpId>,
        stack: Vec<OpId>,
        next: usize,
        out: Vec<Vec<OpId>>,
    }
    fn visit(s: &mut State<'_>, v: OpId) {
        s.index.insert(v, s.next);
        s.low.insert(v, s.next);
        s.next += 1;
        s.stack.push(v);
        s.on_stack.insert(v);
        let succ: Vec<OpId> = s.graph[&v].iter().copied().filter(|d| s.graph.contains_key(d)).collect();
        for w in succ {
            if !s.index.contains_key(&w) {
                visit(s, w);
                let lw = s.low[&w];
                let lv = s.low.get_mut(&v).expect("visited");
                *lv = (*lv).min(lw);
            } else if s.on_stack.contains(&w) {
                let iw = s.index[&w];
                let lv = s.low.get_mut(&v).expect("visited");
                *lv = (*lv).min(iw);
            }
        }
        if s.low[&v] == s.index[&v] {
            let mut comp = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack.remove(&w);
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.out.push(comp);
        }
    }
    let mut s = State {
        graph,
        index: BTreeMap::new(),
        low: BTreeMap::new(),
        on_stack: BTreeSet::new(),
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for &v in graph.keys() {
        if !s.index.contains_key(&v) {
            visit(&mut s, v);
        }
    }
    s.out
}

pub struct Epaxos {
    kind: MechanismKind,
    n: usize,
    fq_size: usize,
    timeout: Tick,
    ranks: Option<Vec<usize>>,
    replicas: Vec<Replica>,
}

impl Epaxos {
    pub fn new(kind: MechanismKind, n: usize, params: &MechanismParams, config: &SimConfig) -> Self {
        let ranks = (kind == MechanismKind::EpaxosPriority)
            .then(|| params.priority_tree.clone().unwrap_or_else(|| PriorityTree::heap(n)).ranks(n));
        let replicas = (0..n)
            .map(|i| Replica {
                instances: BTreeMap::new(),
                promised: BTreeMap::new(),
                by_key: BTreeMap::new(),
                executed: BTreeSet::new(),
                register: Register::new(i, kind.default_projection()),
                next_seq: 0,
                awaiting: BTreeSet::new(),
                coord: BTreeMap::new(),
                timers: BTreeMap::new(),
                next_timer: 0,
            })
            .collect();
        Self {
            kind,
            n,
            fq_size: fast_quorum(n, params.fast_quorum_ceiling),
            timeout: params.timeout(config),
            ranks,
            replicas,
        }
    }

    pub fn fast_quorum_size(&self) -> usize {
        self.fq_size
    }

    /// Committed dependency sets at replica `w`.
    pub fn committed_deps(&self, w: WriterId) -> BTreeMap<OpId, Deps> {
        self.replicas[w]
            .instances
            .iter()
            .filter(|(_, r)| r.status == Status::Committed)
            .map(|(id, r)| (*id, r.deps.clone()))
            .collect()
    }

    fn arm(&mut self, io: &mut Io<'_, EpMsg>, inst: OpId, kind: TimerKind, delay: Tick) {
        let r = &mut self.replicas[io.node];
        r.next_timer += 1;
        r.timers.insert(r.next_timer, (inst, kind));
        io.set_timer(delay, r.next_timer);
    }

    fn recovery_delay(&self, io: &mut Io<'_, EpMsg>) -> Tick {
        6 * self.timeout + io.backoff(self.timeout)
    }

    fn fast_quorum_of(&self, me: WriterId) -> BTreeSet<WriterId> {
        (0..self.fq_size).map(|i| (me + i) % self.n).collect()
    }

    fn evaluate_preaccept(&mut self, io: &mut Io<'_, EpMsg>, inst: OpId, timed_out: bool) {
        let maj = majority(self.n);
        let Some(c) = self.replicas[io.node].coord.get(&inst) else { return };
        let Phase::PreAccepting { replies, fq, expanded } = &c.phase else { return };
        let all_equal = replies.windows(2).all(|w| w[0].1 == w[1].1);
        let fq_done = fq.iter().all(|m| replies.iter().any(|(w, _)| w == m));
        if fq_done && all_equal && !*expanded {
            let deps = replies[0].1.clone();
            let (op, quorum) = (c.op.clone(), fq.clone());
            let pass = PassTrace::new("fast", io.node, ArbiterKind::Dynamic)
                .stage(Stage::Exe, Rtt::ONE)
                .quorum(Quorum::new(quorum, Stage::Exe, self.n).expect("in range"));
            self.commit(io, op, deps, Some(pass));
            return;
        }
        let diverged = !all_equal || *expanded || timed_out;
        if replies.len() < maj || !diverged {
            return;
        }
        let first: Vec<&(WriterId, Deps)> = replies.iter().take(maj).collect();
        let deps: Deps = first.iter().flat_map(|(_, d)| d.iter().copied()).collect();
        let slow_quorum: BTreeSet<WriterId> = first.iter().map(|(w, _)| *w).collect();
        let (op, ballot, fq) = (c.op.clone(), c.ballot, fq.clone());
        if self.ranks.is_some() {
            let pass = PassTrace::new("slow", io.node, ArbiterKind::Dynamic)
                .stage(Stage::Exe, Rtt::ONE)
                .quorum(Quorum::new(fq, Stage::Exe, self.n).expect("in range"))
                .quorum(Quorum::new(slow_quorum, Stage::Exe, self.n).expect("in range"));
            self.commit(io, op, deps, Some(pass));
        } else {
            io.send_to(slow_quorum.iter().copied(), EpMsg::Accept { op: op.clone(), deps: deps.clone(), ballot });
            let c = self.replicas[io.node].coord.get_mut(&inst).expect("coordinating");
            c.phase = Phase::Accepting { deps, acks: BTreeSet::new(), quorums: vec![fq, slow_quorum], recovered: false };
            let t = self.timeout;
            self.arm(io, inst, TimerKind::Coordinate, t);
        }
    }

    fn commit(&mut self, io: &mut Io<'_, EpMsg>, op: WriteOp, deps: Deps, pass: Option<PassTrace>) {
        let inst = op.id();
        self.replicas[io.node].coord.remove(&inst);
        if !self.learn_commit(io, op.clone(), deps.clone()) {
            return;
        }
        let me = io.node;
        io.send_to((0..self.n).filter(|&w| w != me), EpMsg::Commit { op: op.clone(), deps });
        if let Some(p) = pass {
            io.pass(p.converge(op));
        }
        self.execute(io);
    }

    /// Records a commit; false if it was already known.
    fn learn_commit(&mut self, io: &mut Io<'_, EpMsg>, op: WriteOp, deps: Deps) -> bool {
        let r = &mut self.replicas[io.node];
        if let Some(prev) = r.instances.get(&op.id()).filter(|p| p.status == Status::Committed) {
            if prev.deps != deps {
                io.violation(format!("instance {} committed with two dependency sets", op.id()));
            }
            return false;
        }
        let ballot = r.instances.get(&op.id()).map_or(0, |p| p.accepted_ballot);
        r.store(Record { op, deps, status: Status::Committed, accepted_ballot: ballot });
        true
    }

    fn execute(&mut self, io: &mut Io<'_, EpMsg>) {
        let me = io.node;
        let ranks = self.ranks.clone();
        let r = &mut self.replicas[me];
        let pending: BTreeMap<OpId, Deps> = r
            .instances
            .iter()
            .filter(|(id, rec)| rec.status == Status::Committed && !r.executed.contains(id))
            .map(|(id, rec)| (*id, rec.deps.iter().copied().filter(|d| !r.executed.contains(d)).collect()))
            .collect();
        let mut blocked: BTreeSet<OpId> =
            pending.iter().filter(|(_, deps)| deps.iter().any(|d| !pending.contains_key(d))).map(|(id, _)| *id).collect();
        loop {
            let more: Vec<OpId> = pending
                .iter()
                .filter(|(id, deps)| !blocked.contains(id) && deps.iter().any(|d| blocked.contains(d)))
                .map(|(id, _)| *id)
                .collect();
            if more.is_empty() {
                break;
            }
            blocked.extend(more);
        }
        let ready: BTreeMap<OpId, Deps> = pending.into_iter().filter(|(id, _)| !blocked.contains(id)).collect();
        for mut comp in sccs_deps_first(&ready) {
            comp.sort_by_key(|id| order_key(*id, ranks.as_deref()));
            for id in comp {
                let op = r.instances[&id].op.clone();
                r.executed.insert(id);
                if !super::append(io, &mut r.register, op.clone()) {
                    continue;
                }
                if let Some(origin) = op.origin.filter(|o| op.writer_id == me && r.awaiting.remove(o)) {
                    io.respond(origin, super::answer(&r.register, &op));
                }
            }
        }
    }

    fn start_recovery(&mut self, io: &mut Io<'_, EpMsg>, inst: OpId) {
        let me = io.node;
        let n = self.n as u64;
        let r = &mut self.replicas[me];
        let Some(rec) = r.instances.get(&inst).cloned() else { return };
        if rec.status == Status::Committed {
            return;
        }
        let promised = r.promised.get(&inst).copied().unwrap_or(0);
        let ballot = (promised / n + 1) * n + me as u64;
        r.promised.insert(inst, ballot);
        let known = r.conflicts(rec.op.key, inst);
        r.coord.insert(inst, Coord { op: rec.op.clone(), ballot, phase: Phase::Preparing { replies: vec![(me, Some(rec.clone()), known)] } });
        io.send_to((0..self.n).filter(|&w| w != me), EpMsg::Prepare { inst, key: rec.op.key, ballot });
        let delay = self.recovery_delay(io);
        self.arm(io, inst, TimerKind::Recover, delay);
        self.evaluate_prepare(io, inst);
    }

    fn evaluate_prepare(&mut self, io: &mut Io<'_, EpMsg>, inst: OpId) {
        let maj = majority(self.n);
        let Some(c) = self.replicas[io.node].coord.get(&inst) else { return };
        let Phase::Preparing { replies } = &c.phase else { return };
        if replies.len() < maj {
            return;
        }
        let records: Vec<&Record> = replies.iter().filter_map(|(_, r, _)| r.as_ref()).collect();
        if let Some(done) = records.iter().find(|r| r.status == Status::Committed) {
            let (op, deps) = (done.op.clone(), done.deps.clone());
            self.commit(io, op, deps, None);
            return;
        }
        let deps: Deps = match records.iter().filter(|r| r.status == Status::Accepted).max_by_key(|r| r.accepted_ballot) {
            Some(acc) => acc.deps.clone(),
            None => records
                .iter()
                .flat_map(|r| r.deps.iter().copied())
                .chain(replies.iter().flat_map(|(_, _, k)| k.iter().copied()))
                .filter(|d| *d != inst)
                .collect(),
        };
        let (op, ballot) = (c.op.clone(), c.ballot);
        io.send_to(0..self.n, EpMsg::Accept { op, deps: deps.clone(), ballot });
        let c = self.replicas[io.node].coord.get_mut(&inst).expect("coordinating");
        c.phase = Phase::Accepting { deps, acks: BTreeSet::new(), quorums: Vec::new(), recovered: true };
    }

    fn on_accept_ok(&mut self, io: &mut Io<'_, EpMsg>, src: WriterId, inst: OpId, ballot: u64) {
        let maj = majority(self.n);
        let Some(c) = self.replicas[io.node].coord.get_mut(&inst).filter(|c| c.ballot == ballot) else { return };
        let Phase::Accepting { deps, acks, quorums, recovered } = &mut c.phase else { return };
        acks.insert(src);
        if acks.len() < maj {
            return;
        }
        let mut pass = PassTrace::new("slow", io.node, ArbiterKind::Dynamic).stage(Stage::Exe, Rtt::whole(2));
        let recorded = if *recovered { vec![acks.clone()] } else { quorums.clone() };
        for q in recorded {
            pass = pass.quorum(Quorum::new(q, Stage::Exe, self.n).expect("in range"));
        }
        let (op, deps) = (c.op.clone(), deps.clone());
        self.commit(io, op, deps, Some(pass));
    }
}

impl Mechanism for Epaxos {
    type Msg = EpMsg;

    fn kind(&self) -> MechanismKind {
        self.kind
    }

    fn n(&self) -> usize {
        self.n
    }

    fn on_client(&mut self, io: &mut Io<'_, EpMsg>, req: &ClientRequest) {
        let me = io.node;
        let fq = self.fast_quorum_of(me);
        let r = &mut self.replicas[me];
        let op = request_op(me, r.next_seq, req, Metadata::default());
        r.next_seq += 1;
        r.awaiting.insert(req.id);
        let inst = op.id();
        let deps = r.conflicts(op.key, inst);
        r.store(Record { op: op.clone(), deps: deps.clone(), status: Status::PreAccepted, accepted_ballot: 0 });
        r.coord.insert(inst, Coord {
            op: op.clone(),
            ballot: 0,
            phase: Phase::PreAccepting { replies: vec![(me, deps.clone())], fq: fq.clone(), expanded: false },
        });
        io.send_to(fq.into_iter().filter(|&w| w != me), EpMsg::PreAccept { op, deps, ballot: 0 });
        let t = self.timeout;
        self.arm(io, inst, TimerKind::Coordinate, t);
        self.evaluate_preaccept(io, inst, false);
    }

    fn on_message(&mut self, io: &mut Io<'_, EpMsg>, src: WriterId, msg: EpMsg) {
        let me = io.node;
        match msg {
            EpMsg::PreAccept { op, deps, ballot } => {
                let inst = op.id();
                let r = &mut self.replicas[me];
                if r.promised.get(&inst).copied().unwrap_or(0) > ballot {
                    io.send(src, EpMsg::Nack { inst, ballot });
                    return;
                }
                let reply = match r.instances.get(&inst) {
                    Some(rec) if rec.status != Status::PreAccepted => rec.deps.clone(),
                    _ => {
                        let mut all = deps;
                        all.extend(r.conflicts(op.key, inst));
                        r.store(Record { op, deps: all.clone(), status: Status::PreAccepted, accepted_ballot: 0 });
                        all
                    }
                };
                io.send(src, EpMsg::PreAcceptOk { inst, deps: reply, ballot });
                if !self.replicas[me].is_committed(inst) {
                    let delay = self.recovery_delay(io);
                    self.arm(io, inst, TimerKind::Recover, delay);
                }
            }
            EpMsg::PreAcceptOk { inst, deps, ballot } => {
                let Some(c) = self.replicas[me].coord.get_mut(&inst).filter(|c| c.ballot == ballot) else { return };
                if let Phase::PreAccepting { replies, .. } = &mut c.phase {
                    if !replies.iter().any(|(w, _)| *w == src) {
                        replies.push((src, deps));
                    }
                }
                self.evaluate_preaccept(io, inst, false);
            }
            EpMsg::Accept { op, deps, ballot } => {
                let inst = op.id();
                let r = &mut self.replicas[me];
                if r.promised.get(&inst).copied().unwrap_or(0) > ballot {
                    io.send(src, EpMsg::Nack { inst, ballot });
                    return;
                }
                r.promised.insert(inst, ballot);
                if !r.is_committed(inst) {
                    r.store(Record { op, deps, status: Status::Accepted, accepted_ballot: ballot });
                }
                io.send(src, EpMsg::AcceptOk { inst, ballot });
            }
            EpMsg::AcceptOk { inst, ballot } => self.on_accept_ok(io, src, inst, ballot),
            EpMsg::Commit { op, deps } => {
                self.replicas[me].coord.remove(&op.id());
                if self.learn_commit(io, op, deps) {
                    self.execute(io);
                }
            }
            EpMsg::Nack { inst, ballot } => {
                let r = &mut self.replicas[me];
                if r.coord.get(&inst).is_some_and(|c| c.ballot == ballot) {
                    r.coord.remove(&inst);
                }
            }
            EpMsg::Prepare { inst, key, ballot } => {
                let r = &mut self.replicas[me];
                if r.promised.get(&inst).copied().unwrap_or(0) >= ballot {
                    io.send(src, EpMsg::Nack { inst, ballot });
                    return;
                }
                r.promised.insert(inst, ballot);
                // A higher ballot supersedes any coordination of our own.
                r.coord.remove(&inst);
                let reply = EpMsg::PrepareOk { inst, ballot, record: r.instances.get(&inst).cloned(), known: r.conflicts(key, inst) };
                io.send(src, reply);
            }
            EpMsg::PrepareOk { inst, ballot, record, known } => {
                let Some(c) = self.replicas[me].coord.get_mut(&inst).filter(|c| c.ballot == ballot) else { return };
                if let Phase::Preparing { replies } = &mut c.phase {
                    if !replies.iter().any(|(w, _, _)| *w == src) {
                        replies.push((src, record, known));
                    }
                }
                self.evaluate_prepare(io, inst);
            }
            EpMsg::Sync => {
                let r = &self.replicas[me];
                for rec in r.instances.values().filter(|r| r.status == Status::Committed) {
                    io.send(src, EpMsg::Commit { op: rec.op.clone(), deps: rec.deps.clone() });
                }
            }
        }
    }

    fn on_timer(&mut self, io: &mut Io<'_, EpMsg>, id: u64) {
        let me = io.node;
        let Some((inst, kind)) = self.replicas[me].timers.remove(&id) else { return };
        if self.replicas[me].is_committed(inst) {
            return;
        }
        match kind {
            TimerKind::Recover => {
                let coordinating = self.replicas[me].coord.contains_key(&inst);
                if coordinating && inst.writer == me {
                    let delay = self.recovery_delay(io);
                    self.arm(io, inst, TimerKind::Recover, delay);
                } else {
                    self.start_recovery(io, inst);
                }
            }
            TimerKind::Coordinate => {
                let t = self.timeout;
                let Some(c) = self.replicas[me].coord.get_mut(&inst) else { return };
                match &mut c.phase {
                    Phase::PreAccepting { replies, expanded, .. } => {
                        *expanded = true;
                        let missing: Vec<WriterId> = (0..self.n).filter(|w| !replies.iter().any(|(r, _)| r == w)).collect();
                        let msg = EpMsg::PreAccept { op: c.op.clone(), deps: replies[0].1.clone(), ballot: c.ballot };
                        io.send_to(missing, msg);
                        self.arm(io, inst, TimerKind::Coordinate, t);
                        self.evaluate_preaccept(io, inst, true);
                    }
                    Phase::Accepting { deps, .. } => {
                        let msg = EpMsg::Accept { op: c.op.clone(), deps: deps.clone(), ballot: c.ballot };
                        io.send_to(0..self.n, msg);
                        self.arm(io, inst, TimerKind::Coordinate, t);
                    }
                    Phase::Preparing { .. } => {}
                }
            }
        }
    }

    fn on_crash(&mut self, w: WriterId) {
        let r = &mut self.replicas[w];
        r.coord.clear();
        r.timers.clear();
    }

    fn on_recover(&mut self, io: &mut Io<'_, EpMsg>) {
        let me = io.node;
        io.send_to((0..self.n).filter(|&w| w != me), EpMsg::Sync);
        let open: Vec<OpId> =
            self.replicas[me].instances.iter().filter(|(_, r)| r.status != Status::Committed).map(|(id, _)| *id).collect();
        for inst in open {
            let t = self.timeout + io.backoff(self.timeout);
            self.arm(io, inst, TimerKind::Recover, t);
        }
    }

    fn registers(&self) -> Vec<Register> {
        self.replicas.iter().map(|r| r.register.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(w: usize, s: u64) -> OpId {
        OpId::new(w, s)
    }

    #[test]
    fn scc_order_puts_dependencies_first() {
        let a = id(0, 0);
        let b = id(1, 0);
        let c = id(2, 0);
        // c -> b, b <-> a
        let graph = BTreeMap::from([(a, Deps::from([b])), (b, Deps::from([a])), (c, Deps::from([b]))]);
        let comps = sccs_deps_first(&graph);
        assert_eq!(comps.len(), 2);
        let mut first = comps[0].clone();
        first.sort();
        assert_eq!(first, vec![a, b]);
        assert_eq!(comps[1], vec![c]);
    }

    #[test]
    fn priority_key_orders_ancestor_first() {
        let ranks = PriorityTree::heap(5).ranks(5);
        // writer 1 is parent of writer 3.
        assert!(order_key(id(1, 9), Some(&ranks)) < order_key(id(3, 0), Some(&ranks)));
        // Classic order: lowest writer id first.
        assert!(order_key(id(1, 9), None) < order_key(id(3, 0), None));
    }
}
