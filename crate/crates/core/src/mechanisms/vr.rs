//! Viewstamped Replication. The leader of view `v` is writer `v mod n`.
//!
//! A writer whose requests stall starts a view change: `StartViewChange`
//! to every writer, `DoViewChange` from each to the new leader, and a
//! one-way `StartView` from the new leader once a majority reported.

use super::{majority, request_op, MechanismKind, MechanismParams};
use crate::model::{ArbiterKind, Metadata, PassTrace, Quorum, Register, RequestId, Rtt, Stage, Tick, Value, WriteOp, WriterId};
use crate::runner::{Io, Mechanism};
use crate::simnet::{ClientRequest, SimConfig};
use std::collections::BTreeMap;

pub type View = u64;

#[derive(Clone, Debug, PartialEq)]
pub enum VrMsg {
    Prepare { view: View, log: Vec<WriteOp>, commit_len: usize },
    PrepareOk { view: View, len: usize },
    StartViewChange { view: View },
    DoViewChange { view: View, log: Vec<WriteOp>, last_normal: View, commit_len: usize },
    StartView { view: View, log: Vec<WriteOp>, commit_len: usize },
    /// Reply to a message from an older view.
    NewState { view: View, log: Vec<WriteOp>, commit_len: usize },
    Forward { req: ClientRequest },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Normal,
    ViewChange,
}

pub fn leader_of(view: View, n: usize) -> WriterId {
    (view % n as u64) as WriterId
}

/// Best log among `DoViewChange` reports: highest last normal view, then
/// longest, then lowest sender.
pub fn best_log(reports: &BTreeMap<WriterId, (Vec<WriteOp>, View, usize)>) -> Option<&Vec<WriteOp>> {
    reports
        .iter()
        .max_by(|(wa, a), (wb, b)| (a.1, a.0.len()).cmp(&(b.1, b.0.len())).then(wb.cmp(wa)))
        .map(|(_, r)| &r.0)
}

const RETRY: u64 = 0;
const RESEND: u64 = 1;

#[derive(Clone, Debug)]
struct Node {
    // Stable storage.
    view: View,
    status: Status,
    last_normal: View,
    log: Vec<WriteOp>,
    register: Register,
    next_seq: u64,
    pending: BTreeMap<RequestId, ClientRequest>,
    // Volatile.
    acks: Vec<usize>,
    commit_len: usize,
    reports: BTreeMap<WriterId, (Vec<WriteOp>, View, usize)>,
    heard: bool,
    timer_gen: [u64; 2],
}

pub struct Vr {
    n: usize,
    timeout: Tick,
    nodes: Vec<Node>,
}

impl Vr {
    pub fn new(n: usize, params: &MechanismParams, config: &SimConfig) -> Self {
        let nodes = (0..n)
            .map(|i| Node {
                view: 0,
                status: Status::Normal,
                last_normal: 0,
                log: Vec::new(),
                register: Register::new(i, MechanismKind::Vr.default_projection()),
                next_seq: 0,
                pending: BTreeMap::new(),
                acks: vec![0; n],
                commit_len: 0,
                reports: BTreeMap::new(),
                heard: false,
                timer_gen: [0; 2],
            })
            .collect();
        Self { n, timeout: params.timeout(config), nodes }
    }

    pub fn view(&self, w: WriterId) -> View {
        self.nodes[w].view
    }

    pub fn status(&self, w: WriterId) -> Status {
        self.nodes[w].status
    }

    fn is_leader(&self, w: WriterId) -> bool {
        let node = &self.nodes[w];
        node.status == Status::Normal && leader_of(node.view, self.n) == w
    }

    fn arm(&mut self, io: &mut Io<'_, VrMsg>, kind: u64, delay: Tick) {
        let g = &mut self.nodes[io.node].timer_gen[kind as usize];
        *g += 1;
        io.set_timer(delay, *g << 1 | kind);
    }

    fn others(&self, me: WriterId) -> impl Iterator<Item = WriterId> {
        (0..self.n).filter(move |&w| w != me)
    }

    fn leader_append(&mut self, me: WriterId, req: &ClientRequest) -> bool {
        let node = &mut self.nodes[me];
        if node.log.iter().any(|op| op.origin == Some(req.id)) {
            return false;
        }
        let op = request_op(me, node.next_seq, req, Metadata::with_view(node.view));
        node.next_seq += 1;
        node.log.push(op);
        node.acks[me] = node.log.len();
        true
    }

    fn prepare(&mut self, io: &mut Io<'_, VrMsg>) {
        let me = io.node;
        let node = &self.nodes[me];
        let msg = VrMsg::Prepare { view: node.view, log: node.log.clone(), commit_len: node.commit_len };
        io.send_to(self.others(me), msg);
        if node.commit_len < node.log.len() {
            let t = self.timeout;
            self.arm(io, RESEND, t);
        }
    }

    fn apply(&mut self, io: &mut Io<'_, VrMsg>) -> Vec<WriteOp> {
        let node = &mut self.nodes[io.node];
        let mut applied = Vec::new();
        while node.register.len() < node.commit_len.min(node.log.len()) {
            let op = node.log[node.register.len()].clone();
            if !super::append(io, &mut node.register, op.clone()) {
                break;
            }
            if let Some(req) = op.origin.and_then(|o| node.pending.remove(&o)) {
                io.respond(req.id, super::answer(&node.register, &op));
            }
            applied.push(op);
        }
        applied
    }

    fn advance_commit(&mut self, io: &mut Io<'_, VrMsg>) {
        let me = io.node;
        let maj = majority(self.n);
        let node = &mut self.nodes[me];
        let best = (node.commit_len + 1..=node.log.len()).rev().find(|&l| node.acks.iter().filter(|&&a| a >= l).count() >= maj);
        let Some(new_len) = best else { return };
        node.commit_len = new_len;
        let view = node.view;
        for op in self.apply(io) {
            if op.writer_id == me && op.origin.is_some() && op.meta.view == Some(view) {
                io.pass(
                    PassTrace::new("normal", me, ArbiterKind::Static)
                        .stage(Stage::Exe, Rtt::ONE)
                        .quorum(Quorum::all(self.n, Stage::Exe))
                        .converge(op),
                );
            }
        }
        self.prepare(io);
    }

    fn forward_pending(&mut self, io: &mut Io<'_, VrMsg>) {
        let node = &self.nodes[io.node];
        let leader = leader_of(node.view, self.n);
        if node.status == Status::Normal && leader != io.node {
            let reqs: Vec<_> = node.pending.values().cloned().collect();
            for req in reqs {
                io.send(leader, VrMsg::Forward { req });
            }
        }
    }

    /// Adopts a log installed by the leader of a newer view.
    fn install(&mut self, io: &mut Io<'_, VrMsg>, view: View, log: Vec<WriteOp>, commit_len: usize) {
        let node = &mut self.nodes[io.node];
        node.view = view;
        node.status = Status::Normal;
        node.last_normal = view;
        node.commit_len = node.commit_len.max(commit_len.min(log.len()));
        node.log = log;
        node.reports.clear();
        node.heard = true;
        self.apply(io);
        self.forward_pending(io);
    }

    fn start_view_change(&mut self, io: &mut Io<'_, VrMsg>, view: View) {
        let me = io.node;
        let node = &mut self.nodes[me];
        node.view = view;
        node.status = Status::ViewChange;
        node.reports.clear();
        io.send_to(self.others(me), VrMsg::StartViewChange { view });
        self.report(io);
    }

    fn report(&mut self, io: &mut Io<'_, VrMsg>) {
        let me = io.node;
        let node = &self.nodes[me];
        let (view, log, last_normal, commit_len) = (node.view, node.log.clone(), node.last_normal, node.commit_len);
        let leader = leader_of(view, self.n);
        if leader == me {
            self.on_do_view_change(io, me, view, log, last_normal, commit_len);
        } else {
            io.send(leader, VrMsg::DoViewChange { view, log, last_normal, commit_len });
        }
    }

    fn on_do_view_change(&mut self, io: &mut Io<'_, VrMsg>, src: WriterId, view: View, log: Vec<WriteOp>, last_normal: View, commit_len: usize) {
        let me = io.node;
        let n = self.n;
        if view < self.nodes[me].view || leader_of(view, n) != me {
            return;
        }
        if view > self.nodes[me].view {
            self.start_view_change(io, view);
        }
        let node = &mut self.nodes[me];
        if node.status != Status::ViewChange {
            return;
        }
        node.reports.insert(src, (log, last_normal, commit_len));
        if node.reports.len() < majority(n) {
            return;
        }
        let best = best_log(&node.reports).cloned().unwrap_or_default();
        let commit = node.reports.values().map(|r| r.2).max().unwrap_or(0);
        node.log = best;
        node.commit_len = node.commit_len.max(commit.min(node.log.len()));
        node.status = Status::Normal;
        node.last_normal = view;
        node.reports.clear();
        let marker = WriteOp::new(me, node.next_seq, 0, Value::Null).with_meta(Metadata::with_view(view));
        node.next_seq += 1;
        node.log.push(marker.clone());
        node.acks = vec![0; n];
        node.acks[me] = node.log.len();
        io.pass(
            PassTrace::new("changing", me, ArbiterKind::Static)
                .stage(Stage::Pre, Rtt::from_halves(3))
                .quorum(Quorum::all(n, Stage::Pre))
                .converge(marker),
        );
        let node = &self.nodes[me];
        let msg = VrMsg::StartView { view, log: node.log.clone(), commit_len: node.commit_len };
        io.send_to(self.others(me), msg);
        let own: Vec<ClientRequest> = node.pending.values().cloned().collect();
        for req in own {
            self.leader_append(me, &req);
        }
        self.apply(io);
        self.prepare(io);
    }
}

impl Mechanism for Vr {
    type Msg = VrMsg;

    fn kind(&self) -> MechanismKind {
        MechanismKind::Vr
    }

    fn n(&self) -> usize {
        self.n
    }

    fn on_client(&mut self, io: &mut Io<'_, VrMsg>, req: &ClientRequest) {
        let me = io.node;
        self.nodes[me].pending.insert(req.id, req.clone());
        if self.is_leader(me) {
            self.leader_append(me, req);
            self.prepare(io);
            self.advance_commit(io);
            return;
        }
        let node = &mut self.nodes[me];
        if node.status == Status::Normal {
            io.send(leader_of(node.view, self.n), VrMsg::Forward { req: req.clone() });
        }
        node.heard = false;
        let t = self.timeout;
        self.arm(io, RETRY, t);
    }

    fn on_message(&mut self, io: &mut Io<'_, VrMsg>, src: WriterId, msg: VrMsg) {
        let me = io.node;
        let my_view = self.nodes[me].view;
        match msg {
            VrMsg::Prepare { view, .. } | VrMsg::StartView { view, .. } | VrMsg::PrepareOk { view, .. } if view < my_view => {
                let node = &self.nodes[me];
                if node.status == Status::Normal {
                    io.send(src, VrMsg::NewState { view: my_view, log: node.log.clone(), commit_len: node.commit_len });
                }
            }
            VrMsg::Prepare { view, log, commit_len } => {
                let node = &mut self.nodes[me];
                if view > node.view || node.status == Status::ViewChange {
                    if view == node.view && node.status == Status::ViewChange {
                        // Not installed yet; the StartView will follow.
                        return;
                    }
                    let len = log.len();
                    self.install(io, view, log, commit_len);
                    io.send(src, VrMsg::PrepareOk { view, len });
                    return;
                }
                node.heard = true;
                let len = log.len();
                // A shorter log from the same view is a reordered older message.
                if len > node.log.len() {
                    node.log = log;
                }
                node.commit_len = node.commit_len.max(commit_len.min(len));
                io.send(src, VrMsg::PrepareOk { view, len });
                self.apply(io);
            }
            VrMsg::PrepareOk { view, len } => {
                if self.is_leader(me) && view == my_view {
                    let node = &mut self.nodes[me];
                    node.acks[src] = node.acks[src].max(len);
                    self.advance_commit(io);
                }
            }
            VrMsg::StartViewChange { view } => {
                if view > my_view {
                    self.start_view_change(io, view);
                }
            }
            VrMsg::DoViewChange { view, log, last_normal, commit_len } => {
                self.on_do_view_change(io, src, view, log, last_normal, commit_len);
            }
            VrMsg::StartView { view, log, commit_len } => {
                let node = &self.nodes[me];
                if view > node.view || (view == node.view && node.status == Status::ViewChange) {
                    let len = log.len();
                    self.install(io, view, log, commit_len);
                    io.send(src, VrMsg::PrepareOk { view, len });
                }
            }
            VrMsg::NewState { view, log, commit_len } => {
                if view > my_view {
                    self.install(io, view, log, commit_len);
                }
            }
            VrMsg::Forward { req } => {
                if self.is_leader(me) && self.leader_append(me, &req) {
                    self.prepare(io);
                }
            }
        }
    }

    fn on_timer(&mut self, io: &mut Io<'_, VrMsg>, id: u64) {
        let me = io.node;
        let kind = id & 1;
        if self.nodes[me].timer_gen[kind as usize] != id >> 1 {
            return;
        }
        let t = self.timeout;
        if kind == RESEND {
            if self.is_leader(me) {
                self.prepare(io);
            }
            return;
        }
        if self.nodes[me].pending.is_empty() || self.is_leader(me) {
            return;
        }
        let node = &mut self.nodes[me];
        if node.heard && node.status == Status::Normal {
            node.heard = false;
            self.forward_pending(io);
        } else {
            let next = node.view + 1;
            self.start_view_change(io, next);
        }
        self.arm(io, RETRY, t);
    }

    fn on_crash(&mut self, w: WriterId) {
        let node = &mut self.nodes[w];
        node.acks = vec![0; self.n];
        node.commit_len = node.register.len();
        node.reports.clear();
        node.heard = false;
    }

    fn on_recover(&mut self, io: &mut Io<'_, VrMsg>) {
        let me = io.node;
        if self.is_leader(me) {
            let node = &mut self.nodes[me];
            node.acks[me] = node.log.len();
            self.prepare(io);
        }
        if !self.nodes[me].pending.is_empty() {
            self.forward_pending(io);
            let t = self.timeout;
            self.arm(io, RETRY, t);
        }
    }

    fn registers(&self) -> Vec<Register> {
        self.nodes.iter().map(|n| n.register.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leader_rotates_round_robin() {
        assert_eq!(leader_of(7, 5), 2);
        assert_eq!(leader_of(0, 3), 0);
    }

    #[test]
    fn best_log_prefers_latest_normal_view_then_length() {
        let op = |s| WriteOp::new(0, s, 0, Value::int(s as i64));
        let mut reports = BTreeMap::new();
        reports.insert(0, (vec![op(0), op(1), op(2)], 1, 0));
        reports.insert(1, (vec![op(0)], 2, 0));
        reports.insert(2, (vec![op(0), op(3)], 2, 0));
        assert_eq!(best_log(&reports).unwrap().len(), 2);
    }
}
