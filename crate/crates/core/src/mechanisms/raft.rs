//! Raft leader election and log replication.
//!
//! Elections are started on demand: a writer with an outstanding request and
//! no responsive leader campaigns. The leader broadcasts its whole log to
//! every writer and commits once a majority holds an entry of its term.
//! Only the leader creates log entries, so every converged write carries the
//! leader's id.

use super::{majority, request_op, MechanismKind, MechanismParams};
use crate::model::{
    ArbiterKind, Metadata, OpKind, PassTrace, Quorum, Register, RequestId, Rtt, Stage, Tick, Value, WriteOp, WriterId,
};
use crate::runner::{Io, Mechanism};
use crate::simnet::{ClientRequest, SimConfig};
use std::collections::{BTreeMap, BTreeSet};

pub type Term = u64;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub term: Term,
    pub op: WriteOp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RaftMsg {
    RequestVote { term: Term, last_term: Term, last_len: usize },
    Vote { term: Term, granted: bool },
    Append { term: Term, entries: Vec<Entry>, commit_len: usize },
    AppendReply { term: Term, ok: bool, match_len: usize },
    Forward { req: ClientRequest },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

const RETRY: u64 = 0;
const ELECTION: u64 = 1;
const RESEND: u64 = 2;

#[derive(Clone, Debug)]
struct Node {
    // Stable storage.
    term: Term,
    voted_for: Option<WriterId>,
    log: Vec<Entry>,
    /// Term of the leader whose log this node last adopted.
    log_source: Term,
    register: Register,
    next_seq: u64,
    pending: BTreeMap<RequestId, ClientRequest>,
    // Volatile.
    role: Role,
    leader: Option<WriterId>,
    votes: BTreeSet<WriterId>,
    match_len: Vec<usize>,
    commit_len: usize,
    heard: bool,
    timer_gen: [u64; 3],
}

impl Node {
    fn last_term(&self) -> Term {
        self.log.last().map_or(0, |e| e.term)
    }

    fn has_origin(&self, id: RequestId) -> bool {
        self.log.iter().any(|e| e.op.origin == Some(id))
    }
}

pub struct Raft {
    n: usize,
    timeout: Tick,
    nodes: Vec<Node>,
}

/// Vote decision for a candidate with log `(last_term, last_len)`.
pub fn grants_vote(
    my_term: Term,
    voted_for: Option<WriterId>,
    my_log: (Term, usize),
    candidate: WriterId,
    term: Term,
    cand_log: (Term, usize),
) -> bool {
    term == my_term && voted_for.is_none_or(|v| v == candidate) && cand_log >= my_log
}

/// Whether a follower at `my_term` accepts an append from `term`.
pub fn accepts_append(my_term: Term, term: Term) -> bool {
    term >= my_term
}

impl Raft {
    pub fn new(n: usize, params: &MechanismParams, config: &SimConfig) -> Self {
        let nodes = (0..n)
            .map(|i| Node {
                term: 0,
                voted_for: None,
                log: Vec::new(),
                log_source: 0,
                register: Register::new(i, MechanismKind::Raft.default_projection()),
                next_seq: 0,
                pending: BTreeMap::new(),
                role: Role::Follower,
                leader: None,
                votes: BTreeSet::new(),
                match_len: vec![0; n],
                commit_len: 0,
                heard: false,
                timer_gen: [0; 3],
            })
            .collect();
        Self { n, timeout: params.timeout(config), nodes }
    }

    pub fn role(&self, w: WriterId) -> Role {
        self.nodes[w].role
    }

    pub fn term(&self, w: WriterId) -> Term {
        self.nodes[w].term
    }

    fn arm(&mut self, io: &mut Io<'_, RaftMsg>, kind: u64, delay: Tick) {
        let g = &mut self.nodes[io.node].timer_gen[kind as usize];
        *g += 1;
        io.set_timer(delay, *g << 2 | kind);
    }

    fn observe_term(&mut self, me: WriterId, term: Term) {
        let node = &mut self.nodes[me];
        if term > node.term {
            node.term = term;
            node.voted_for = None;
            node.role = Role::Follower;
            node.leader = None;
        }
    }

    fn others(&self, me: WriterId) -> impl Iterator<Item = WriterId> {
        (0..self.n).filter(move |&w| w != me)
    }

    fn start_election(&mut self, io: &mut Io<'_, RaftMsg>) {
        let me = io.node;
        let node = &mut self.nodes[me];
        node.term += 1;
        node.voted_for = Some(me);
        node.role = Role::Candidate;
        node.leader = None;
        node.votes = BTreeSet::from([me]);
        let msg = RaftMsg::RequestVote { term: node.term, last_term: node.last_term(), last_len: node.log.len() };
        io.send_to(self.others(me), msg);
        let delay = io.backoff(self.timeout);
        self.arm(io, ELECTION, delay);
        self.tally(io);
    }

    fn tally(&mut self, io: &mut Io<'_, RaftMsg>) {
        let node = &self.nodes[io.node];
        if node.role == Role::Candidate && node.votes.len() >= majority(self.n) {
            self.become_leader(io);
        }
    }

    fn become_leader(&mut self, io: &mut Io<'_, RaftMsg>) {
        let me = io.node;
        let n = self.n;
        let node = &mut self.nodes[me];
        node.role = Role::Leader;
        node.leader = Some(me);
        let marker = WriteOp::new(me, node.next_seq, 0, Value::Null).with_meta(Metadata::with_ballot(node.term));
        node.next_seq += 1;
        node.log.push(Entry { term: node.term, op: marker.clone() });
        io.pass(
            PassTrace::new("electing", me, ArbiterKind::Static)
                .stage(Stage::Pre, Rtt::ONE)
                .quorum(Quorum::all(n, Stage::Pre))
                .converge(marker),
        );
        let own: Vec<ClientRequest> = node.pending.values().cloned().collect();
        for req in own {
            self.leader_append(me, &req);
        }
        let node = &mut self.nodes[me];
        node.match_len = vec![0; n];
        node.match_len[me] = node.log.len();
        self.replicate(io);
        self.advance_commit(io);
    }

    fn leader_append(&mut self, me: WriterId, req: &ClientRequest) {
        let node = &mut self.nodes[me];
        if node.has_origin(req.id) {
            return;
        }
        let op = request_op(me, node.next_seq, req, Metadata::with_ballot(node.term));
        node.next_seq += 1;
        node.log.push(Entry { term: node.term, op });
        node.match_len[me] = node.log.len();
    }

    fn replicate(&mut self, io: &mut Io<'_, RaftMsg>) {
        let me = io.node;
        let node = &self.nodes[me];
        let msg = RaftMsg::Append { term: node.term, entries: node.log.clone(), commit_len: node.commit_len };
        io.send_to(self.others(me), msg);
        if node.commit_len < node.log.len() {
            let t = self.timeout;
            self.arm(io, RESEND, t);
        }
    }

    fn apply(&mut self, io: &mut Io<'_, RaftMsg>) -> Vec<WriteOp> {
        let node = &mut self.nodes[io.node];
        let mut applied = Vec::new();
        while node.register.len() < node.commit_len {
            let op = node.log[node.register.len()].op.clone();
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

    fn advance_commit(&mut self, io: &mut Io<'_, RaftMsg>) {
        let me = io.node;
        let maj = majority(self.n);
        let node = &mut self.nodes[me];
        let best = (node.commit_len + 1..=node.log.len())
            .rev()
            .find(|&l| node.log[l - 1].term == node.term && node.match_len.iter().filter(|&&m| m >= l).count() >= maj);
        let Some(new_len) = best else { return };
        node.commit_len = new_len;
        let term = node.term;
        for op in self.apply(io) {
            if op.writer_id == me && op.origin.is_some() {
                io.pass(
                    PassTrace::new("elected", me, ArbiterKind::Static)
                        .stage(Stage::Exe, Rtt::ONE)
                        .quorum(Quorum::all(self.n, Stage::Exe))
                        .converge(op),
                );
            }
        }
        debug_assert_eq!(self.nodes[me].term, term);
        self.replicate(io);
    }

    fn forward_pending(&mut self, io: &mut Io<'_, RaftMsg>) {
        let node = &self.nodes[io.node];
        if let Some(l) = node.leader.filter(|&l| l != io.node) {
            let reqs: Vec<_> = node.pending.values().cloned().collect();
            for req in reqs {
                io.send(l, RaftMsg::Forward { req });
            }
        }
    }
}

impl Mechanism for Raft {
    type Msg = RaftMsg;

    fn kind(&self) -> MechanismKind {
        MechanismKind::Raft
    }

    fn n(&self) -> usize {
        self.n
    }

    fn on_client(&mut self, io: &mut Io<'_, RaftMsg>, req: &ClientRequest) {
        let me = io.node;
        self.nodes[me].pending.insert(req.id, req.clone());
        match self.nodes[me].role {
            Role::Leader => {
                self.leader_append(me, req);
                self.replicate(io);
                self.advance_commit(io);
            }
            _ => {
                if let Some(l) = self.nodes[me].leader {
                    io.send(l, RaftMsg::Forward { req: req.clone() });
                } else if self.nodes[me].role == Role::Follower {
                    self.start_election(io);
                }
                self.nodes[me].heard = false;
                let t = self.timeout;
                self.arm(io, RETRY, t);
            }
        }
        debug_assert!(matches!(req.op, OpKind::Read | OpKind::Write(_)));
    }

    fn on_message(&mut self, io: &mut Io<'_, RaftMsg>, src: WriterId, msg: RaftMsg) {
        let me = io.node;
        match msg {
            RaftMsg::RequestVote { term, last_term, last_len } => {
                self.observe_term(me, term);
                let node = &mut self.nodes[me];
                let my_log = (node.last_term(), node.log.len());
                let granted = grants_vote(node.term, node.voted_for, my_log, src, term, (last_term, last_len));
                if granted {
                    node.voted_for = Some(src);
                    node.heard = true;
                }
                let stale = term == node.term && (last_term, last_len) < my_log;
                io.send(src, RaftMsg::Vote { term: node.term, granted });
                if stale && node.role == Role::Follower && node.leader.is_none() {
                    // An up-to-date writer must campaign instead.
                    let delay = io.backoff(self.timeout);
                    self.arm(io, ELECTION, delay);
                }
            }
            RaftMsg::Vote { term, granted } => {
                self.observe_term(me, term);
                let node = &mut self.nodes[me];
                if granted && term == node.term && node.role == Role::Candidate {
                    node.votes.insert(src);
                    self.tally(io);
                }
            }
            RaftMsg::Append { term, entries, commit_len } => {
                let node = &mut self.nodes[me];
                if !accepts_append(node.term, term) {
                    io.send(src, RaftMsg::AppendReply { term: node.term, ok: false, match_len: 0 });
                    return;
                }
                self.observe_term(me, term);
                let node = &mut self.nodes[me];
                node.role = Role::Follower;
                let new_leader = node.leader != Some(src);
                node.leader = Some(src);
                node.heard = true;
                // Within a term the leader's log only grows; a shorter copy is
                // a reordered older message.
                if term > node.log_source || entries.len() > node.log.len() {
                    node.log = entries.clone();
                    node.log_source = term;
                }
                node.commit_len = node.commit_len.max(commit_len.min(entries.len()));
                io.send(src, RaftMsg::AppendReply { term, ok: true, match_len: entries.len() });
                self.apply(io);
                if new_leader {
                    self.forward_pending(io);
                }
            }
            RaftMsg::AppendReply { term, ok, match_len } => {
                self.observe_term(me, term);
                let node = &mut self.nodes[me];
                if ok && node.role == Role::Leader && term == node.term {
                    node.match_len[src] = node.match_len[src].max(match_len);
                    self.advance_commit(io);
                }
            }
            RaftMsg::Forward { req } => {
                if self.nodes[me].role == Role::Leader {
                    let before = self.nodes[me].log.len();
                    self.leader_append(me, &req);
                    if self.nodes[me].log.len() > before {
                        self.replicate(io);
                    }
                }
            }
        }
    }

    fn on_timer(&mut self, io: &mut Io<'_, RaftMsg>, id: u64) {
        let me = io.node;
        let kind = id & 3;
        if self.nodes[me].timer_gen[kind as usize] != id >> 2 {
            return;
        }
        let t = self.timeout;
        match kind {
            RETRY => {
                let node = &mut self.nodes[me];
                if node.pending.is_empty() || node.role == Role::Leader {
                    return;
                }
                let heard = std::mem::take(&mut node.heard);
                if heard && node.leader.is_some() {
                    self.forward_pending(io);
                } else if node.role == Role::Follower && !heard {
                    self.start_election(io);
                }
                let delay = io.backoff(t);
                self.arm(io, RETRY, delay);
            }
            ELECTION => {
                let node = &self.nodes[me];
                if node.role == Role::Candidate || (node.role == Role::Follower && node.leader.is_none()) {
                    self.start_election(io);
                }
            }
            _ => {
                if self.nodes[me].role == Role::Leader {
                    self.replicate(io);
                }
            }
        }
    }

    fn on_crash(&mut self, w: WriterId) {
        let node = &mut self.nodes[w];
        node.role = Role::Follower;
        node.leader = None;
        node.votes.clear();
        node.commit_len = node.register.len();
        node.heard = false;
    }

    fn on_recover(&mut self, io: &mut Io<'_, RaftMsg>) {
        if !self.nodes[io.node].pending.is_empty() {
            let t = self.timeout;
            self.arm(io, RETRY, t);
        }
    }

    fn registers(&self) -> Vec<Register> {
        self.nodes.iter().map(|n| n.register.clone()).collect()
    }
}
