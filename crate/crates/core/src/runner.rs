//! Drives a [`Mechanism`] over a [`Network`] until quiescence and collects the
//! history, pass traces and trace digest.

use crate::mechanisms::MechanismKind;
use crate::model::{
    ClientOp, EventKind, History, Key, OpId, OpKind, OpResult, PassTrace, Register, RequestId, Tick, Value, WriteOp,
    WriterId,
};
use crate::rng::SplitMix64;
use crate::simnet::{ClientRequest, Network, SimConfig, SimError, SimEvent, StepOutcome, TraceRecord};
use std::collections::BTreeSet;
use std::fmt;

/// Something a node reports to the harness while handling an event.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Commit(WriteOp),
    Respond(RequestId, OpResult),
    Pass(PassTrace),
    /// An internal safety invariant broke (e.g. a write committed twice).
    Violation(String),
}

/// Per-event handle given to a node: outgoing messages, timers, randomness
/// and observations.
pub struct Io<'a, M> {
    pub node: WriterId,
    pub now: Tick,
    pub n: usize,
    rng: &'a mut SplitMix64,
    sends: Vec<(WriterId, M)>,
    timers: Vec<(Tick, u64)>,
    observations: Vec<Observation>,
}

impl<'a, M: Clone> Io<'a, M> {
    pub fn new(node: WriterId, now: Tick, n: usize, rng: &'a mut SplitMix64) -> Self {
        Self { node, now, n, rng, sends: Vec::new(), timers: Vec::new(), observations: Vec::new() }
    }

    pub fn send(&mut self, dst: WriterId, msg: M) {
        self.sends.push((dst, msg));
    }

    /// Sends to every writer, the sender included.
    pub fn broadcast(&mut self, msg: M) {
        for dst in 0..self.n {
            self.sends.push((dst, msg.clone()));
        }
    }

    pub fn send_to<I: IntoIterator<Item = WriterId>>(&mut self, dsts: I, msg: M) {
        for dst in dsts {
            self.sends.push((dst, msg.clone()));
        }
    }

    pub fn set_timer(&mut self, delay: Tick, id: u64) {
        self.timers.push((delay, id));
    }

    /// Seeded randomized backoff in `[base, 2 * base]`.
    pub fn backoff(&mut self, base: Tick) -> Tick {
        self.rng.range_inclusive(base, 2 * base)
    }

    pub fn commit(&mut self, op: WriteOp) {
        self.observations.push(Observation::Commit(op));
    }

    pub fn respond(&mut self, request: RequestId, result: OpResult) {
        self.observations.push(Observation::Respond(request, result));
    }

    pub fn pass(&mut self, trace: PassTrace) {
        self.observations.push(Observation::Pass(trace));
    }

    pub fn violation(&mut self, what: String) {
        self.observations.push(Observation::Violation(what));
    }

    pub fn sent(&self) -> &[(WriterId, M)] {
        &self.sends
    }

    pub fn timers(&self) -> &[(Tick, u64)] {
        &self.timers
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn into_parts(self) -> (Vec<(WriterId, M)>, Vec<(Tick, u64)>, Vec<Observation>) {
        (self.sends, self.timers, self.observations)
    }
}

/// A synchronization mechanism: `n` node state machines driven by the
/// simulator. `io.node` names the node handling the event.
pub trait Mechanism {
    type Msg: Clone + fmt::Debug;

    fn kind(&self) -> MechanismKind;
    fn n(&self) -> usize;
    fn on_client(&mut self, io: &mut Io<'_, Self::Msg>, req: &ClientRequest);
    fn on_message(&mut self, io: &mut Io<'_, Self::Msg>, src: WriterId, msg: Self::Msg);
    fn on_timer(&mut self, io: &mut Io<'_, Self::Msg>, id: u64);
    /// Volatile state of `node` is lost; registers and other stable state stay.
    fn on_crash(&mut self, node: WriterId);
    fn on_recover(&mut self, io: &mut Io<'_, Self::Msg>);
    fn registers(&self) -> Vec<Register>;

    /// Ids of the operations each replica has incorporated, when the
    /// mechanism tracks delivery explicitly (CRDTs).
    fn delivered(&self) -> Option<Vec<BTreeSet<OpId>>> {
        None
    }
}

/// Ordered client requests; ids follow insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Workload {
    pub requests: Vec<ClientRequest>,
}

impl Workload {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(mut self, writer: WriterId, key: Key, op: OpKind, issue_tick: Tick) -> Self {
        let id = self.requests.len() as RequestId;
        self.requests.push(ClientRequest { id, writer, key, op, issue_tick });
        self
    }

    pub fn write(self, writer: WriterId, key: Key, value: i64, issue_tick: Tick) -> Self {
        self.push(writer, key, OpKind::Write(Value::int(value)), issue_tick)
    }

    pub fn read(self, writer: WriterId, key: Key, issue_tick: Tick) -> Self {
        self.push(writer, key, OpKind::Read, issue_tick)
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn issue_span(&self) -> Tick {
        self.requests.iter().map(|r| r.issue_tick).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub history: History,
    pub passes: Vec<PassTrace>,
    pub records: Vec<TraceRecord>,
    pub digest: u64,
    pub registers: Vec<Register>,
    pub live: BTreeSet<WriterId>,
    pub violations: Vec<String>,
    pub delivered: Option<Vec<BTreeSet<OpId>>>,
    pub end_tick: Tick,
}

impl RunOutput {
    pub fn trace_lines(&self) -> Vec<String> {
        self.records.iter().map(ToString::to_string).collect()
    }
}

/// The run stopped at `max_ticks`; `partial` holds everything up to then.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub error: SimError,
    pub partial: Option<Box<RunOutput>>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for RunFailure {}

fn pass_summary(p: &PassTrace) -> String {
    let path: Vec<String> = p.path.iter().map(ToString::to_string).collect();
    let rtts: Vec<String> = p.rtts_per_stage.iter().map(|(s, r)| format!("{s}={r}")).collect();
    let quorums: Vec<String> = p.quorums.iter().map(|q| format!("{}:{}", q.stage, q.size())).collect();
    let converged: Vec<String> = p.converged.iter().map(|w| w.id().to_string()).collect();
    format!(
        "#{} case={} by={} path={} rtt={} quorums={} w={}",
        p.pass_index,
        p.case,
        p.coordinator,
        path.join(">"),
        rtts.join(","),
        quorums.join(","),
        converged.join(",")
    )
}

struct Harness<'m, M: Mechanism> {
    mech: &'m mut M,
    net: Network<M::Msg>,
    history: History,
    passes: Vec<PassTrace>,
    violations: Vec<String>,
    deferred: Vec<ClientRequest>,
}

impl<M: Mechanism> Harness<'_, M> {
    fn flush(&mut self, node: WriterId, parts: (Vec<(WriterId, M::Msg)>, Vec<(Tick, u64)>, Vec<Observation>)) {
        let (sends, timers, observations) = parts;
        let now = self.net.now();
        for obs in observations {
            match obs {
                Observation::Commit(op) => {
                    self.net.record("commit", Some(node), None, format!("{} {}={}", op.id(), op.key, op.value));
                    self.history.push(now, node, EventKind::Commit(op));
                }
                Observation::Respond(id, result) => {
                    self.net.record("respond", Some(node), None, format!("req{id} {result:?}"));
                    self.history.push(now, node, EventKind::Respond(id, result));
                }
                Observation::Pass(mut p) => {
                    p.pass_index = self.passes.len() as u64;
                    self.net.record("pass", Some(node), None, pass_summary(&p));
                    self.passes.push(p);
                }
                Observation::Violation(v) => {
                    self.net.record("violation", Some(node), None, v.clone());
                    self.violations.push(v);
                }
            }
        }
        for (dst, msg) in sends {
            // A down sender is recorded by the network; nothing else to do.
            let _ = self.net.send(node, dst, msg);
        }
        for (delay, id) in timers {
            self.net.set_timer(node, delay, id);
        }
    }

    fn client(&mut self, req: ClientRequest) {
        let node = req.writer;
        if !self.net.is_live(node) {
            self.net.record("defer", None, Some(node), format!("req{}", req.id));
            self.deferred.push(req);
            return;
        }
        let (now, n) = (self.net.now(), self.net.n());
        let mut io = Io::new(node, now, n, self.net.rng());
        self.mech.on_client(&mut io, &req);
        let parts = io.into_parts();
        self.flush(node, parts);
    }

    fn output(self) -> RunOutput {
        let registers = self.mech.registers();
        let delivered = self.mech.delivered();
        let live = self.net.live_set();
        let end_tick = self.net.now();
        let records = self.net.into_records();
        let digest = crate::simnet::trace_digest(records.iter().map(ToString::to_string));
        RunOutput {
            history: self.history,
            passes: self.passes,
            digest,
            records,
            registers,
            live,
            violations: self.violations,
            delivered,
            end_tick,
        }
    }
}

/// Runs `workload` until no event is pending or `max_ticks` is reached.
pub fn run_until_quiescent<M: Mechanism>(
    config: &SimConfig,
    mech: &mut M,
    workload: &Workload,
) -> Result<RunOutput, RunFailure> {
    let net = Network::new(config.clone()).map_err(|error| RunFailure { error, partial: None })?;
    let mut h = Harness { mech, net, history: History::default(), passes: Vec::new(), violations: Vec::new(), deferred: Vec::new() };
    let name = h.mech.kind().name();
    h.net.record("start", None, None, format!("{name} n={}", config.n));
    for req in &workload.requests {
        h.net.schedule_client(req.clone());
    }
    loop {
        let batch = match h.net.step() {
            Ok(StepOutcome::Quiescent) => break,
            Ok(StepOutcome::Batch(b)) => b,
            Err(error) => {
                return Err(RunFailure { error, partial: Some(Box::new(h.output())) });
            }
        };
        let now = batch.tick;
        for fault in &batch.faults {
            match fault {
                crate::simnet::FaultAction::Crash(w) => {
                    h.mech.on_crash(*w);
                    h.history.push(now, *w, EventKind::Crash);
                }
                crate::simnet::FaultAction::Recover(w) => {
                    h.history.push(now, *w, EventKind::Recover);
                    let mut io = Io::new(*w, now, config.n, h.net.rng());
                    h.mech.on_recover(&mut io);
                    let parts = io.into_parts();
                    h.flush(*w, parts);
                    let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut h.deferred).into_iter().partition(|r| r.writer == *w);
                    h.deferred = rest;
                    for req in ready {
                        h.client(req);
                    }
                }
                _ => {}
            }
        }
        for event in batch.events {
            match event {
                SimEvent::Client(req) => {
                    h.net.record("invoke", None, Some(req.writer), format!("req{} key={} {:?}", req.id, req.key, req.op));
                    h.history.push(now, req.writer, EventKind::Invoke(ClientOp { id: req.id, key: req.key, kind: req.op.clone() }));
                    h.client(req);
                }
                SimEvent::Deliver(env) => {
                    let mut io = Io::new(env.dst, now, config.n, h.net.rng());
                    h.mech.on_message(&mut io, env.src, env.payload);
                    let parts = io.into_parts();
                    h.flush(env.dst, parts);
                }
                SimEvent::Timer { node, id } => {
                    let mut io = Io::new(node, now, config.n, h.net.rng());
                    h.mech.on_timer(&mut io, id);
                    let parts = io.into_parts();
                    h.flush(node, parts);
                }
            }
        }
    }
    Ok(h.output())
}
