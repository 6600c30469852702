//! Deterministic discrete-event network for `n` writer processes.
//!
//! The event loop is single threaded. Every random choice (drop, delay,
//! backoff) is drawn from one [`SplitMix64`] in event order, and events due at
//! the same tick are ordered by a fixed key, so a [`SimConfig`] plus a
//! workload fully determines the trace.
//!
//! Ordering inside one tick: fault actions first, then client requests (by
//! writer, request id), then deliveries (by src, dst, per-sender sequence),
//! then timers (by node, arming order).

use crate::model::{Key, OpKind, RequestId, Tick, WriterId};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation exceeded max_ticks at tick {tick}")]
    Timeout { tick: Tick },
    #[error("writer {0} is down and cannot send")]
    SenderDown(WriterId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid fault plan: {0}")]
    InvalidFaultPlan(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultAction {
    Crash(WriterId),
    Recover(WriterId),
    Partition(Vec<BTreeSet<WriterId>>),
    Heal,
}

impl fmt::Display for FaultAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultAction::Crash(w) => write!(f, "crash {w}"),
            FaultAction::Recover(w) => write!(f, "recover {w}"),
            FaultAction::Partition(groups) => {
                let parts: Vec<String> = groups
                    .iter()
                    .map(|g| g.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
                    .collect();
                write!(f, "partition {}", parts.join("|"))
            }
            FaultAction::Heal => write!(f, "heal"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub tick: Tick,
    pub action: FaultAction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub events: Vec<FaultEvent>,
}

impl FaultPlan {
    pub fn new(mut events: Vec<FaultEvent>) -> Self {
        events.sort_by_key(|e| e.tick);
        Self { events }
    }

    pub fn crash(mut self, tick: Tick, writer: WriterId) -> Self {
        self.events.push(FaultEvent { tick, action: FaultAction::Crash(writer) });
        self.events.sort_by_key(|e| e.tick);
        self
    }

    pub fn recover(mut self, tick: Tick, writer: WriterId) -> Self {
        self.events.push(FaultEvent { tick, action: FaultAction::Recover(writer) });
        self.events.sort_by_key(|e| e.tick);
        self
    }

    pub fn partition(mut self, tick: Tick, groups: Vec<BTreeSet<WriterId>>) -> Self {
        self.events.push(FaultEvent { tick, action: FaultAction::Partition(groups) });
        self.events.sort_by_key(|e| e.tick);
        self
    }

    pub fn heal(mut self, tick: Tick) -> Self {
        self.events.push(FaultEvent { tick, action: FaultAction::Heal });
        self.events.sort_by_key(|e| e.tick);
        self
    }

    /// Replays the plan against a liveness vector and rejects impossible
    /// transitions.
    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        let mut live = vec![true; n];
        let mut last = 0;
        for e in &self.events {
            if e.tick < last {
                return Err(SimError::InvalidFaultPlan(format!("events out of order at tick {}", e.tick)));
            }
            last = e.tick;
            match &e.action {
                FaultAction::Crash(w) | FaultAction::Recover(w) if *w >= n => {
                    return Err(SimError::InvalidFaultPlan(format!("writer {w} outside [0, {n})")));
                }
                FaultAction::Crash(w) => {
                    if !live[*w] {
                        return Err(SimError::InvalidFaultPlan(format!("crash of crashed writer {w} at tick {}", e.tick)));
                    }
                    live[*w] = false;
                }
                FaultAction::Recover(w) => {
                    if live[*w] {
                        return Err(SimError::InvalidFaultPlan(format!("recover of live writer {w} at tick {}", e.tick)));
                    }
                    live[*w] = true;
                }
                FaultAction::Partition(groups) => {
                    let mut seen = BTreeSet::new();
                    for g in groups {
                        for &w in g {
                            if w >= n || !seen.insert(w) {
                                return Err(SimError::InvalidFaultPlan(format!(
                                    "partition groups must be disjoint subsets of [0, {n}); offending writer {w}"
                                )));
                            }
                        }
                    }
                    if seen.len() != n {
                        return Err(SimError::InvalidFaultPlan("partition groups must cover every writer".into()));
                    }
                }
                FaultAction::Heal => {}
            }
        }
        Ok(())
    }

    /// Writers that are crashed after every event has applied.
    pub fn crashed_at_end(&self, n: usize) -> BTreeSet<WriterId> {
        let mut down = BTreeSet::new();
        for e in &self.events {
            match e.action {
                FaultAction::Crash(w) if w < n => {
                    down.insert(w);
                }
                FaultAction::Recover(w) => {
                    down.remove(&w);
                }
                _ => {}
            }
        }
        down
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    pub min_delay: Tick,
    pub max_delay: Tick,
    pub drop_prob: f64,
    #[serde(default)]
    pub fault_plan: FaultPlan,
    pub max_ticks: Tick,
}

impl SimConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, min_delay: 1, max_delay: 1, drop_prob: 0.0, fault_plan: FaultPlan::default(), max_ticks: 100_000 }
    }

    pub fn with_delays(mut self, min_delay: Tick, max_delay: Tick) -> Self {
        self.min_delay = min_delay;
        self.max_delay = max_delay;
        self
    }

    pub fn with_faults(mut self, plan: FaultPlan) -> Self {
        self.fault_plan = plan;
        self
    }

    pub fn with_drop_prob(mut self, p: f64) -> Self {
        self.drop_prob = p;
        self
    }

    pub fn with_max_ticks(mut self, max_ticks: Tick) -> Self {
        self.max_ticks = max_ticks;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::InvalidConfig("n must be at least 1".into()));
        }
        if self.min_delay == 0 || self.min_delay > self.max_delay {
            return Err(SimError::InvalidConfig(format!(
                "delays must satisfy 1 <= min_delay <= max_delay (got {}..{})",
                self.min_delay, self.max_delay
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(SimError::InvalidConfig(format!("drop_prob {} outside [0, 1]", self.drop_prob)));
        }
        if self.max_ticks == 0 {
            return Err(SimError::InvalidConfig("max_ticks must be positive".into()));
        }
        self.fault_plan.validate(self.n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope<P> {
    pub src: WriterId,
    pub dst: WriterId,
    pub payload: P,
    pub send_tick: Tick,
    pub deliver_tick: Tick,
    /// Per-sender sequence number, the last tie-break at equal ticks.
    pub seq: u64,
}

/// A client operation scheduled against one writer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRequest {
    pub id: RequestId,
    pub writer: WriterId,
    pub key: Key,
    pub op: OpKind,
    pub issue_tick: Tick,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimEvent<P> {
    Client(ClientRequest),
    Deliver(Envelope<P>),
    Timer { node: WriterId, id: u64 },
}

/// Everything that happens at one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch<P> {
    pub tick: Tick,
    pub faults: Vec<FaultAction>,
    pub events: Vec<SimEvent<P>>,
}

impl<P> StepBatch<P> {
    pub fn deliveries(&self) -> impl Iterator<Item = &Envelope<P>> {
        self.events.iter().filter_map(|e| match e {
            SimEvent::Deliver(env) => Some(env),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome<P> {
    Batch(StepBatch<P>),
    /// Nothing pending: neither events nor fault actions.
    Quiescent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: Tick,
    pub kind: String,
    pub src: Option<WriterId>,
    pub dst: Option<WriterId>,
    pub summary: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = |w: Option<WriterId>| w.map_or_else(|| "-".to_string(), |w| w.to_string());
        // Summaries never contain the field separator or newlines.
        let summary = self.summary.replace(['|', '\n'], "/");
        write!(f, "{}|{}|{}|{}|{}", self.tick, self.kind, id(self.src), id(self.dst), summary)
    }
}

/// FNV-1a over the newline-terminated trace lines.
pub fn trace_digest<I, S>(lines: I) -> u64
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for line in lines {
        line.as_ref().bytes().for_each(&mut feed);
        feed(b'\n');
    }
    h
}

pub fn format_digest(d: u64) -> String {
    format!("{d:016x}")
}

type EventKey = (Tick, u8, WriterId, WriterId, u64);

const CLASS_CLIENT: u8 = 0;
const CLASS_DELIVER: u8 = 1;
const CLASS_TIMER: u8 = 2;

pub struct Network<P> {
    config: SimConfig,
    rng: SplitMix64,
    now: Tick,
    live: Vec<bool>,
    group_of: Option<Vec<usize>>,
    queue: BTreeMap<EventKey, SimEvent<P>>,
    faults: VecDeque<FaultEvent>,
    send_seq: Vec<u64>,
    timer_seq: u64,
    records: Vec<TraceRecord>,
}

impl<P: Clone + fmt::Debug> Network<P> {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n;
        Ok(Self {
            rng: SplitMix64::new(config.seed),
            faults: config.fault_plan.events.iter().cloned().collect(),
            config,
            now: 0,
            live: vec![true; n],
            group_of: None,
            queue: BTreeMap::new(),
            send_seq: vec![0; n],
            timer_seq: 0,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn is_live(&self, w: WriterId) -> bool {
        self.live[w]
    }

    pub fn live_set(&self) -> BTreeSet<WriterId> {
        (0..self.n()).filter(|&w| self.live[w]).collect()
    }

    pub fn rng(&mut self) -> &mut SplitMix64 {
        &mut self.rng
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    pub fn record(&mut self, kind: &str, src: Option<WriterId>, dst: Option<WriterId>, summary: String) {
        self.records.push(TraceRecord { tick: self.now, kind: kind.to_string(), src, dst, summary });
    }

    fn partitioned(&self, a: WriterId, b: WriterId) -> bool {
        self.group_of.as_ref().is_some_and(|g| g[a] != g[b])
    }

    /// Sends `payload`. Drops and cross-partition sends are recorded and
    /// never delivered.
    pub fn send(&mut self, src: WriterId, dst: WriterId, payload: P) -> Result<(), SimError> {
        if !self.live[src] {
            self.record("send-down", Some(src), Some(dst), format!("{payload:?}"));
            return Err(SimError::SenderDown(src));
        }
        let dropped = self.rng.chance(self.config.drop_prob);
        let delay = self.rng.range_inclusive(self.config.min_delay, self.config.max_delay);
        let seq = self.send_seq[src];
        self.send_seq[src] += 1;
        if dropped {
            self.record("drop", Some(src), Some(dst), format!("{payload:?}"));
            return Ok(());
        }
        if self.partitioned(src, dst) {
            self.record("partition-drop", Some(src), Some(dst), format!("{payload:?}"));
            return Ok(());
        }
        self.record("send", Some(src), Some(dst), format!("{payload:?}"));
        let deliver_tick = self.now + delay;
        let env = Envelope { src, dst, payload, send_tick: self.now, deliver_tick, seq };
        self.queue.insert((deliver_tick, CLASS_DELIVER, src, dst, seq), SimEvent::Deliver(env));
        Ok(())
    }

    /// Arms a timer on `node` that fires `delay` ticks from now (at least 1).
    pub fn set_timer(&mut self, node: WriterId, delay: Tick, id: u64) {
        if !self.live[node] {
            return;
        }
        let seq = self.timer_seq;
        self.timer_seq += 1;
        self.queue.insert((self.now + delay.max(1), CLASS_TIMER, node, 0, seq), SimEvent::Timer { node, id });
    }

    pub fn schedule_client(&mut self, req: ClientRequest) {
        self.queue.insert((req.issue_tick, CLASS_CLIENT, req.writer, 0, req.id), SimEvent::Client(req));
    }

    fn apply_fault(&mut self, action: &FaultAction) {
        match action {
            FaultAction::Crash(w) => {
                self.live[*w] = false;
                let w = *w;
                self.queue.retain(|k, _| !(k.1 == CLASS_TIMER && k.2 == w));
            }
            FaultAction::Recover(w) => self.live[*w] = true,
            FaultAction::Partition(groups) => {
                let mut group_of = vec![0; self.n()];
                for (i, g) in groups.iter().enumerate() {
                    for &w in g {
                        group_of[w] = i;
                    }
                }
                self.group_of = Some(group_of);
            }
            FaultAction::Heal => self.group_of = None,
        }
        self.record("fault", None, None, action.to_string());
    }

    /// Advances to the next tick with pending work, applies the fault actions
    /// due by then, and returns the events of that tick.
    pub fn step(&mut self) -> Result<StepOutcome<P>, SimError> {
        let next_event = self.queue.keys().next().map(|k| k.0);
        let next_fault = self.faults.front().map(|f| f.tick);
        let tick = match (next_event, next_fault) {
            (None, None) => return Ok(StepOutcome::Quiescent),
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
        };
        if tick > self.config.max_ticks {
            return Err(SimError::Timeout { tick: self.config.max_ticks });
        }
        self.now = self.now.max(tick);
        let mut faults = Vec::new();
        while self.faults.front().is_some_and(|f| f.tick <= tick) {
            let f = self.faults.pop_front().expect("checked");
            self.apply_fault(&f.action);
            faults.push(f.action);
        }
        let mut events = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 != tick {
                break;
            }
            match entry.remove() {
                SimEvent::Deliver(env) => {
                    if !self.live[env.dst] {
                        self.record("crash-drop", Some(env.src), Some(env.dst), format!("{:?}", env.payload));
                    } else if self.partitioned(env.src, env.dst) {
                        self.record("partition-drop", Some(env.src), Some(env.dst), format!("{:?}", env.payload));
                    } else {
                        self.record("deliver", Some(env.src), Some(env.dst), format!("{:?}", env.payload));
                        events.push(SimEvent::Deliver(env));
                    }
                }
                ev @ SimEvent::Timer { node, .. } => {
                    if self.live[node] {
                        events.push(ev);
                    }
                }
                ev @ SimEvent::Client(_) => events.push(ev),
            }
        }
        Ok(StepOutcome::Batch(StepBatch { tick, faults, events }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(cfg: SimConfig) -> Network<&'static str> {
        Network::new(cfg).unwrap()
    }

    fn batch(n: &mut Network<&'static str>) -> StepBatch<&'static str> {
        match n.step().unwrap() {
            StepOutcome::Batch(b) => b,
            StepOutcome::Quiescent => panic!("unexpected quiescence"),
        }
    }

    #[test]
    fn fixed_delay_delivery() {
        let mut n = net(SimConfig::new(3, 1));
        n.set_timer(0, 5, 0);
        let b = batch(&mut n);
        assert_eq!(b.tick, 5);
        n.send(0, 1, "m").unwrap();
        let b = batch(&mut n);
        assert_eq!(b.tick, 6);
        assert_eq!(b.deliveries().count(), 1);
    }

    #[test]
    fn drop_all() {
        let mut n = net(SimConfig::new(2, 1).with_drop_prob(1.0));
        n.send(0, 1, "m").unwrap();
        assert_eq!(n.step().unwrap(), StepOutcome::Quiescent);
        assert!(n.records().iter().any(|r| r.kind == "drop"));
    }

    #[test]
    fn partition_blocks() {
        let groups = vec![[0, 1].into_iter().collect(), [2].into_iter().collect()];
        let mut n = net(SimConfig::new(3, 1).with_faults(FaultPlan::default().partition(0, groups)));
        n.step().unwrap();
        n.send(0, 2, "x").unwrap();
        n.send(0, 1, "y").unwrap();
        let b = batch(&mut n);
        let got: Vec<_> = b.deliveries().map(|e| e.dst).collect();
        assert_eq!(got, vec![1]);
    }

    #[test]
    fn equal_tick_tie_break_by_src() {
        let mut n = net(SimConfig::new(4, 1).with_delays(9, 9));
        n.send(2, 3, "from2").unwrap();
        n.send(0, 3, "from0").unwrap();
        let b = batch(&mut n);
        assert_eq!(b.tick, 9);
        let srcs: Vec<_> = b.deliveries().map(|e| e.src).collect();
        assert_eq!(srcs, vec![0, 2]);
    }

    #[test]
    fn faults_apply_before_delivery() {
        let mut n = net(SimConfig::new(4, 1).with_delays(9, 9).with_faults(FaultPlan::default().crash(9, 3)));
        n.send(0, 3, "m").unwrap();
        let b = batch(&mut n);
        assert_eq!(b.faults, vec![FaultAction::Crash(3)]);
        assert_eq!(b.deliveries().count(), 0);
        assert!(n.records().iter().any(|r| r.kind == "crash-drop"));
    }

    #[test]
    fn quiescent_vs_timeout() {
        let mut n = net(SimConfig::new(2, 1).with_max_ticks(10));
        assert_eq!(n.step().unwrap(), StepOutcome::Quiescent);
        n.set_timer(0, 11, 0);
        assert_eq!(n.step(), Err(SimError::Timeout { tick: 10 }));
    }

    #[test]
    fn crashed_sender() {
        let mut n = net(SimConfig::new(2, 1).with_faults(FaultPlan::default().crash(0, 0)));
        n.step().unwrap();
        assert_eq!(n.send(0, 1, "m"), Err(SimError::SenderDown(0)));
    }

    #[test]
    fn fault_plan_validation() {
        assert!(FaultPlan::default().crash(1, 0).crash(2, 0).validate(3).is_err());
        assert!(FaultPlan::default().recover(1, 0).validate(3).is_err());
        assert!(FaultPlan::default().crash(1, 0).recover(2, 0).validate(3).is_ok());
        let overlapping = vec![[0, 1].into_iter().collect(), [1, 2].into_iter().collect()];
        assert!(FaultPlan::default().partition(0, overlapping).validate(3).is_err());
        let partial = vec![[0].into_iter().collect(), [1].into_iter().collect()];
        assert!(FaultPlan::default().partition(0, partial).validate(3).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0, 1).validate().is_err());
        assert!(SimConfig::new(3, 1).with_delays(0, 2).validate().is_err());
        assert!(SimConfig::new(3, 1).with_delays(3, 2).validate().is_err());
        assert!(SimConfig::new(3, 1).with_drop_prob(1.5).validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn delivery_after_send(seed in 0u64..500, min in 1u64..5, extra in 0u64..5) {
            let mut n = net(SimConfig::new(3, seed).with_delays(min, min + extra));
            for i in 0..6 {
                n.send(i % 3, (i + 1) % 3, "m").unwrap();
            }
            while let StepOutcome::Batch(b) = n.step().unwrap() {
                for env in b.deliveries() {
                    proptest::prop_assert!(env.deliver_tick > env.send_tick);
                    proptest::prop_assert!(env.deliver_tick >= env.send_tick + min);
                    proptest::prop_assert!(env.deliver_tick <= env.send_tick + min + extra);
                }
            }
        }
    }
}
