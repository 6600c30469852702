//! Correctness oracles over histories and replica registers.

use crate::model::{
    project_series, EventKind, History, Key, OpId, OpKind, OpResult, Projection, ProjectionKind, Register, RequestId,
    Tick, Value, WriteOp, WriterId,
};
use crate::runner::Workload;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use thiserror::Error;

/// Largest history the exhaustive linearizability search accepts.
pub const MAX_LINEARIZABLE_OPS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub checker: String,
    pub outcome: Outcome,
    pub witness: Option<String>,
    /// Linearization order of request ids, for a passing linearizability check.
    pub order: Option<Vec<RequestId>>,
}

impl Verdict {
    pub fn pass(checker: &str, witness: Option<String>) -> Self {
        Self { checker: checker.to_string(), outcome: Outcome::Pass, witness, order: None }
    }

    pub fn fail(checker: &str, witness: String) -> Self {
        Self { checker: checker.to_string(), outcome: Outcome::Fail, witness: Some(witness), order: None }
    }

    pub fn is_pass(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.is_pass() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}", self.checker)?;
        if let Some(w) = &self.witness {
            write!(f, " {}", w.replace('\n', " "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("history has {0} operations; the exhaustive search is bounded at {MAX_LINEARIZABLE_OPS}")]
    TooLarge(usize),
}

/// A client operation reconstructed from a history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistOp {
    pub id: RequestId,
    pub key: Key,
    pub kind: OpKind,
    pub invoke_at: usize,
    pub respond_at: Option<usize>,
    pub result: Option<OpResult>,
}

impl HistOp {
    fn is_write(&self) -> bool {
        matches!(self.kind, OpKind::Write(_))
    }
}

/// Pairs invocations with responses, by position in the event list.
pub fn client_ops(history: &History) -> Vec<HistOp> {
    let mut ops: BTreeMap<RequestId, HistOp> = BTreeMap::new();
    for (i, e) in history.events.iter().enumerate() {
        match &e.kind {
            EventKind::Invoke(op) => {
                ops.insert(op.id, HistOp { id: op.id, key: op.key, kind: op.kind.clone(), invoke_at: i, respond_at: None, result: None });
            }
            EventKind::Respond(id, result) => {
                if let Some(op) = ops.get_mut(id) {
                    if op.respond_at.is_none() {
                        op.respond_at = Some(i);
                        op.result = Some(result.clone());
                    }
                }
            }
            _ => {}
        }
    }
    ops.into_values().collect()
}

type KeyState = BTreeMap<Key, Vec<Value>>;

fn read_value(projection: ProjectionKind, state: &KeyState, key: Key) -> Projection {
    let writes: Vec<WriteOp> = state
        .get(&key)
        .map(|vals| vals.iter().enumerate().map(|(i, v)| WriteOp::new(0, i as u64, key, v.clone())).collect())
        .unwrap_or_default();
    project_series(projection, &writes)
}

/// Replays `order` sequentially and checks every completed read.
pub fn replay_order(history: &History, projection: ProjectionKind, order: &[RequestId]) -> bool {
    let ops: BTreeMap<RequestId, HistOp> = client_ops(history).into_iter().map(|o| (o.id, o)).collect();
    let mut state = KeyState::new();
    let mut placed: BTreeSet<RequestId> = BTreeSet::new();
    for id in order {
        let Some(op) = ops.get(id) else { return false };
        // Real-time precedence.
        let violates = ops.values().any(|o| !placed.contains(&o.id) && o.id != *id && o.respond_at.is_some_and(|r| r < op.invoke_at) && required(o));
        if violates || !placed.insert(*id) {
            return false;
        }
        match &op.kind {
            OpKind::Write(v) => state.entry(op.key).or_default().push(v.clone()),
            OpKind::Read => {
                if let Some(OpResult::Read(p)) = &op.result {
                    if read_value(projection, &state, op.key) != *p {
                        return false;
                    }
                }
            }
        }
    }
    ops.values().filter(|o| required(o)).all(|o| placed.contains(&o.id))
}

/// Completed operations must be linearized; pending writes may be.
fn required(op: &HistOp) -> bool {
    matches!(op.result, Some(OpResult::Ok) | Some(OpResult::Read(_)))
}

fn never_written(ops: &[HistOp], projection: ProjectionKind) -> Option<String> {
    let written: BTreeSet<(Key, &Value)> = ops
        .iter()
        .filter_map(|o| match &o.kind {
            OpKind::Write(v) => Some((o.key, v)),
            OpKind::Read => None,
        })
        .collect();
    for o in ops {
        let Some(OpResult::Read(p)) = &o.result else { continue };
        let seen: Vec<&Value> = match (projection, p) {
            (ProjectionKind::LastWrite, Projection::Value(v)) => vec![v],
            (ProjectionKind::SetUnion, Projection::Set(s)) => s.iter().collect(),
            (ProjectionKind::LogSequence, Projection::Seq(s)) => s.iter().collect(),
            _ => Vec::new(),
        };
        if let Some(v) = seen.into_iter().find(|v| !written.contains(&(o.key, *v))) {
            return Some(format!("value never written: read req{} on key {} returned {v}", o.id, o.key));
        }
    }
    None
}

/// Exhaustive search for a linearization of the client operations in
/// `history`, memoized on (placed set, register state).
pub fn check_linearizable(history: &History, projection: ProjectionKind) -> Result<Verdict, CheckError> {
    const NAME: &str = "linearizable";
    let all = client_ops(history);
    if all.len() > MAX_LINEARIZABLE_OPS {
        return Err(CheckError::TooLarge(all.len()));
    }
    if let Some(w) = never_written(&all, projection) {
        return Ok(Verdict::fail(NAME, w));
    }
    // Aborted writes and unanswered reads have no effect.
    let ops: Vec<HistOp> = all
        .into_iter()
        .filter(|o| required(o) || (o.is_write() && o.result.is_none()))
        .collect();
    let k = ops.len();
    let must_precede: Vec<u32> = (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| required(&ops[j]) && ops[j].respond_at.is_some_and(|r| r < ops[i].invoke_at))
                .fold(0u32, |m, j| m | 1 << j)
        })
        .collect();
    let required_mask = (0..k).filter(|&i| required(&ops[i])).fold(0u32, |m, i| m | 1 << i);

    struct Search<'a> {
        ops: &'a [HistOp],
        must_precede: &'a [u32],
        required_mask: u32,
        projection: ProjectionKind,
        seen: HashSet<(u32, KeyState)>,
        path: Vec<usize>,
    }
    fn dfs(s: &mut Search<'_>, mask: u32, state: &mut KeyState) -> bool {
        if mask & s.required_mask == s.required_mask {
            return true;
        }
        if !s.seen.insert((mask, state.clone())) {
            return false;
        }
        for i in 0..s.ops.len() {
            if mask & (1 << i) != 0 || s.must_precede[i] & !mask != 0 {
                continue;
            }
            let op = &s.ops[i];
            match &op.kind {
                OpKind::Write(v) => {
                    state.entry(op.key).or_default().push(v.clone());
                    s.path.push(i);
                    if dfs(s, mask | 1 << i, state) {
                        return true;
                    }
                    s.path.pop();
                    let series = state.get_mut(&op.key).expect("just pushed");
                    series.pop();
                    if series.is_empty() {
                        state.remove(&op.key);
                    }
                }
                OpKind::Read => {
                    let Some(OpResult::Read(expected)) = &op.result else { continue };
                    if read_value(s.projection, state, op.key) != *expected {
                        continue;
                    }
                    s.path.push(i);
                    if dfs(s, mask | 1 << i, state) {
                        return true;
                    }
                    s.path.pop();
                }
            }
        }
        false
    }
    let mut search = Search { ops: &ops, must_precede: &must_precede, required_mask, projection, seen: HashSet::new(), path: Vec::new() };
    if dfs(&mut search, 0, &mut KeyState::new()) {
        let order: Vec<RequestId> = search.path.iter().map(|&i| ops[i].id).collect();
        let shown: Vec<String> = order.iter().map(|id| format!("req{id}")).collect();
        let mut v = Verdict::pass(NAME, Some(format!("order {}", shown.join(","))));
        v.order = Some(order);
        Ok(v)
    } else {
        Ok(Verdict::fail(NAME, format!("no linearization of {k} operations")))
    }
}

/// Replicas with equal delivered sets must project equally.
pub fn check_sec(replicas: &[Register], delivered: &[BTreeSet<OpId>]) -> Verdict {
    const NAME: &str = "sec";
    let mut compared = 0;
    let mut pending = 0;
    for a in 0..replicas.len().min(delivered.len()) {
        for b in a + 1..replicas.len().min(delivered.len()) {
            if delivered[a] != delivered[b] {
                pending += 1;
                continue;
            }
            compared += 1;
            let (pa, pb) = (replicas[a].project(), replicas[b].project());
            if pa != pb {
                return Verdict::fail(NAME, format!("replicas {a} and {b} delivered the same ops but project {pa} vs {pb}"));
            }
        }
    }
    let note = if pending > 0 { format!("{compared} pairs equal, {pending} pending delivery") } else { format!("{compared} pairs equal") };
    Verdict::pass(NAME, Some(note))
}

/// Fails iff two live replicas hold incompatible committed series for some
/// key (neither a prefix of the other).
pub fn detect_split_brain(registers: &[Register], live: &BTreeSet<WriterId>) -> Verdict {
    const NAME: &str = "split-brain";
    let regs: Vec<&Register> = registers.iter().filter(|r| live.contains(&r.replica_id)).collect();
    let keys: BTreeSet<Key> = regs.iter().flat_map(|r| r.keys()).collect();
    for key in keys {
        let series: Vec<Vec<OpId>> = regs.iter().map(|r| r.key_series(key)).collect();
        for a in 0..regs.len() {
            for b in a + 1..regs.len() {
                let common = series[a].len().min(series[b].len());
                if series[a][..common] != series[b][..common] {
                    return Verdict::fail(
                        NAME,
                        format!(
                            "key {key}: replica {} projects {} but replica {} projects {}",
                            regs[a].replica_id,
                            regs[a].project_key(key),
                            regs[b].replica_id,
                            regs[b].project_key(key)
                        ),
                    );
                }
            }
        }
    }
    Verdict::pass(NAME, None)
}

/// Live replicas hold identical series for every key.
pub fn check_agreement(registers: &[Register], live: &BTreeSet<WriterId>) -> Verdict {
    const NAME: &str = "agreement";
    let regs: Vec<&Register> = registers.iter().filter(|r| live.contains(&r.replica_id)).collect();
    let keys: BTreeSet<Key> = regs.iter().flat_map(|r| r.keys()).collect();
    for key in keys {
        if let Some(w) = regs.windows(2).find(|w| w[0].key_series(key) != w[1].key_series(key)) {
            return Verdict::fail(
                NAME,
                format!("key {key}: replica {} has {} entries, replica {} has {}", w[0].replica_id, w[0].key_series(key).len(), w[1].replica_id, w[1].key_series(key).len()),
            );
        }
    }
    Verdict::pass(NAME, None)
}

/// Every request issued at a writer that is up at the end has an answer by
/// `horizon`.
pub fn detect_progress(history: &History, workload: &Workload, horizon: Tick) -> Verdict {
    const NAME: &str = "progress";
    let crashed = history.crashed_at_end();
    let answered: BTreeSet<RequestId> = history
        .events
        .iter()
        .filter(|e| e.time <= horizon)
        .filter_map(|e| match &e.kind {
            EventKind::Respond(id, _) => Some(*id),
            _ => None,
        })
        .collect();
    let stuck: Vec<String> = workload
        .requests
        .iter()
        .filter(|r| !crashed.contains(&r.writer) && !answered.contains(&r.id))
        .map(|r| format!("req{}@w{}", r.id, r.writer))
        .collect();
    if stuck.is_empty() {
        Verdict::pass(NAME, None)
    } else {
        Verdict::fail(NAME, format!("stuck {}", stuck.join(",")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClientOp, EventKind};

    fn invoke(h: &mut History, t: Tick, id: RequestId, key: Key, kind: OpKind) {
        h.push(t, 0, EventKind::Invoke(ClientOp { id, key, kind }));
    }

    fn respond(h: &mut History, t: Tick, id: RequestId, r: OpResult) {
        h.push(t, 0, EventKind::Respond(id, r));
    }

    fn read(v: i64) -> OpResult {
        OpResult::Read(Projection::Value(Value::int(v)))
    }

    #[test]
    fn sequential_write_then_read_passes() {
        let mut h = History::default();
        invoke(&mut h, 0, 0, 0, OpKind::Write(Value::int(5)));
        respond(&mut h, 1, 0, OpResult::Ok);
        invoke(&mut h, 2, 1, 0, OpKind::Read);
        respond(&mut h, 3, 1, read(5));
        let v = check_linearizable(&h, ProjectionKind::LastWrite).unwrap();
        assert!(v.is_pass());
        assert!(replay_order(&h, ProjectionKind::LastWrite, v.order.as_ref().unwrap()));
    }

    #[test]
    fn read_of_unwritten_value_fails() {
        let mut h = History::default();
        invoke(&mut h, 0, 0, 0, OpKind::Read);
        respond(&mut h, 1, 0, read(9));
        let v = check_linearizable(&h, ProjectionKind::LastWrite).unwrap();
        assert!(!v.is_pass());
        assert!(v.witness.unwrap().contains("value never written"));
    }

    #[test]
    fn reads_going_backwards_fail() {
        let mut h = History::default();
        invoke(&mut h, 0, 0, 0, OpKind::Write(Value::int(1)));
        invoke(&mut h, 0, 1, 0, OpKind::Write(Value::int(2)));
        respond(&mut h, 1, 0, OpResult::Ok);
        respond(&mut h, 1, 1, OpResult::Ok);
        invoke(&mut h, 2, 2, 0, OpKind::Read);
        respond(&mut h, 3, 2, read(2));
        invoke(&mut h, 4, 3, 0, OpKind::Read);
        respond(&mut h, 5, 3, read(1));
        assert!(!check_linearizable(&h, ProjectionKind::LastWrite).unwrap().is_pass());
    }

    #[test]
    fn too_large_history_is_rejected() {
        let mut h = History::default();
        for i in 0..13 {
            invoke(&mut h, i, i, 0, OpKind::Write(Value::int(i as i64)));
        }
        assert_eq!(check_linearizable(&h, ProjectionKind::LastWrite), Err(CheckError::TooLarge(13)));
    }

    #[test]
    fn single_replica_has_no_split_brain() {
        let r = Register::new(0, ProjectionKind::LastWrite);
        assert!(detect_split_brain(&[r], &BTreeSet::from([0])).is_pass());
    }

    #[test]
    fn divergent_registers_are_split_brain() {
        let mut a = Register::new(0, ProjectionKind::LastWrite);
        let mut b = Register::new(1, ProjectionKind::LastWrite);
        a.append_committed(WriteOp::new(0, 0, 0, Value::int(1))).unwrap();
        b.append_committed(WriteOp::new(2, 0, 0, Value::int(2))).unwrap();
        let v = detect_split_brain(&[a, b], &BTreeSet::from([0, 1]));
        assert!(!v.is_pass());
        assert!(v.to_string().starts_with("FAIL split-brain"));
    }

    #[test]
    fn empty_workload_makes_progress() {
        assert!(detect_progress(&History::default(), &Workload::new(), 0).is_pass());
    }

    #[test]
    fn sec_skips_unequal_delivery() {
        let mut a = Register::new(0, ProjectionKind::Sum);
        let b = Register::new(1, ProjectionKind::Sum);
        a.append_committed(WriteOp::new(0, 0, 0, Value::int(3))).unwrap();
        let v = check_sec(&[a.clone(), b], &[BTreeSet::from([OpId::new(0, 0)]), BTreeSet::new()]);
        assert!(v.is_pass());
        assert!(v.witness.unwrap().contains("pending delivery"));
    }
}
