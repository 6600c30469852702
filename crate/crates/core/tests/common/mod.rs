#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use syncframe::model::{EventKind, History, Key, OpKind, OpResult, Projection, RequestId, Value};
use syncframe::rng::SplitMix64;
use syncframe::runner::Workload;

/// Random workload of `ops` requests over `keys` keys issued in `[0, span]`.
pub fn random_workload(rng: &mut SplitMix64, n: usize, ops: usize, keys: u32, span: u64, reads: bool) -> Workload {
    let mut w = Workload::new();
    for i in 0..ops {
        let writer = rng.range_inclusive(0, n as u64 - 1) as usize;
        let key = rng.range_inclusive(0, u64::from(keys) - 1) as u32;
        let tick = rng.range_inclusive(0, span);
        w = if reads && rng.chance(0.35) { w.read(writer, key, tick) } else { w.write(writer, key, 1 + i as i64, tick) };
    }
    w
}

struct Op {
    id: RequestId,
    key: Key,
    write: Option<Value>,
    read: Option<Projection>,
    invoke: usize,
    respond: usize,
}

fn complete_ops(history: &History) -> Vec<Op> {
    let mut invoked: BTreeMap<RequestId, (usize, Key, OpKind)> = BTreeMap::new();
    let mut ops = Vec::new();
    for (i, e) in history.events.iter().enumerate() {
        match &e.kind {
            EventKind::Invoke(c) => {
                invoked.insert(c.id, (i, c.key, c.kind.clone()));
            }
            EventKind::Respond(id, res) => {
                let (invoke, key, kind) = invoked.remove(id).expect("response without invocation");
                let read = match res {
                    OpResult::Read(p) => Some(p.clone()),
                    _ => None,
                };
                let write = match kind {
                    OpKind::Write(v) => Some(v),
                    OpKind::Read => None,
                };
                ops.push(Op { id: *id, key, write, read, invoke, respond: i });
            }
            _ => {}
        }
    }
    assert!(invoked.is_empty(), "oracle handles complete histories only");
    ops
}

/// Independent last-write-wins oracle: tries every permutation that
/// respects real-time order. Returns a witness order if one exists.
pub fn brute_force_linearizable(history: &History) -> Option<Vec<RequestId>> {
    let ops = complete_ops(history);
    assert!(ops.len() <= 9, "brute force limited to 9 ops");
    let mut used = vec![false; ops.len()];
    let mut order = Vec::new();
    let mut state: BTreeMap<Key, Value> = BTreeMap::new();
    fn go(ops: &[Op], used: &mut [bool], order: &mut Vec<usize>, state: &mut BTreeMap<Key, Value>) -> bool {
        if order.len() == ops.len() {
            return true;
        }
        for i in 0..ops.len() {
            if used[i] {
                continue;
            }
            // Every unplaced op that finished before `i` started must go first.
            if (0..ops.len()).any(|j| !used[j] && j != i && ops[j].respond < ops[i].invoke) {
                continue;
            }
            let saved = state.get(&ops[i].key).cloned();
            if let Some(expect) = &ops[i].read {
                let actual = saved.clone().map_or(Projection::Empty, Projection::Value);
                if &actual != expect {
                    continue;
                }
            }
            if let Some(v) = &ops[i].write {
                state.insert(ops[i].key, v.clone());
            }
            used[i] = true;
            order.push(i);
            if go(ops, used, order, state) {
                return true;
            }
            order.pop();
            used[i] = false;
            match saved {
                Some(v) => state.insert(ops[i].key, v),
                None => state.remove(&ops[i].key),
            };
        }
        false
    }
    go(&ops, &mut used, &mut order, &mut state).then(|| order.iter().map(|&i| ops[i].id).collect())
}

/// Appends a completed read of a value nobody wrote.
pub fn inject_phantom_read(history: &History, key: Key) -> History {
    let mut h = history.clone();
    let id = 1_000_000;
    let t = h.events.last().map_or(0, |e| e.time);
    h.push(t, 0, EventKind::Invoke(syncframe::model::ClientOp { id, key, kind: OpKind::Read }));
    h.push(t, 0, EventKind::Respond(id, OpResult::Read(Projection::Value(Value::int(987_654)))));
    h
}

pub fn key_set(history: &History) -> BTreeSet<Key> {
    history
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Invoke(c) => Some(c.key),
            _ => None,
        })
        .collect()
}
