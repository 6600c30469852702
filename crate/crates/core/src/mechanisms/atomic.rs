//! Shared-memory compare-and-swap on a single register.
//!
//! Every writer addresses the same series. An access is modeled as a
//! message to shared memory and back (one round trip); the CAS succeeds iff
//! the series length still equals the length the writer observed.

use super::MechanismKind;
use crate::model::{ArbiterKind, OpKind, OpResult, PassTrace, Quorum, Register, RequestId, Rtt, Stage, WriteOp, WriterId};
use crate::runner::{Io, Mechanism};
use crate::simnet::ClientRequest;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CasError {
    #[error("compare-and-swap failed: series length is {0}")]
    Failed(usize),
}

/// Appends `w` iff `register` holds exactly `expected_len` entries.
pub fn cas(register: &mut Register, expected_len: usize, w: WriteOp) -> Result<(), CasError> {
    if register.len() != expected_len {
        return Err(CasError::Failed(register.len()));
    }
    register.append_committed(w).map_err(|_| CasError::Failed(register.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CasAttempt {
    pub request: RequestId,
    pub expected_len: usize,
    pub op: WriteOp,
}

pub struct AtomicCas {
    n: usize,
    shared: Register,
    next_seq: Vec<u64>,
    /// Requests accepted by each writer and not yet answered.
    pending: Vec<BTreeMap<RequestId, WriteOp>>,
    failures: u64,
}

impl AtomicCas {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            shared: Register::new(0, MechanismKind::AtomicCas.default_projection()),
            next_seq: vec![0; n],
            pending: vec![BTreeMap::new(); n],
            failures: 0,
        }
    }

    /// Failed attempts so far; each one was retried.
    pub fn failures(&self) -> u64 {
        self.failures
    }

    fn attempt(&self, io: &mut Io<'_, CasAttempt>, request: RequestId, op: WriteOp) {
        io.send(io.node, CasAttempt { request, expected_len: self.shared.len(), op });
    }
}

impl Mechanism for AtomicCas {
    type Msg = CasAttempt;

    fn kind(&self) -> MechanismKind {
        MechanismKind::AtomicCas
    }

    fn n(&self) -> usize {
        self.n
    }

    fn on_client(&mut self, io: &mut Io<'_, CasAttempt>, req: &ClientRequest) {
        let me = io.node;
        let value = match &req.op {
            OpKind::Read => {
                io.respond(req.id, OpResult::Read(self.shared.project_key(req.key)));
                return;
            }
            OpKind::Write(v) => v.clone(),
        };
        let op = WriteOp::new(me, self.next_seq[me], req.key, value).with_origin(req.id);
        self.next_seq[me] += 1;
        self.pending[me].insert(req.id, op.clone());
        self.attempt(io, req.id, op);
    }

    fn on_message(&mut self, io: &mut Io<'_, CasAttempt>, _src: WriterId, msg: CasAttempt) {
        match cas(&mut self.shared, msg.expected_len, msg.op.clone()) {
            Ok(()) => {
                self.pending[io.node].remove(&msg.request);
                io.commit(msg.op.clone());
                io.respond(msg.request, OpResult::Ok);
                io.pass(
                    PassTrace::new("-", io.node, ArbiterKind::Static)
                        .stage(Stage::Exe, Rtt::ONE)
                        .quorum(Quorum::all(self.n, Stage::Exe))
                        .converge(msg.op),
                );
            }
            Err(CasError::Failed(_)) => {
                self.failures += 1;
                self.attempt(io, msg.request, msg.op);
            }
        }
    }

    fn on_timer(&mut self, _io: &mut Io<'_, CasAttempt>, _id: u64) {}

    fn on_crash(&mut self, _node: WriterId) {}

    fn on_recover(&mut self, io: &mut Io<'_, CasAttempt>) {
        let pending: Vec<_> = self.pending[io.node].iter().map(|(r, o)| (*r, o.clone())).collect();
        for (request, op) in pending {
            self.attempt(io, request, op);
        }
    }

    fn registers(&self) -> Vec<Register> {
        (0..self.n)
            .map(|i| {
                let mut r = self.shared.clone();
                r.replica_id = i;
                r
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Value;

    fn reg_with(len: usize) -> Register {
        let mut r = Register::new(0, crate::model::ProjectionKind::LastWrite);
        for i in 0..len {
            r.append_committed(WriteOp::new(0, i as u64, 0, Value::int(i as i64))).unwrap();
        }
        r
    }

    #[test]
    fn cas_on_matching_length_appends() {
        let mut r = reg_with(4);
        assert_eq!(cas(&mut r, 4, WriteOp::new(1, 0, 0, Value::int(9))), Ok(()));
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn cas_on_stale_length_fails() {
        let mut r = reg_with(5);
        assert_eq!(cas(&mut r, 4, WriteOp::new(1, 0, 0, Value::int(9))), Err(CasError::Failed(5)));
    }

    #[test]
    fn concurrent_cas_has_one_winner_in_every_order() {
        // Three writers all observed length 0; try every arrival order.
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for p in perms {
            let mut r = reg_with(0);
            let wins = p.iter().filter(|&&w| cas(&mut r, 0, WriteOp::new(w, 0, 0, Value::int(w as i64))).is_ok()).count();
            assert_eq!(wins, 1);
        }
    }
}
