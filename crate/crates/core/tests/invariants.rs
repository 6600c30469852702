mod common;

use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use syncframe::analyzer::campaign::partition_scenario;
use syncframe::checkers::{check_agreement, check_linearizable, check_sec, detect_split_brain};
use syncframe::mechanisms::{self, MechanismKind, MechanismParams};
use syncframe::model::{OpId, ProjectionKind, Rtt, Stage, WriterId};
use syncframe::rng::SplitMix64;
use syncframe::runner::{RunOutput, Workload};
use syncframe::simnet::{FaultAction, FaultPlan, SimConfig};

const LINEARIZABLE: [MechanismKind; 6] = [
    MechanismKind::Paxos,
    MechanismKind::Raft,
    MechanismKind::Vr,
    MechanismKind::Epaxos,
    MechanismKind::EpaxosPriority,
    MechanismKind::AtomicCas,
];

fn any_kind() -> impl Strategy<Value = MechanismKind> {
    prop::sample::select(vec![
        MechanismKind::Paxos,
        MechanismKind::Raft,
        MechanismKind::Vr,
        MechanismKind::Epaxos,
        MechanismKind::EpaxosPriority,
        MechanismKind::CrdtGcounter,
        MechanismKind::CrdtOrset,
        MechanismKind::AtomicCas,
    ])
}

fn run(kind: MechanismKind, config: &SimConfig, w: &Workload) -> RunOutput {
    mechanisms::run(kind, &MechanismParams::default(), config, w).unwrap_or_else(|f| panic!("{kind}: {}", f.error))
}

fn scenario(n: usize, seed: u64, ops: usize, reads: bool) -> (SimConfig, Workload) {
    let mut rng = SplitMix64::new(seed);
    let w = common::random_workload(&mut rng, n, ops, 2, 40, reads);
    let max = rng.range_inclusive(1, 4);
    (SimConfig::new(n, seed).with_delays(1, max), w)
}

fn expected_paths(kind: MechanismKind, case: &str) -> Vec<Stage> {
    match (kind, case) {
        (MechanismKind::Paxos, _) => vec![Stage::Pre, Stage::Exe],
        (MechanismKind::Raft, "electing") | (MechanismKind::Vr, "changing") => vec![Stage::Pre],
        _ => vec![Stage::Exe],
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn passes_follow_mechanism_paths(kind in any_kind(), n in 3usize..=5, seed in any::<u64>(), ops in 1usize..8) {
        let (config, w) = scenario(n, seed, ops, kind.is_linearizable());
        let out = run(kind, &config, &w);
        let mut seen: BTreeSet<OpId> = BTreeSet::new();
        for p in &out.passes {
            prop_assert!(p.validate().is_ok(), "{:?}", p);
            prop_assert_eq!(&p.path, &expected_paths(kind, &p.case), "{} case {}", kind, p.case);
            if kind.is_linearizable() {
                prop_assert_eq!(p.converged.len(), 1);
            } else {
                prop_assert!(!p.converged.is_empty());
            }
            for w in &p.converged {
                prop_assert!(!p.aborted.contains(w));
                if !kind.is_crdt() {
                    prop_assert!(seen.insert(w.id()), "{} converged twice", w.id());
                }
            }
        }
    }

    #[test]
    fn live_replicas_agree_at_quiescence(k in 0usize..LINEARIZABLE.len(), n in 3usize..=5, seed in any::<u64>(), ops in 1usize..10) {
        let kind = LINEARIZABLE[k];
        let (config, w) = scenario(n, seed, ops, true);
        let out = run(kind, &config, &w);
        prop_assert!(out.violations.is_empty(), "{:?}", out.violations);
        prop_assert!(check_agreement(&out.registers, &out.live).is_pass());
        for key in out.registers.iter().flat_map(|r| r.keys()).collect::<BTreeSet<_>>() {
            let first = out.registers[0].project_key(key);
            prop_assert!(out.registers.iter().all(|r| r.project_key(key) == first), "key {}", key);
        }
    }

    #[test]
    fn small_histories_are_linearizable(k in 0usize..LINEARIZABLE.len(), seed in any::<u64>(), ops in 1usize..=7) {
        let kind = LINEARIZABLE[k];
        let (config, w) = scenario(3, seed, ops, true);
        let out = run(kind, &config, &w);
        let v = check_linearizable(&out.history, ProjectionKind::LastWrite).unwrap();
        prop_assert!(v.is_pass(), "{}: {}", kind, v);
        prop_assert_eq!(common::brute_force_linearizable(&out.history).is_some(), true);
        // Checkers are pure.
        prop_assert_eq!(check_linearizable(&out.history, ProjectionKind::LastWrite).unwrap(), v);
    }

    #[test]
    fn digest_is_a_function_of_inputs(kind in any_kind(), seed in any::<u64>(), ops in 1usize..8) {
        let (config, w) = scenario(3, seed, ops, kind.is_linearizable());
        let a = run(kind, &config, &w);
        let b = run(kind, &config, &w);
        prop_assert_eq!(a.digest, b.digest);
        prop_assert_eq!(a.trace_lines(), b.trace_lines());
    }

    #[test]
    fn faults_silence_writers_and_links(kind in any_kind(), seed in any::<u64>(), ops in 1usize..8) {
        let n = 5;
        let (config, w) = scenario(n, seed, ops, kind.is_linearizable());
        let mut rng = SplitMix64::new(seed ^ 1);
        let victim = rng.range_inclusive(0, n as u64 - 1) as usize;
        let t0 = rng.range_inclusive(0, 30);
        let plan = FaultPlan::default()
            .crash(t0, victim)
            .partition(t0 + 5, vec![[0, 1].into(), [2, 3, 4].into()])
            .heal(t0 + 40)
            .recover(t0 + 60, victim);
        let config = config.with_faults(plan.clone());
        let out = run(kind, &config, &w);

        let state_at = |tick: u64| {
            let mut down = BTreeSet::new();
            let mut groups: Option<Vec<BTreeSet<WriterId>>> = None;
            for e in plan.events.iter().filter(|e| e.tick <= tick) {
                match &e.action {
                    FaultAction::Crash(c) => { down.insert(*c); }
                    FaultAction::Recover(c) => { down.remove(c); }
                    FaultAction::Partition(g) => groups = Some(g.clone()),
                    FaultAction::Heal => groups = None,
                }
            }
            (down, groups)
        };
        let mut sent: BTreeMap<(WriterId, WriterId, String), Vec<u64>> = BTreeMap::new();
        for r in &out.records {
            let (down, groups) = state_at(r.tick);
            match r.kind.as_str() {
                "send" => {
                    let (s, d) = (r.src.unwrap(), r.dst.unwrap());
                    prop_assert!(!down.contains(&s), "send from crashed {} at {}", s, r.tick);
                    sent.entry((s, d, r.summary.clone())).or_default().push(r.tick);
                }
                "deliver" => {
                    let (s, d) = (r.src.unwrap(), r.dst.unwrap());
                    prop_assert!(!down.contains(&d), "delivery to crashed {} at {}", d, r.tick);
                    if let Some(g) = &groups {
                        prop_assert!(g.iter().any(|g| g.contains(&s) && g.contains(&d)), "cross-partition delivery at {}", r.tick);
                    }
                    let sends = sent.get_mut(&(s, d, r.summary.clone())).expect("delivery without send");
                    let i = sends.iter().position(|&t| t < r.tick).expect("delivered no later than sent");
                    sends.remove(i);
                }
                "commit" | "respond" | "pass" => {
                    prop_assert!(!down.contains(&r.src.unwrap()), "{} by crashed writer at {}", r.kind, r.tick);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn leader_epochs_have_one_writer(k in 0usize..2, n in 3usize..=5, seed in any::<u64>(), ops in 1usize..8) {
        let kind = [MechanismKind::Raft, MechanismKind::Vr][k];
        let (config, w) = scenario(n, seed, ops, false);
        let out = run(kind, &config, &w);
        let mut epochs: BTreeMap<u64, BTreeSet<WriterId>> = BTreeMap::new();
        for p in &out.passes {
            for w in p.converged.iter().filter(|w| w.is_value_write()) {
                prop_assert_eq!(w.writer_id, p.coordinator);
                let e = w.meta.ballot.or(w.meta.view).expect("epoch metadata");
                epochs.entry(e).or_default().insert(w.writer_id);
            }
        }
        prop_assert!(epochs.values().all(|s| s.len() == 1), "{:?}", epochs);
    }

    #[test]
    fn priority_epaxos_decides_in_one_round_trip(n in 3usize..=7, seed in any::<u64>(), ops in 1usize..10) {
        let mut rng = SplitMix64::new(seed);
        let w = common::random_workload(&mut rng, n, ops, 1, 10, false);
        let config = SimConfig::new(n, seed).with_delays(1, rng.range_inclusive(1, 3));
        let out = run(MechanismKind::EpaxosPriority, &config, &w);
        prop_assert!(out.passes.iter().all(|p| p.total_rtts() == Rtt::ONE));
        prop_assert_eq!(out.passes.len(), ops);
        let first = out.registers[0].series().to_vec();
        prop_assert!(out.registers.iter().all(|r| r.series() == first.as_slice()));
    }

    #[test]
    fn crdt_converges_through_crash_and_recovery(k in 0usize..2, seed in any::<u64>(), ops in 1usize..12) {
        let kind = [MechanismKind::CrdtGcounter, MechanismKind::CrdtOrset][k];
        let n = 4;
        let (config, w) = scenario(n, seed, ops, false);
        let config = config.with_faults(FaultPlan::default().crash(3, 1).crash(5, 2).recover(30, 1));
        let out = run(kind, &config, &w);
        let delivered = out.delivered.clone().unwrap();
        let v = check_sec(&out.registers, &delivered);
        prop_assert!(v.is_pass(), "{}", v);
        let live: Vec<usize> = out.live.iter().copied().collect();
        prop_assert!(live.windows(2).all(|p| delivered[p[0]] == delivered[p[1]]));
    }
}

#[test]
fn split_brain_implies_non_linearizable() {
    let (config, w) = partition_scenario(4, 3);
    let w = Workload { requests: w.requests }.read(0, 0, 80).read(2, 0, 80);
    let out = run(MechanismKind::BrokenSubMajorityPaxos, &config, &w);
    let everyone: BTreeSet<WriterId> = (0..4).collect();
    assert!(!detect_split_brain(&out.registers, &everyone).is_pass());
    let v = check_linearizable(&out.history, ProjectionKind::LastWrite).unwrap();
    assert!(!v.is_pass(), "{v}");
    assert!(common::brute_force_linearizable(&out.history).is_none());
}

#[test]
fn correct_paxos_stalls_instead_of_splitting() {
    let (config, w) = partition_scenario(4, 3);
    let failure = mechanisms::run(MechanismKind::Paxos, &MechanismParams::default(), &config.with_max_ticks(2_000), &w).unwrap_err();
    let partial = failure.partial.expect("partial output");
    assert!(partial.registers.iter().all(|r| r.is_empty()));
}
