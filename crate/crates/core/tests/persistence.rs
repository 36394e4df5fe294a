mod common;

use common::{random_approval, random_faults, random_plan, rng};
use graph_harness::persistence::{self, PersistError, RecordBody};
use graph_harness::plan::{derive_replan, PlanStructure, PredicateRegistry};
use graph_harness::samples::{bugfix_faults, bugfix_plan};
use graph_harness::{Engine, NodeConfig, NodeId, NodeState, OutputContract, ScriptedExecutor, Wal};
use proptest::prelude::*;

fn golden_on_disk(dir: &std::path::Path, snapshot_every: u64) -> graph_harness::RunResult {
    let wal = Wal::create(dir, "golden").unwrap().snapshot_every(snapshot_every);
    let mut engine = Engine::builder(bugfix_plan(), ScriptedExecutor::new(bugfix_faults())).sink(wal).build().unwrap();
    let status = engine.run().unwrap();
    engine.into_result(status)
}

#[test]
fn golden_log_is_all_version_one() {
    let dir = tempfile::tempdir().unwrap();
    let live = golden_on_disk(dir.path(), 50);
    let records = persistence::read_wal(&persistence::wal_path(dir.path(), "golden")).unwrap();
    assert_eq!(records, live.trace);
    assert!(records.iter().all(|r| r.plan_version == 1 && r.plan_id == "bugfix"));
    assert_eq!(records.iter().filter(|r| matches!(r.body, RecordBody::PlanCommitted { .. })).count(), 1);
    assert_eq!(persistence::replay(dir.path(), "golden", None).unwrap(), live.state);
}

#[test]
fn mid_run_replay_shows_the_fix_wave() {
    let dir = tempfile::tempdir().unwrap();
    let live = golden_on_disk(dir.path(), 50);
    let wave_dispatched = live
        .trace
        .iter()
        .find(|r| matches!(&r.body, RecordBody::Dispatch { node, .. } if node.as_str() == "update_docs"))
        .unwrap()
        .seq;
    let mid = persistence::replay(dir.path(), "golden", Some(wave_dispatched)).unwrap();
    for n in ["fix_A", "fix_B", "update_docs"] {
        assert_eq!(mid.node_state(&n.into()), NodeState::Running, "{n}");
    }
    assert_eq!(mid.round(), 4);
}

#[test]
fn snapshot_replay_matches_scratch_replay() {
    let dir = tempfile::tempdir().unwrap();
    let live = golden_on_disk(dir.path(), 2);
    let snaps = persistence::list_snapshots(dir.path(), "golden").unwrap();
    assert!(snaps.len() >= 2, "{snaps:?}");
    let second = snaps[1];
    let from_snapshot = persistence::replay_from(
        persistence::read_snapshot(dir.path(), "golden", second).unwrap().state,
        &live.trace,
        None,
    )
    .unwrap();
    assert_eq!(from_snapshot, persistence::replay_records(&live.trace, None).unwrap());
    assert_eq!(from_snapshot, live.state);
}

#[test]
fn truncated_log_replays_its_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let live = golden_on_disk(dir.path(), 50);
    let path = persistence::wal_path(dir.path(), "golden");
    let text = std::fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text.lines().take(30).collect();
    std::fs::write(&path, keep.join("\n") + "\n").unwrap();
    let state = persistence::replay(dir.path(), "golden", None).unwrap();
    assert_eq!(state.last_seq(), 30);
    assert_eq!(state, persistence::replay_records(&live.trace, Some(30)).unwrap());
}

#[test]
fn gaps_and_tampering_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    golden_on_disk(dir.path(), 50);
    let path = persistence::wal_path(dir.path(), "golden");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(10);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = persistence::read_wal(&path).unwrap_err();
    assert!(matches!(err, PersistError::SeqGap { expected: 11, found: 12 } | PersistError::CorruptRecord(11)), "{err}");
}

#[test]
fn replan_keeps_old_records_at_version_one() {
    let dir = tempfile::tempdir().unwrap();
    let live = golden_on_disk(dir.path(), 50);
    let old = bugfix_plan();
    let mut s: PlanStructure = old.structure();
    let fallback = NodeId::from("fix_C");
    s.nodes.push((fallback.clone(), NodeConfig::new("write_fix", OutputContract::fields(&["patch"])).in_group("fix")));
    s.edges.push(("analyze".into(), fallback.clone()));
    s.edges.push((fallback, "run_tests".into()));
    let (next, event) = derive_replan(&old, s, "add a third fix", &PredicateRegistry::new()).unwrap();
    assert_eq!(next.version(), 2);
    assert_eq!(next.len(), 11);
    assert_eq!((event.old_version, event.new_version), (1, 2));
    assert_eq!(old.version(), 1);
    let records = persistence::read_wal(&persistence::wal_path(dir.path(), "golden")).unwrap();
    assert!(records.iter().all(|r| r.plan_version == 1));
    assert_eq!(records, live.trace);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_equals_live_state(seed in any::<u64>()) {
        let mut r = rng(seed);
        let plan = random_plan(&mut r, 30);
        let faults = random_faults(&mut r, &plan);
        let mut engine = Engine::builder(plan, ScriptedExecutor::new(faults))
            .approval(random_approval(seed))
            .build()
            .unwrap();
        let status = engine.run().unwrap();
        let live = engine.into_result(status);
        prop_assert_eq!(&persistence::replay_records(&live.trace, None).unwrap(), &live.state);
        for rec in &live.trace {
            let decoded = graph_harness::TraceRecord::decode(&rec.encode(), rec.seq).unwrap();
            prop_assert_eq!(&decoded, rec);
        }
    }
}
