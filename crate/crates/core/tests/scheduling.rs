mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{oracle_longest_path, oracle_ready, random_plan, rng};
use graph_harness::plan::topological_order;
use graph_harness::samples::{bugfix_faults, bugfix_plan};
use graph_harness::scheduler::{compute_ready_set, dispatch, run_to_completion, ReadySet};
use graph_harness::{
    Engine, EngineConfig, ExecutionState, FaultScript, NodeConfig, NodeId, NodeState, OutputContract, Plan,
    ScriptedExecutor, SideEffect,
};
use proptest::prelude::*;

fn names(ids: &[NodeId]) -> Vec<&str> {
    ids.iter().map(NodeId::as_str).collect()
}

#[test]
fn bugfix_initial_ready_set() {
    let state = ExecutionState::initial(bugfix_plan(), 1_000);
    let ready = compute_ready_set(&state);
    assert_eq!(names(&ready.members), ["search_auth", "search_utils"]);
    assert_eq!(dispatch(&state, &ready), ready.members);
}

#[test]
fn fix_wave_follows_analyze() {
    let mut engine = Engine::builder(bugfix_plan(), ScriptedExecutor::new(bugfix_faults())).build().unwrap();
    for _ in 0..3 {
        engine.step_round().unwrap();
    }
    assert_eq!(engine.state().node_state(&"analyze".into()), NodeState::Executed);
    let ready = compute_ready_set(engine.state());
    assert_eq!(names(&ready.members), ["fix_A", "fix_B", "update_docs"]);
    let round = engine.step_round().unwrap();
    assert_eq!(names(&round.dispatched), ["fix_A", "fix_B", "update_docs"]);
    assert_eq!(engine.state().node_state(&"fix_A".into()), NodeState::Skipped);
    assert_eq!(names(&compute_ready_set(engine.state()).members), ["run_tests"]);
}

#[test]
fn high_write_alternatives_dispatch_one_at_a_time() {
    let cfg = || NodeConfig::new("act", OutputContract::fields(&["out"]));
    let hw = || cfg().in_group("g").with_side_effect(SideEffect::HighWrite);
    let plan = Plan::new(
        "hw",
        1,
        vec![("p".into(), hw()), ("q".into(), hw()), ("j".into(), cfg().any_of())],
        vec![("p".into(), "j".into()), ("q".into(), "j".into())],
        OutputContract::fields(&["out"]),
    )
    .unwrap();
    let state = ExecutionState::initial(plan, 1_000);
    let ready = ReadySet { round: 1, members: vec!["p".into(), "q".into()] };
    assert_eq!(names(&dispatch(&state, &ready)), ["p"]);
}

#[test]
fn bugfix_order_respects_every_edge() {
    let plan = bugfix_plan();
    let order = topological_order(&plan).unwrap();
    let index: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
    assert_eq!(order.len(), plan.len());
    for (u, v) in plan.edges() {
        assert!(index[u] < index[v], "{u} after {v}");
    }
}

#[test]
fn fifty_node_dags_finish_in_longest_path_rounds() {
    for seed in 0..40 {
        let mut r = rng(seed);
        let plan = loop {
            let p = random_plan(&mut r, 50);
            if p.len() >= 25 {
                break p;
            }
        };
        let lp = oracle_longest_path(&plan) as u64;
        let config = EngineConfig { approval_threshold: None, ..EngineConfig::default() };
        let result = run_to_completion(plan, ScriptedExecutor::new(FaultScript::new()), config).unwrap();
        // Every node executes except candidates skipped by a sibling.
        for (id, rt) in result.state.runtimes() {
            let skipped_alt = rt.state == NodeState::Skipped && result.state.config(id).any_of_group.is_some();
            assert!(rt.state == NodeState::Executed || skipped_alt, "{id} ended {}", rt.state);
        }
        assert!(result.rounds() <= lp, "seed {seed}: {} rounds, longest path {lp}", result.rounds());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topological_order_is_valid(seed in any::<u64>()) {
        let plan = random_plan(&mut rng(seed), 30);
        let order = topological_order(&plan).unwrap();
        let index: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
        prop_assert_eq!(order.len(), plan.len());
        for (u, v) in plan.edges() {
            prop_assert!(index[u] < index[v]);
        }
    }

    #[test]
    fn live_ready_sets_match_the_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let plan = random_plan(&mut r, 25);
        let faults = common::random_faults(&mut r, &plan);
        let mut engine = Engine::builder(plan.clone(), ScriptedExecutor::new(faults))
            .approval(common::random_approval(seed))
            .build()
            .unwrap();
        let mut rounds = 0;
        while !engine.state().all_terminal() && rounds < 500 {
            let states: BTreeMap<NodeId, NodeState> =
                engine.state().runtimes().iter().map(|(n, rt)| (n.clone(), rt.state)).collect();
            let expect: BTreeSet<NodeId> = oracle_ready(engine.state().plan(), &states);
            let report = match engine.step_round() {
                Ok(r) => r,
                Err(graph_harness::scheduler::EngineError::ReplanRequested { .. }) => break,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert_eq!(report.ready.iter().cloned().collect::<BTreeSet<_>>(), expect);
            rounds += 1;
        }
    }

    #[test]
    fn plan_structure_is_untouched_by_a_run(seed in any::<u64>()) {
        let mut r = rng(seed);
        let plan = random_plan(&mut r, 25);
        let before = plan.structure();
        let config = EngineConfig { approval_threshold: None, ..EngineConfig::default() };
        let result = run_to_completion(plan.clone(), ScriptedExecutor::new(FaultScript::new()), config).unwrap();
        prop_assert_eq!(result.state.plan().structure(), before);
        prop_assert_eq!(result.state.plan(), &plan);
    }

    #[test]
    fn terminal_states_never_change(seed in any::<u64>()) {
        let mut r = rng(seed);
        let plan = random_plan(&mut r, 25);
        let faults = common::random_faults(&mut r, &plan);
        let result = run_to_completion(plan, ScriptedExecutor::new(faults), EngineConfig::default()).unwrap();
        let mut terminal: BTreeMap<(u32, NodeId), NodeState> = BTreeMap::new();
        for rec in &result.trace {
            if let graph_harness::persistence::RecordBody::Transition { node, from, to, .. } = &rec.body {
                prop_assert!(!terminal.contains_key(&(rec.plan_version, node.clone())), "{} left {}", node, from);
                if graph_harness::lifecycle::is_terminal(*to) {
                    terminal.insert((rec.plan_version, node.clone()), *to);
                }
            }
        }
    }
}
