use graph_harness::executor::{validate_contract, ScriptOp};
use graph_harness::persistence::RecordBody;
use graph_harness::plan::{FieldType, PredicateRegistry, ValidationMethod, ValidationRule};
use graph_harness::recovery::{ErrorKind, RecoveryAction, RecoveryError};
use graph_harness::samples::empty_payload;
use graph_harness::scheduler::{EngineError, RecoveryLevels};
use graph_harness::{
    Engine, EngineConfig, FaultScript, NodeConfig, NodeId, NodeState, OutputContract, Plan, RecoveryState,
    ScriptedExecutor,
};

fn cfg() -> NodeConfig {
    NodeConfig::new("act", OutputContract::fields(&["out"]))
}

fn chain(budget: u32) -> Plan {
    Plan::new(
        "chain",
        1,
        vec![("a".into(), cfg().with_budget(budget)), ("b".into(), cfg())],
        vec![("a".into(), "b".into())],
        OutputContract::fields(&["out"]),
    )
    .unwrap()
}

fn manual(plan: Plan, faults: FaultScript) -> Engine {
    let config = EngineConfig { auto_recovery: false, ..EngineConfig::default() };
    Engine::builder(plan, ScriptedExecutor::new(faults)).config(config).build().unwrap()
}

fn a() -> NodeId {
    NodeId::from("a")
}

#[test]
fn budget_of_two_allows_three_attempts() {
    let faults = FaultScript::new().fail("a", "network timeout", 3);
    let config = EngineConfig::default().with_recovery(RecoveryLevels::Retry);
    let mut engine = Engine::builder(chain(2), ScriptedExecutor::new(faults)).config(config).build().unwrap();
    let status = engine.run().unwrap();
    assert!(!status.succeeded());
    let rt = &engine.state().runtimes()[&a()];
    assert_eq!(rt.attempts, 3);
    assert_eq!(rt.state, NodeState::Failed);
    assert_eq!(engine.state().node_state(&"b".into()), NodeState::Failed);
}

#[test]
fn first_transient_failure_returns_to_pending() {
    let mut engine = manual(chain(2), FaultScript::new().fail("a", "network timeout", 1));
    engine.step_round().unwrap();
    assert_eq!(engine.state().node_state(&a()), NodeState::FailedRetryable);
    engine.attempt_retry(&a()).unwrap();
    let rt = &engine.state().runtimes()[&a()];
    assert_eq!((rt.state, rt.retries_used, rt.recovery_state), (NodeState::Pending, 1, RecoveryState::Retried));
}

#[test]
fn patch_needs_a_prior_retry() {
    let mut engine = manual(chain(2), FaultScript::new().fail("a", "contract_violation", 3));
    engine.step_round().unwrap();
    let before = engine.trace().len();
    let err = engine.attempt_patch(&a(), cfg().with_timeout(2_000)).unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::EscalationOrderViolation { .. })), "{err}");
    assert_eq!(engine.trace().len(), before);

    engine.attempt_retry(&a()).unwrap();
    engine.step_round().unwrap();
    assert_eq!(engine.state().node_state(&a()), NodeState::FailedRetryable);
    engine.attempt_patch(&a(), cfg().with_timeout(2_000)).unwrap();
    let rt = &engine.state().runtimes()[&a()];
    assert_eq!(rt.recovery_state, RecoveryState::Patched);
    assert_eq!(rt.timeout_ms, 2_000);
    assert_eq!(engine.state().config(&a()).timeout_ms, 2_000);
}

#[test]
fn retry_after_patch_is_refused() {
    let mut engine = manual(chain(2), FaultScript::new().fail("a", "network timeout", 3));
    engine.step_round().unwrap();
    engine.attempt_retry(&a()).unwrap();
    engine.step_round().unwrap();
    engine.attempt_patch(&a(), cfg()).unwrap();
    engine.step_round().unwrap();
    assert_eq!(engine.state().node_state(&a()), NodeState::FailedRetryable);
    let err = engine.attempt_retry(&a()).unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::EscalationOrderViolation { .. })), "{err}");
    engine.abandon(&a()).unwrap();
    assert_eq!(engine.state().node_state(&a()), NodeState::Failed);
}

#[test]
fn patch_may_not_change_join_topology() {
    let mut engine = manual(chain(2), FaultScript::new().fail("a", "network timeout", 2));
    engine.step_round().unwrap();
    engine.attempt_retry(&a()).unwrap();
    engine.step_round().unwrap();
    let err = engine.attempt_patch(&a(), cfg().any_of()).unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::TopologyChangeAttempted(_))), "{err}");
    let err = engine.attempt_patch(&a(), cfg().in_group("elsewhere")).unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::TopologyChangeAttempted(_))), "{err}");
}

#[test]
fn replan_needs_every_failed_node_patched() {
    let mut engine = manual(chain(1), FaultScript::new().fail("a", "network timeout", 5));
    let err = engine.request_replan("nothing failed").unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::EscalationOrderViolation { node: None, .. })), "{err}");

    engine.step_round().unwrap();
    engine.abandon(&a()).unwrap();
    let err = engine.request_replan("pristine failure").unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::EscalationOrderViolation { .. })), "{err}");
}

#[test]
fn replan_after_patch_commits_a_new_version() {
    let mut engine = manual(chain(1), FaultScript::new().fail("a", "network timeout", 5));
    engine.step_round().unwrap();
    engine.attempt_retry(&a()).unwrap();
    engine.step_round().unwrap();
    engine.attempt_patch(&a(), cfg()).unwrap();
    engine.step_round().unwrap();
    engine.abandon(&a()).unwrap();
    let failed = engine.request_replan("a keeps failing").unwrap();
    assert_eq!(failed, vec![a()]);
    assert!(engine.commit_replan("a keeps failing", &failed).unwrap());
    assert_eq!(engine.state().plan().version(), 2);
    assert!(engine.state().plan().contains(&"a~v2".into()));
    assert_eq!(engine.state().recovery_counts().replan, 1);
    let v1_records = engine.trace().iter().filter(|r| r.plan_version == 1).count();
    assert_eq!(v1_records, engine.trace().len() - 1);
}

#[test]
fn automatic_policy_escalates_in_order() {
    // Contract faults persist through the retry and clear once patched.
    let faults = FaultScript::new().fail("a", "contract_violation", 2);
    let mut engine = Engine::builder(chain(1), ScriptedExecutor::new(faults)).build().unwrap();
    assert!(engine.run().unwrap().succeeded());
    let actions: Vec<RecoveryAction> = engine
        .trace()
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::RecoveryAction { action, .. } => Some(*action),
            _ => None,
        })
        .collect();
    assert_eq!(actions, vec![RecoveryAction::LocalRetry, RecoveryAction::LocalPatch]);
}

#[test]
fn structural_failure_is_not_retryable() {
    let faults = FaultScript::new().fail("a", "schema mismatch in tool call", 1);
    let mut engine = manual(chain(2), faults);
    engine.step_round().unwrap();
    assert_eq!(engine.state().node_state(&a()), NodeState::Failed);
    let err = engine.attempt_retry(&a()).unwrap_err();
    assert!(matches!(err, EngineError::Recovery(RecoveryError::NotRecoverable { .. })), "{err}");
}

#[test]
fn hang_past_the_timeout_fails_the_node() {
    let mut faults = FaultScript::new();
    faults.push("a", ScriptOp::Hang { ms: 2_000 });
    let plan =
        Plan::new("hang", 1, vec![("a".into(), cfg().with_timeout(1_000))], vec![], OutputContract::fields(&["out"]))
            .unwrap();
    let mut engine = Engine::builder(plan, ScriptedExecutor::new(faults)).build().unwrap();
    let status = engine.run().unwrap();
    assert!(!status.succeeded());
    assert_eq!(engine.state().node_state(&a()), NodeState::Failed);
    assert_eq!(engine.state().clock(), 1_001);
}

#[test]
fn empty_payload_is_a_contract_violation() {
    let mut faults = FaultScript::new();
    faults.push("a", empty_payload());
    let mut engine = manual(chain(2), faults);
    engine.step_round().unwrap();
    let rt = &engine.state().runtimes()[&a()];
    assert_eq!(rt.state, NodeState::FailedRetryable);
    assert_eq!(rt.last_error.as_ref().unwrap().kind, ErrorKind::ContractViolation);
}

#[test]
fn contract_report_covers_every_rule() {
    let contract = OutputContract::new(
        ValidationMethod::Syntactic,
        vec![
            ValidationRule::FieldPresent { field: "a".into() },
            ValidationRule::FieldType { field: "b".into(), ty: FieldType::Number },
            ValidationRule::OneOf { field: "c".into(), values: vec!["x".into(), "y".into()] },
        ],
    );
    let payload = serde_json::json!({ "a": 1, "b": "not a number", "c": "y" }).as_object().unwrap().clone();
    let report = validate_contract(&payload, &contract, &PredicateRegistry::new()).unwrap();
    let passed: Vec<bool> = report.iter().map(|c| c.passed).collect();
    assert_eq!(passed, vec![true, false, true]);
}
