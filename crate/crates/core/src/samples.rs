//! Ready-made plans and fault scripts used by the examples, tests and CLI.

use serde_json::json;

use crate::executor::{FaultScript, ScriptOp};
use crate::plan::{FieldType, NodeConfig, NodeId, OutputContract, Plan, SideEffect, ValidationMethod, ValidationRule};

fn contract(fields: &[&str]) -> OutputContract {
    OutputContract::fields(fields)
}

/// The ten-node bug-fix workflow: two parallel searches and reads, an
/// analysis, two alternative patches joined by `any_of`, a docs update, the
/// test run and a final report.
pub fn bugfix_plan() -> Plan {
    let low = |c: NodeConfig| c.with_side_effect(SideEffect::LowWrite);
    let report_contract = OutputContract::new(
        ValidationMethod::Syntactic,
        vec![ValidationRule::FieldType { field: "summary".into(), ty: FieldType::String }],
    );
    let nodes: Vec<(NodeId, NodeConfig)> = vec![
        ("search_auth".into(), NodeConfig::new("search", contract(&["files"]))),
        ("search_utils".into(), NodeConfig::new("search", contract(&["files"]))),
        ("read_auth".into(), NodeConfig::new("read_file", contract(&["content"]))),
        ("read_utils".into(), NodeConfig::new("read_file", contract(&["content"]))),
        ("analyze".into(), NodeConfig::new("analyze", contract(&["root_cause"]))),
        ("fix_A".into(), low(NodeConfig::new("write_fix", contract(&["patch"])).in_group("fix"))),
        ("fix_B".into(), low(NodeConfig::new("write_fix", contract(&["patch"])).in_group("fix"))),
        ("update_docs".into(), low(NodeConfig::new("update_docs", contract(&["docs"])))),
        ("run_tests".into(), NodeConfig::new("run_tests", contract(&["passed"])).any_of()),
        ("report".into(), NodeConfig::new("report", report_contract.clone())),
    ];
    let edges = [
        ("search_auth", "read_auth"),
        ("search_utils", "read_utils"),
        ("read_auth", "analyze"),
        ("read_utils", "analyze"),
        ("analyze", "fix_A"),
        ("analyze", "fix_B"),
        ("analyze", "update_docs"),
        ("fix_A", "run_tests"),
        ("fix_B", "run_tests"),
        ("run_tests", "report"),
        ("update_docs", "report"),
    ]
    .iter()
    .map(|(a, b)| (NodeId::from(*a), NodeId::from(*b)))
    .collect();
    Plan::new("bugfix", 1, nodes, edges, report_contract).expect("sample plan is well formed")
}

/// `fix_A` fails once with a transient error; everything else succeeds.
pub fn bugfix_faults() -> FaultScript {
    FaultScript::new().fail("fix_A", "transient", 1)
}

/// Two-node plan whose second step is high_write and so needs approval.
pub fn approval_plan() -> Plan {
    let nodes = vec![
        ("prepare".into(), NodeConfig::new("prepare", contract(&["diff"]))),
        ("deploy".into(), NodeConfig::new("deploy", contract(&["released"])).with_side_effect(SideEffect::HighWrite)),
    ];
    Plan::new("release", 1, nodes, vec![("prepare".into(), "deploy".into())], contract(&["released"]))
        .expect("sample plan is well formed")
}

/// A succeed op carrying an explicit payload.
pub fn succeed_with(payload: serde_json::Value) -> ScriptOp {
    ScriptOp::Succeed { payload: payload.as_object().cloned() }
}

/// Payload that omits every field, used to trip a contract.
pub fn empty_payload() -> ScriptOp {
    succeed_with(json!({}))
}
