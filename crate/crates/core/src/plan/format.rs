//! JSON plan file format.
//!
//! ```json
//! {
//!   "id": "bugfix", "version": 1,
//!   "nodes": [{"id": "a", "action": "search", "join": "all_of",
//!              "retry_budget": 2, "timeout_ms": 1000, "side_effect": "read_only",
//!              "contract": {"method": "syntactic",
//!                           "rules": [{"rule": "field_present", "field": "files"}]}}],
//!   "edges": [["a", "b"]],
//!   "plan_contract": {"method": "syntactic", "rules": [...]}
//! }
//! ```
//!
//! Unknown keys are rejected everywhere. `any_of_group` is the only optional
//! node key.

use serde::{Deserialize, Serialize};

use super::{JoinMode, NodeConfig, NodeId, OutputContract, Plan, PlanError, SideEffect};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub id: String,
    pub version: u32,
    pub nodes: Vec<NodeDocument>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub plan_contract: OutputContract,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: NodeId,
    pub action: String,
    pub join: JoinMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub any_of_group: Option<String>,
    pub retry_budget: u32,
    pub timeout_ms: u64,
    pub side_effect: SideEffect,
    pub contract: OutputContract,
}

impl PlanDocument {
    pub fn into_plan(self) -> Result<Plan, PlanError> {
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| {
                (
                    n.id,
                    NodeConfig {
                        action: n.action,
                        join: n.join,
                        any_of_group: n.any_of_group,
                        retry_budget: n.retry_budget,
                        timeout_ms: n.timeout_ms,
                        side_effect: n.side_effect,
                        contract: n.contract,
                    },
                )
            })
            .collect();
        Plan::new(self.id, self.version, nodes, self.edges, self.plan_contract)
    }
}

impl From<&Plan> for PlanDocument {
    fn from(plan: &Plan) -> Self {
        PlanDocument {
            id: plan.id.clone(),
            version: plan.version,
            nodes: plan
                .nodes
                .iter()
                .map(|(id, c)| NodeDocument {
                    id: id.clone(),
                    action: c.action.clone(),
                    join: c.join,
                    any_of_group: c.any_of_group.clone(),
                    retry_budget: c.retry_budget,
                    timeout_ms: c.timeout_ms,
                    side_effect: c.side_effect,
                    contract: c.contract.clone(),
                })
                .collect(),
            edges: plan.edges.iter().cloned().collect(),
            plan_contract: plan.plan_contract.clone(),
        }
    }
}

/// Parses a UTF-8 JSON plan document.
pub fn parse_plan(document: &[u8]) -> Result<Plan, PlanError> {
    let doc: PlanDocument = serde_json::from_slice(document).map_err(|e| {
        let message = e.to_string();
        match missing_field_name(&message) {
            Some(field) => PlanError::MissingField { field, line: e.line(), column: e.column() },
            None => PlanError::Parse { line: e.line(), column: e.column(), message },
        }
    })?;
    doc.into_plan()
}

// serde reports "missing field `name` at line L column C".
fn missing_field_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "id": "p", "version": 1,
        "nodes": [{"id": "only", "action": "noop", "join": "all_of", "retry_budget": 0,
                   "timeout_ms": 100, "side_effect": "read_only",
                   "contract": {"method": "syntactic", "rules": [{"rule": "field_present", "field": "ok"}]}}],
        "edges": [],
        "plan_contract": {"method": "syntactic", "rules": [{"rule": "field_present", "field": "ok"}]}
    }"#;

    #[test]
    fn minimal_document_parses() {
        let plan = parse_plan(MINIMAL.as_bytes()).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.version(), 1);
    }

    #[test]
    fn document_round_trips() {
        let plan = parse_plan(MINIMAL.as_bytes()).unwrap();
        let text = serde_json::to_vec(&plan).unwrap();
        assert_eq!(parse_plan(&text).unwrap(), plan);
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        let node = v["nodes"][0].clone();
        v["nodes"].as_array_mut().unwrap().push(node);
        let err = parse_plan(v.to_string().as_bytes()).unwrap_err();
        assert_eq!(err, PlanError::DuplicateNodeId("only".into()));
    }

    #[test]
    fn missing_contract_is_missing_field() {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v["nodes"][0].as_object_mut().unwrap().remove("contract");
        match parse_plan(v.to_string().as_bytes()).unwrap_err() {
            PlanError::MissingField { field, .. } => assert_eq!(field, "contract"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_parse_errors() {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v["nodes"][0]["colour"] = "red".into();
        assert!(matches!(parse_plan(v.to_string().as_bytes()), Err(PlanError::Parse { .. })));
        match parse_plan(b"{\n  \"id\": \n}") {
            Err(PlanError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
