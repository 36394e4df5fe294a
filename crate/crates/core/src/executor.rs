//! Node actions, contract validation and the shipped mock executors.
//!
//! Executors see a node only through an executor-role [`ContextView`]; they
//! report an [`Outcome`] and a simulated duration. Contract validation is not
//! done here but in the scheduler's serialized step, using
//! [`validate_contract`], so that stamps land in the log in a fixed order.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::plan::{
    check_rule, NodeConfig, NodeId, OutputContract, Payload, PredicateRegistry, RuleCheck, ValidationMethod,
};
use crate::recovery::{ContextView, ContextViolation, ErrorKind, Failure};

/// Appended to an action name by [`crate::recovery::SuffixPatcher`]. The
/// scripted executor treats contract and auth faults on such actions as fixed.
pub const PATCHED_ACTION_SUFFIX: &str = "+patched";

/// Simulated duration of an action that does not specify one.
pub const DEFAULT_DURATION_MS: u64 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    Success {
        payload: Payload,
    },
    Failure {
        failure: Failure,
    },
    /// The action asks to be retried; handled like a transient failure.
    Retry {
        failure: Failure,
    },
    /// The action needs a human decision before it can finish.
    Escalate {
        reason: String,
    },
}

impl Outcome {
    pub fn success(payload: Payload) -> Self {
        Outcome::Success { payload }
    }

    pub fn failure(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Outcome::Failure { failure: Failure::new(kind, detail) }
    }
}

/// An outcome plus how long the action took in simulated time.
#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub outcome: Outcome,
    pub duration_ms: u64,
}

impl Execution {
    pub fn new(outcome: Outcome, duration_ms: u64) -> Self {
        Self { outcome, duration_ms }
    }
}

/// Accepted output of an executed node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub payload: Payload,
    pub produced_at: Timestamp,
    pub validation: Vec<RuleCheck>,
    pub validation_method: ValidationMethod,
}

pub struct ExecRequest {
    pub node: NodeId,
    pub config: NodeConfig,
    /// 1-based attempt number.
    pub attempt: u32,
    pub context: ContextView,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutorError {
    #[error("no action registered under {0}")]
    UnknownAction(String),
    #[error("unknown predicate {0}")]
    UnknownPredicate(String),
    #[error(transparent)]
    Context(#[from] ContextViolation),
}

pub trait NodeExecutor: Send + Sync {
    fn execute(&self, request: &ExecRequest) -> Result<Execution, ExecutorError>;
}

impl<E: NodeExecutor + ?Sized> NodeExecutor for Arc<E> {
    fn execute(&self, request: &ExecRequest) -> Result<Execution, ExecutorError> {
        (**self).execute(request)
    }
}

pub type ActionFn = dyn Fn(&ExecRequest) -> Result<Execution, ExecutorError> + Send + Sync;

/// Actions looked up by name.
#[derive(Clone, Default)]
pub struct ActionRegistry {
    actions: BTreeMap<String, Arc<ActionFn>>,
}

impl ActionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&ExecRequest) -> Result<Execution, ExecutorError> + Send + Sync + 'static,
    {
        self.actions.insert(name.into(), Arc::new(f));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.actions.contains_key(name)
    }
}

impl fmt::Debug for ActionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.actions.keys()).finish()
    }
}

impl NodeExecutor for ActionRegistry {
    fn execute(&self, request: &ExecRequest) -> Result<Execution, ExecutorError> {
        let action = self
            .actions
            .get(&request.config.action)
            .ok_or_else(|| ExecutorError::UnknownAction(request.config.action.clone()))?;
        action(request)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptOp {
    Succeed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<Payload>,
    },
    Fail {
        kind: String,
    },
    Hang {
        ms: u64,
    },
}

/// Per-node outcome scripts, consumed one entry per attempt.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultScript {
    pub scripts: BTreeMap<NodeId, Vec<ScriptOp>>,
}

impl FaultScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(document: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(document)
    }

    pub fn push(&mut self, node: impl Into<NodeId>, op: ScriptOp) -> &mut Self {
        self.scripts.entry(node.into()).or_default().push(op);
        self
    }

    pub fn fail(mut self, node: &str, kind: &str, times: usize) -> Self {
        for _ in 0..times {
            self.push(node, ScriptOp::Fail { kind: kind.into() });
        }
        self
    }

    /// Op for the given 1-based attempt, if the script has one.
    pub fn op(&self, node: &NodeId, attempt: u32) -> Option<&ScriptOp> {
        self.scripts.get(node)?.get(attempt.checked_sub(1)? as usize)
    }
}

/// Replays a [`FaultScript`]. Exhausted or absent scripts succeed with a
/// payload built from the node's contract.
#[derive(Clone, Debug, Default)]
pub struct ScriptedExecutor {
    script: FaultScript,
    durations: BTreeMap<NodeId, u64>,
}

impl ScriptedExecutor {
    pub fn new(script: FaultScript) -> Self {
        Self { script, durations: BTreeMap::new() }
    }

    pub fn with_duration(mut self, node: impl Into<NodeId>, ms: u64) -> Self {
        self.durations.insert(node.into(), ms);
        self
    }

    pub fn script(&self) -> &FaultScript {
        &self.script
    }

    fn conforming(config: &NodeConfig) -> Payload {
        config.contract.conforming_payload()
    }
}

impl NodeExecutor for ScriptedExecutor {
    fn execute(&self, request: &ExecRequest) -> Result<Execution, ExecutorError> {
        request.context.exec()?;
        let config = &request.config;
        let duration = self.durations.get(&request.node).copied().unwrap_or(DEFAULT_DURATION_MS);
        let outcome = match self.script.op(&request.node, request.attempt) {
            None | Some(ScriptOp::Succeed { payload: None }) => Outcome::success(Self::conforming(config)),
            Some(ScriptOp::Succeed { payload: Some(p) }) => Outcome::success(p.clone()),
            Some(ScriptOp::Hang { ms }) => {
                return Ok(Execution::new(Outcome::success(Self::conforming(config)), *ms));
            }
            Some(ScriptOp::Fail { kind }) => {
                let failure = Failure::classified(kind.clone());
                let patchable = matches!(failure.kind, ErrorKind::ContractViolation | ErrorKind::AuthError);
                if patchable && config.action.ends_with(PATCHED_ACTION_SUFFIX) {
                    Outcome::success(Self::conforming(config))
                } else {
                    Outcome::Failure { failure }
                }
            }
        };
        Ok(Execution::new(outcome, duration))
    }
}

/// Evaluates every rule of `contract` against `payload`, without
/// short-circuiting.
pub fn validate_contract(
    payload: &Payload,
    contract: &OutputContract,
    predicates: &PredicateRegistry,
) -> Result<Vec<RuleCheck>, ExecutorError> {
    contract
        .rules
        .iter()
        .map(|rule| {
            let passed = check_rule(rule, payload, predicates).ok_or_else(|| match rule {
                crate::plan::ValidationRule::Predicate { name } => ExecutorError::UnknownPredicate(name.clone()),
                _ => unreachable!("only predicate rules can be unresolved"),
            })?;
            Ok(RuleCheck { rule: rule.clone(), passed })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::ValidationRule;
    use crate::recovery::{ContextPartition, Reader};
    use serde_json::json;

    fn request(node: &str, attempt: u32, action: &str) -> ExecRequest {
        ExecRequest {
            node: node.into(),
            config: NodeConfig::new(action, OutputContract::fields(&["result"])),
            attempt,
            context: ContextPartition::default().view(Reader::Executor),
        }
    }

    #[test]
    fn script_is_consumed_per_attempt() {
        let script: FaultScript =
            FaultScript::from_json(br#"{"a": [{"op": "fail", "kind": "transient"}, {"op": "hang", "ms": 2000}]}"#)
                .unwrap();
        let ex = ScriptedExecutor::new(script);
        let first = ex.execute(&request("a", 1, "x")).unwrap();
        assert_eq!(first.outcome, Outcome::failure(ErrorKind::Transient, "transient"));
        assert_eq!(ex.execute(&request("a", 2, "x")).unwrap().duration_ms, 2000);
        let third = ex.execute(&request("a", 3, "x")).unwrap();
        assert_eq!(third.outcome, Outcome::success(json!({"result": true}).as_object().unwrap().clone()));
    }

    #[test]
    fn patched_action_fixes_contract_faults_only() {
        let ex = ScriptedExecutor::new(FaultScript::new().fail("a", "contract_violation", 1).fail("b", "network", 1));
        assert!(matches!(ex.execute(&request("a", 1, "x")).unwrap().outcome, Outcome::Failure { .. }));
        assert!(matches!(ex.execute(&request("a", 1, "x+patched")).unwrap().outcome, Outcome::Success { .. }));
        assert!(matches!(ex.execute(&request("b", 1, "x+patched")).unwrap().outcome, Outcome::Failure { .. }));
    }

    #[test]
    fn registry_reports_unknown_actions() {
        let mut reg = ActionRegistry::new();
        reg.register("echo", |_| Ok(Execution::new(Outcome::success(Payload::new()), 1)));
        assert!(reg.execute(&request("a", 1, "echo")).is_ok());
        assert_eq!(reg.execute(&request("a", 1, "nope")).unwrap_err(), ExecutorError::UnknownAction("nope".into()));
    }

    #[test]
    fn contract_report_is_complete() {
        let contract = OutputContract::fields(&["a", "b", "c"]);
        let payload = json!({"a": 1, "c": 3}).as_object().unwrap().clone();
        let report = validate_contract(&payload, &contract, &PredicateRegistry::new()).unwrap();
        assert_eq!(report.iter().map(|r| r.passed).collect::<Vec<_>>(), vec![true, false, true]);
        let pred =
            OutputContract::new(ValidationMethod::External, vec![ValidationRule::Predicate { name: "p".into() }]);
        assert_eq!(
            validate_contract(&payload, &pred, &PredicateRegistry::new()).unwrap_err(),
            ExecutorError::UnknownPredicate("p".into())
        );
    }
}
