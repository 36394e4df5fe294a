//! Execution plans: the immutable, versioned DAG a run commits to.
//!
//! A [`Plan`] is built once and never mutated. Recovery that needs a different
//! structure goes through [`derive_replan`], which validates the proposal and
//! returns a new value with the same id and `version + 1`.

mod contract;
mod format;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use contract::{
    check_rule, FieldType, OutputContract, Payload, PredicateRegistry, RuleCheck, ValidationMethod, ValidationRule,
};
pub use format::{parse_plan, NodeDocument, PlanDocument};
pub use validate::{topological_order, validate_plan, Check, Subject, ValidationFailure, ValidationReport};

/// Node identifier. Ordering is lexicographic and is the engine-wide tie-break.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    #[default]
    AllOf,
    AnyOf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideEffect {
    #[default]
    ReadOnly,
    LowWrite,
    HighWrite,
}

/// Per-node configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    /// Name of a registered executor action.
    pub action: String,
    pub join: JoinMode,
    /// Candidates sharing a group are alternatives for one `any_of` join.
    pub any_of_group: Option<String>,
    pub retry_budget: u32,
    pub timeout_ms: u64,
    pub side_effect: SideEffect,
    pub contract: OutputContract,
}

impl NodeConfig {
    pub fn new(action: impl Into<String>, contract: OutputContract) -> Self {
        Self {
            action: action.into(),
            join: JoinMode::AllOf,
            any_of_group: None,
            retry_budget: 2,
            timeout_ms: 1_000,
            side_effect: SideEffect::ReadOnly,
            contract,
        }
    }

    pub fn any_of(mut self) -> Self {
        self.join = JoinMode::AnyOf;
        self
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.any_of_group = Some(group.into());
        self
    }

    pub fn with_budget(mut self, retry_budget: u32) -> Self {
        self.retry_budget = retry_budget;
        self
    }

    pub fn with_timeout(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn with_side_effect(mut self, side_effect: SideEffect) -> Self {
        self.side_effect = side_effect;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("missing field `{field}` at line {line}, column {column}")]
    MissingField { field: String, line: usize, column: usize },
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge {from} -> {to} references an unknown node")]
    UnknownEdgeEndpoint { from: NodeId, to: NodeId },
    #[error("plan version must be >= 1")]
    InvalidVersion,
    #[error("node {0}: timeout must be positive")]
    ZeroTimeout(NodeId),
    #[error("cycle detected; {0} node(s) could not be ordered")]
    CycleDetected(usize),
    #[error("replan refused: {0}")]
    InvalidStructure(ValidationReport),
}

/// Nodes, edges and per-node configuration: everything a replan may change.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanStructure {
    pub nodes: Vec<(NodeId, NodeConfig)>,
    pub edges: Vec<(NodeId, NodeId)>,
}

/// Immutable, versioned execution plan.
///
/// Fields are private; adjacency and group membership are computed once at
/// construction.
#[derive(Clone, Debug)]
pub struct Plan {
    id: String,
    version: u32,
    nodes: BTreeMap<NodeId, NodeConfig>,
    edges: BTreeSet<(NodeId, NodeId)>,
    plan_contract: OutputContract,
    preds: BTreeMap<NodeId, Vec<NodeId>>,
    succs: BTreeMap<NodeId, Vec<NodeId>>,
    groups: BTreeMap<String, Vec<NodeId>>,
}

impl PartialEq for Plan {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.version == other.version
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.plan_contract == other.plan_contract
    }
}

impl Plan {
    pub fn new(
        id: impl Into<String>,
        version: u32,
        nodes: Vec<(NodeId, NodeConfig)>,
        edges: Vec<(NodeId, NodeId)>,
        plan_contract: OutputContract,
    ) -> Result<Self, PlanError> {
        if version == 0 {
            return Err(PlanError::InvalidVersion);
        }
        let mut node_map = BTreeMap::new();
        for (id, cfg) in nodes {
            if cfg.timeout_ms == 0 {
                return Err(PlanError::ZeroTimeout(id));
            }
            if node_map.contains_key(&id) {
                return Err(PlanError::DuplicateNodeId(id));
            }
            node_map.insert(id, cfg);
        }
        let mut edge_set = BTreeSet::new();
        let mut preds: BTreeMap<NodeId, Vec<NodeId>> = node_map.keys().map(|k| (k.clone(), Vec::new())).collect();
        let mut succs = preds.clone();
        for (from, to) in edges {
            if !node_map.contains_key(&from) || !node_map.contains_key(&to) {
                return Err(PlanError::UnknownEdgeEndpoint { from, to });
            }
            if !edge_set.insert((from.clone(), to.clone())) {
                return Err(PlanError::DuplicateEdge(from, to));
            }
            succs.get_mut(&from).expect("known node").push(to.clone());
            preds.get_mut(&to).expect("known node").push(from);
        }
        for list in preds.values_mut().chain(succs.values_mut()) {
            list.sort();
        }
        let mut groups: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
        for (id, cfg) in &node_map {
            if let Some(g) = &cfg.any_of_group {
                groups.entry(g.clone()).or_default().push(id.clone());
            }
        }
        Ok(Self { id: id.into(), version, nodes: node_map, edges: edge_set, plan_contract, preds, succs, groups })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains_key(node)
    }

    /// Node ids in ascending order.
    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeConfig> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    /// Panics if the node is not part of the plan.
    pub fn config(&self, node: &NodeId) -> &NodeConfig {
        &self.nodes[node]
    }

    pub fn plan_contract(&self) -> &OutputContract {
        &self.plan_contract
    }

    pub fn predecessors(&self, node: &NodeId) -> &[NodeId] {
        self.preds.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn successors(&self, node: &NodeId) -> &[NodeId] {
        self.succs.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Zero in-degree nodes.
    pub fn entry_nodes(&self) -> Vec<NodeId> {
        self.preds.iter().filter(|(_, p)| p.is_empty()).map(|(k, _)| k.clone()).collect()
    }

    /// Zero out-degree nodes.
    pub fn exit_nodes(&self) -> Vec<NodeId> {
        self.succs.iter().filter(|(_, s)| s.is_empty()).map(|(k, _)| k.clone()).collect()
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<NodeId>> {
        &self.groups
    }

    pub fn group_members(&self, group: &str) -> &[NodeId] {
        self.groups.get(group).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Other members of `node`'s any_of group, if it has one.
    pub fn siblings(&self, node: &NodeId) -> Vec<NodeId> {
        match &self.nodes[node].any_of_group {
            Some(g) => self.group_members(g).iter().filter(|m| *m != node).cloned().collect(),
            None => Vec::new(),
        }
    }

    pub fn structure(&self) -> PlanStructure {
        PlanStructure {
            nodes: self.nodes.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            edges: self.edges.iter().cloned().collect(),
        }
    }

    pub fn to_document(&self) -> PlanDocument {
        PlanDocument::from(self)
    }
}

impl Serialize for Plan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Plan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = PlanDocument::deserialize(deserializer)?;
        doc.into_plan().map_err(serde::de::Error::custom)
    }
}

/// Audit event for a plan-version change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub plan_id: String,
    pub old_version: u32,
    pub new_version: u32,
    pub reason: String,
}

/// Builds the next version of `old` from a proposed structure.
///
/// The proposal must pass [`validate_plan`]; otherwise the replan is refused
/// and `old` stays authoritative. `old` is never modified.
pub fn derive_replan(
    old: &Plan,
    proposal: PlanStructure,
    reason: impl Into<String>,
    predicates: &PredicateRegistry,
) -> Result<(Plan, ReplanEvent), PlanError> {
    let next = Plan::new(old.id.clone(), old.version + 1, proposal.nodes, proposal.edges, old.plan_contract.clone())?;
    let report = validate_plan(&next, predicates);
    if !report.ok {
        return Err(PlanError::InvalidStructure(report));
    }
    let event = ReplanEvent {
        plan_id: old.id.clone(),
        old_version: old.version,
        new_version: next.version,
        reason: reason.into(),
    };
    Ok((next, event))
}
