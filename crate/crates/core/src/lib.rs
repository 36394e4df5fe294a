//! Static-DAG execution harness for agent-style workflows.
//!
//! A workflow is committed up front as an immutable, versioned [`plan::Plan`].
//! The [`scheduler`] dispatches every ready node per round in a fixed order,
//! honours `all_of` / `any_of` joins, and drives each node through the
//! [`lifecycle`] state machine. Failures go through the three-level
//! [`recovery`] protocol (retry, patch, replan). Every event is appended to a
//! write-ahead log ([`persistence`]) before it is applied, so any run can be
//! replayed record by record.
//!
//! The [`harness`] module runs the same task sets through single-ready-unit
//! loop simulators and through the graph engine with increasing recovery
//! levels, and decomposes the performance differences into attributable gains.
//!
//! Module map:
//!
//! - **plan**: plan model, file format, validation, topological order, replan
//! - **lifecycle**: node states, the transition table, deadlines
//! - **scheduler**: ready-set computation, dispatch, joins, the run loop
//! - **recovery**: error classification, diagnosis, escalation API
//! - **executor**: actions, contracts, scripted / fault-injecting executors
//! - **persistence**: trace records, WAL files, snapshots, replay
//! - **harness**: task generation, loop simulation, group runs, gains
//! - **cli**: the `sgh` command surface

pub mod cli;
pub mod clock;
pub mod executor;
pub mod harness;
pub mod lifecycle;
pub mod persistence;
pub mod plan;
pub mod recovery;
pub mod samples;
pub mod scheduler;

pub use clock::{Clock, Timestamp, VirtualClock, WallClock};
pub use executor::{FaultScript, NodeExecutor, ScriptedExecutor};
pub use lifecycle::{NodeRuntime, NodeState, RecoveryState, Trigger};
pub use persistence::{TraceRecord, Wal};
pub use plan::{validate_plan, JoinMode, NodeConfig, NodeId, OutputContract, Plan, SideEffect};
pub use scheduler::{Engine, EngineConfig, ExecutionState, ReadySet, RunResult, RunStatus};
