//! Single-ready-unit loop simulators.
//!
//! A loop executes one step per turn. It knows nothing about joins beyond
//! "inputs exist", runs every step of the task including alternatives, and
//! retries a failed step until it succeeds or the step cap is reached. After
//! a failure it may lapse into a wasted turn.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::executor::{ExecRequest, NodeExecutor, Outcome};
use crate::lifecycle::NodeState;
use crate::plan::{topological_order, NodeId, PredicateRegistry};
use crate::recovery::{ContextPartition, ExecContext, Reader};
use crate::scheduler::{join_holds, RecoveryCounts};

use super::tasks::TaskSpec;
use super::{HarnessError, RunMetrics};

/// Turns allowed per node before a loop run is declared failed.
pub const STEP_CAP_FACTOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chooser {
    /// Any step whose inputs exist, picked at random.
    Random,
    /// The first runnable step in plan order.
    PlanOrder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopConfig {
    pub chooser: Chooser,
    /// Chance that a plan-following loop picks a random runnable step instead.
    pub deviation: f64,
    /// Scaffolded recovery: failed steps wait behind steps not yet tried.
    pub scaffold: bool,
    /// Chance that a failure costs an extra, wasted turn.
    pub lapse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Open { failures: u32 },
    Done,
    Abandoned,
}

fn as_state(step: Step) -> NodeState {
    match step {
        Step::Open { .. } => NodeState::Pending,
        Step::Done => NodeState::Executed,
        Step::Abandoned => NodeState::Skipped,
    }
}

/// Runs `task` through a loop with one ready unit per turn.
pub fn simulate_loop_with(task: &TaskSpec, config: LoopConfig, seed: u64) -> Result<RunMetrics, HarnessError> {
    let plan = &task.plan;
    let executor = task.executor();
    let predicates = PredicateRegistry::new();
    let order = topological_order(plan).map_err(|e| HarnessError::Plan(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps: BTreeMap<NodeId, Step> = plan.node_ids().map(|n| (n.clone(), Step::Open { failures: 0 })).collect();
    let cap = STEP_CAP_FACTOR * plan.len();
    let mut turns = 0usize;
    let mut executions = 0u64;
    let mut retries = 0u64;
    let mut sim_time = 0u64;
    let mut failure = None;

    loop {
        if steps.values().all(|s| !matches!(s, Step::Open { .. })) {
            break;
        }
        if turns >= cap {
            failure = Some("StepCapExceeded".to_string());
            break;
        }
        let states: BTreeMap<NodeId, NodeState> = steps.iter().map(|(n, s)| (n.clone(), as_state(*s))).collect();
        let mut runnable: Vec<&NodeId> =
            order.iter().filter(|n| matches!(steps[*n], Step::Open { .. }) && join_holds(plan, &states, n)).collect();
        if config.scaffold {
            runnable.sort_by_key(|n| matches!(steps[*n], Step::Open { failures } if failures > 0));
        }
        let Some(node) = (match config.chooser {
            Chooser::PlanOrder if !rng.gen_bool(config.deviation) => runnable.first().copied(),
            Chooser::PlanOrder => runnable.choose(&mut rng).copied(),
            Chooser::Random => runnable.choose(&mut rng).copied(),
        }) else {
            failure = Some("NoRunnableStep".to_string());
            break;
        };
        let node = node.clone();
        let Step::Open { failures } = steps[&node] else { unreachable!() };
        let cfg = plan.config(&node);
        let request = ExecRequest {
            node: node.clone(),
            config: cfg.clone(),
            attempt: failures + 1,
            context: ContextPartition::new(
                ExecContext { inputs: Vec::new(), retries_remaining: u32::MAX, timeout_ms: cfg.timeout_ms },
                Arc::default(),
            )
            .view(Reader::Executor),
        };
        let execution = executor.execute(&request).map_err(|e| HarnessError::Executor(e.to_string()))?;
        turns += 1;
        executions += 1;
        sim_time += execution.duration_ms.min(cfg.timeout_ms + 1);
        let ok = execution.duration_ms <= cfg.timeout_ms
            && match &execution.outcome {
                Outcome::Success { payload } => crate::executor::validate_contract(payload, &cfg.contract, &predicates)
                    .map(|checks| checks.iter().all(|c| c.passed))
                    .unwrap_or(false),
                _ => false,
            };
        if ok {
            steps.insert(node.clone(), Step::Done);
            // A failed alternative is dropped once a sibling has succeeded.
            for sib in plan.siblings(&node) {
                if matches!(steps[&sib], Step::Open { failures } if failures > 0) {
                    steps.insert(sib, Step::Abandoned);
                }
            }
        } else {
            let sibling_done = plan.siblings(&node).iter().any(|s| steps[s] == Step::Done);
            if sibling_done {
                steps.insert(node, Step::Abandoned);
            } else {
                steps.insert(node, Step::Open { failures: failures + 1 });
                retries += 1;
            }
            if rng.gen_bool(config.lapse) {
                turns += 1;
            }
        }
    }

    let satisfied = steps.values().filter(|s| **s == Step::Done).count();
    Ok(RunMetrics {
        success: failure.is_none(),
        rounds: turns as u64,
        sim_time_ms: sim_time,
        dispatches: executions,
        recovery: RecoveryCounts { retry: retries, patch: 0, replan: 0 },
        plan_versions: 1,
        ready_sizes: vec![1; turns],
        satisfied_nodes: satisfied,
        node_count: plan.len(),
        longest_path: task.longest_path(),
        failure,
    })
}
