//! Group-comparison harness.
//!
//! Every group runs the same tasks with the same fault scripts and step caps.
//! G0 to G3 are single-ready-unit loops; G4 to G6 are the graph engine with
//! retry, retry+patch and retry+patch+replan recovery. G0 is a synthetic
//! reference loop with no external counterpart.

pub mod bench;
pub mod gains;
pub mod loop_sim;
pub mod tasks;

use std::fmt;

use num::{BigInt, BigRational, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::persistence::{RecordBody, TraceRecord};
use crate::recovery::RecoveryAction;
use crate::scheduler::{run_to_completion, EngineConfig, RecoveryCounts, RecoveryLevels, RunResult};

pub use bench::{run_bench, BenchConfig, BenchReport};
pub use gains::{compute_gains, rational_from_decimal, GainReport};
pub use loop_sim::{simulate_loop_with, Chooser, LoopConfig, STEP_CAP_FACTOR};
pub use tasks::{generate_parallel_tasks, generate_tasks, without_faults, FaultFamily, TaskSpec, Tier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    G0,
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
}

impl Group {
    pub const ALL: [Group; 7] = [Group::G0, Group::G1, Group::G2, Group::G3, Group::G4, Group::G5, Group::G6];

    pub fn kind(self) -> GroupKind {
        match self {
            Group::G0 => {
                GroupKind::Loop(LoopConfig { chooser: Chooser::Random, deviation: 0.0, scaffold: false, lapse: 0.15 })
            }
            Group::G1 => {
                GroupKind::Loop(LoopConfig { chooser: Chooser::Random, deviation: 0.0, scaffold: false, lapse: 0.3 })
            }
            Group::G2 => {
                GroupKind::Loop(LoopConfig { chooser: Chooser::PlanOrder, deviation: 0.2, scaffold: false, lapse: 0.2 })
            }
            Group::G3 => {
                GroupKind::Loop(LoopConfig { chooser: Chooser::PlanOrder, deviation: 0.0, scaffold: true, lapse: 0.0 })
            }
            Group::G4 => GroupKind::Graph(RecoveryLevels::Retry),
            Group::G5 => GroupKind::Graph(RecoveryLevels::RetryPatch),
            Group::G6 => GroupKind::Graph(RecoveryLevels::RetryPatchReplan),
        }
    }

    /// Groups without a real-world counterpart.
    pub fn is_synthetic(self) -> bool {
        self == Group::G0
    }

    pub fn description(self) -> &'static str {
        match self {
            Group::G0 => "synthetic loop reference",
            Group::G1 => "plain loop",
            Group::G2 => "loop with a written plan",
            Group::G3 => "loop with plan and scaffolded recovery",
            Group::G4 => "graph, retry",
            Group::G5 => "graph, retry + patch",
            Group::G6 => "graph, retry + patch + replan",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown group {s}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    SingleReadyLoop,
    GraphEngine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    None,
    ScriptedPlan,
    ScriptedPlanWithScaffold,
}

/// One row of the group design table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub group: Group,
    pub scheduler: SchedulerKind,
    /// `None` for loops, whose recovery is unbounded retrying.
    pub recovery: Option<RecoveryLevels>,
    pub planner: PlannerKind,
}

impl Group {
    pub fn config(self) -> GroupConfig {
        let (scheduler, recovery, planner) = match self {
            Group::G0 | Group::G1 => (SchedulerKind::SingleReadyLoop, None, PlannerKind::None),
            Group::G2 => (SchedulerKind::SingleReadyLoop, None, PlannerKind::ScriptedPlan),
            Group::G3 => (SchedulerKind::SingleReadyLoop, None, PlannerKind::ScriptedPlanWithScaffold),
            Group::G4 => (SchedulerKind::GraphEngine, Some(RecoveryLevels::Retry), PlannerKind::ScriptedPlan),
            Group::G5 => (SchedulerKind::GraphEngine, Some(RecoveryLevels::RetryPatch), PlannerKind::ScriptedPlan),
            Group::G6 => {
                (SchedulerKind::GraphEngine, Some(RecoveryLevels::RetryPatchReplan), PlannerKind::ScriptedPlan)
            }
        };
        GroupConfig { group: self, scheduler, recovery, planner }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupKind {
    Loop(LoopConfig),
    Graph(RecoveryLevels),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("group {0} missing from the results")]
    MissingGroup(Group),
    #[error("groups ran under different task configurations")]
    ConfigMismatch,
    #[error("engine error on task {task}: {message}")]
    Engine { task: String, message: String },
    #[error("executor error: {0}")]
    Executor(String),
    #[error("group {0} is not a loop variant")]
    NotALoop(Group),
    #[error("plan error: {0}")]
    Plan(String),
}

/// Counters for one run. For loops a round is a turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub success: bool,
    pub rounds: u64,
    pub sim_time_ms: u64,
    pub dispatches: u64,
    pub recovery: RecoveryCounts,
    pub plan_versions: u32,
    pub ready_sizes: Vec<usize>,
    /// Nodes of the final plan version that ended executed.
    pub satisfied_nodes: usize,
    pub node_count: usize,
    pub longest_path: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunMetrics {
    pub fn from_result(result: &RunResult, longest_path: usize) -> Self {
        let state = &result.state;
        Self {
            success: result.status.succeeded(),
            rounds: state.round(),
            sim_time_ms: state.clock(),
            dispatches: state.dispatches(),
            recovery: state.recovery_counts(),
            plan_versions: state.plan().version(),
            ready_sizes: result.ready_sizes(),
            satisfied_nodes: state.count_in(crate::lifecycle::NodeState::Executed),
            node_count: state.plan().len(),
            longest_path,
            failure: match &result.status {
                crate::scheduler::RunStatus::Succeeded => None,
                crate::scheduler::RunStatus::Failed { reason } => Some(reason.clone()),
            },
        }
    }

    /// Rebuilds the counters from a trace alone. Outcome fields (`success`,
    /// `satisfied_nodes`, `failure`) are taken from `live` since they depend
    /// on the final plan contract rather than on counting.
    pub fn from_trace(trace: &[TraceRecord], live: &RunMetrics) -> Self {
        let mut m = RunMetrics {
            rounds: 0,
            sim_time_ms: trace.last().map_or(0, |r| r.clock),
            dispatches: 0,
            recovery: RecoveryCounts::default(),
            plan_versions: trace.last().map_or(1, |r| r.plan_version),
            ready_sizes: Vec::new(),
            ..live.clone()
        };
        for r in trace {
            match &r.body {
                RecordBody::RoundBoundary { ready, .. } => {
                    m.rounds += 1;
                    m.ready_sizes.push(ready.len());
                }
                RecordBody::Dispatch { .. } => m.dispatches += 1,
                RecordBody::RecoveryAction { action: RecoveryAction::LocalRetry, .. } => m.recovery.retry += 1,
                RecordBody::RecoveryAction { action: RecoveryAction::LocalPatch, .. } => m.recovery.patch += 1,
                RecordBody::Replan { .. } => m.recovery.replan += 1,
                _ => {}
            }
        }
        m
    }

    /// `longest_path / rounds` for a successful run, zero otherwise.
    pub fn efficiency(&self) -> BigRational {
        if !self.success || self.rounds == 0 {
            return BigRational::zero();
        }
        BigRational::new(BigInt::from(self.longest_path), BigInt::from(self.rounds))
    }

    pub fn contract_satisfaction(&self) -> BigRational {
        if self.node_count == 0 {
            return BigRational::zero();
        }
        BigRational::new(BigInt::from(self.satisfied_nodes), BigInt::from(self.node_count))
    }
}

/// Performance measure used for the gain decomposition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    SuccessRate,
    ContractSatisfaction,
    /// Success weighted by `longest_path / rounds`; 1 means every round ran
    /// a full critical-path layer.
    Efficiency,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success_rate" | "success" => Ok(Metric::SuccessRate),
            "contract_satisfaction" | "contract" => Ok(Metric::ContractSatisfaction),
            "efficiency" => Ok(Metric::Efficiency),
            other => Err(format!("unknown metric {other}")),
        }
    }
}

impl Metric {
    pub fn value(self, m: &RunMetrics) -> BigRational {
        match self {
            Metric::SuccessRate => BigRational::from_integer(BigInt::from(u8::from(m.success))),
            Metric::ContractSatisfaction => m.contract_satisfaction(),
            Metric::Efficiency => m.efficiency(),
        }
    }

    /// Exact mean over `runs`.
    pub fn perf<'a>(self, runs: impl IntoIterator<Item = &'a RunMetrics>) -> BigRational {
        let mut sum = BigRational::zero();
        let mut n = 0u64;
        for m in runs {
            sum += self.value(m);
            n += 1;
        }
        if n == 0 {
            return BigRational::zero();
        }
        sum / BigRational::from_integer(BigInt::from(n))
    }
}

/// Seed for one (task, repetition), independent of the group so paired
/// groups see the same randomness where they consume any.
pub fn run_seed(base: u64, task: &TaskSpec, rep: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(task.seed.to_le_bytes());
    h.update(task.id.as_bytes());
    h.update(rep.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Runs `task` under loop group `group` (G0 to G3).
pub fn simulate_loop(group: Group, task: &TaskSpec, seed: u64) -> Result<RunMetrics, HarnessError> {
    match group.kind() {
        GroupKind::Loop(cfg) => simulate_loop_with(task, cfg, seed),
        GroupKind::Graph(_) => Err(HarnessError::NotALoop(group)),
    }
}

/// Runs one task under one group.
pub fn run_task(group: Group, task: &TaskSpec, seed: u64) -> Result<RunMetrics, HarnessError> {
    match group.kind() {
        GroupKind::Loop(cfg) => simulate_loop_with(task, cfg, seed),
        GroupKind::Graph(levels) => {
            let result =
                run_to_completion(task.plan.clone(), task.executor(), EngineConfig::default().with_recovery(levels))
                    .map_err(|e| HarnessError::Engine { task: task.id.clone(), message: e.to_string() })?;
            Ok(RunMetrics::from_result(&result, task.longest_path()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task: String,
    pub rep: u32,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: Group,
    pub synthetic: bool,
    pub config_hash: String,
    pub runs: Vec<TaskRun>,
}

impl GroupResult {
    pub fn success_rate(&self) -> f64 {
        Metric::SuccessRate.perf(self.runs.iter().map(|r| &r.metrics)).to_f64().unwrap_or(0.0)
    }

    /// Mean and sample standard deviation of rounds (turns for loops).
    pub fn rounds_mean_sd(&self) -> (f64, f64) {
        let xs: Vec<f64> = self.runs.iter().map(|r| r.metrics.rounds as f64).collect();
        mean_sd(&xs)
    }

    pub fn perf(&self, metric: Metric) -> BigRational {
        metric.perf(self.runs.iter().map(|r| &r.metrics))
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Hash of everything that must be identical across groups: tasks, fault
/// scripts, durations, budgets and the loop step cap.
pub fn config_hash(tasks: &[TaskSpec]) -> String {
    let mut h = Sha256::new();
    h.update(STEP_CAP_FACTOR.to_le_bytes());
    for t in tasks {
        h.update(serde_json::to_vec(t).expect("tasks serialize"));
    }
    hex::encode(h.finalize())
}

/// Runs every task `reps` times under `group`. Runs execute in parallel;
/// results come back in (task, rep) order regardless of scheduling.
pub fn run_group(group: Group, tasks: &[TaskSpec], reps: u32, seed: u64) -> Result<GroupResult, HarnessError> {
    let mut jobs: Vec<(usize, u32)> = (0..tasks.len()).flat_map(|t| (0..reps).map(move |r| (t, r))).collect();
    jobs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut runs = jobs
        .par_iter()
        .map(|&(t, rep)| {
            let task = &tasks[t];
            run_task(group, task, run_seed(seed, task, rep))
                .map(|metrics| (t, TaskRun { task: task.id.clone(), rep, metrics }))
        })
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|(t, run)| (*t, run.rep));
    let runs = runs.into_iter().map(|(_, run)| run).collect();
    Ok(GroupResult { group, synthetic: group.is_synthetic(), config_hash: config_hash(tasks), runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ScriptedExecutor;
    use crate::samples::{bugfix_faults, bugfix_plan};

    #[test]
    fn trace_fold_matches_live_counters() {
        let result =
            run_to_completion(bugfix_plan(), ScriptedExecutor::new(bugfix_faults()), EngineConfig::default()).unwrap();
        let live = RunMetrics::from_result(&result, 6);
        assert_eq!(RunMetrics::from_trace(&result.trace, &live), live);
    }

    #[test]
    fn group_runs_are_deterministic() {
        let tasks = generate_tasks(Tier::Medium, 6, 3);
        for g in [Group::G1, Group::G6] {
            assert_eq!(run_group(g, &tasks, 3, 11).unwrap(), run_group(g, &tasks, 3, 11).unwrap());
        }
    }

    #[test]
    fn group_names_parse() {
        assert_eq!("g5".parse::<Group>().unwrap(), Group::G5);
        assert!("G9".parse::<Group>().is_err());
    }
}
