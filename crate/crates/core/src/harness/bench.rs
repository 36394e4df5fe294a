//! Benchmark runs across groups and the report they produce.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::gains::{compute_gains, Exact, GainReport};
use super::tasks::{generate_parallel_tasks, generate_tasks, FaultFamily, TaskSpec, Tier};
use super::{config_hash, mean_sd, run_group, Group, GroupConfig, GroupResult, HarnessError, Metric};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub groups: Vec<Group>,
    pub tiers: Vec<Tier>,
    /// Tasks per tier.
    pub count: usize,
    pub reps: u32,
    pub seed: u64,
    pub metric: Metric,
    /// Add `count` zero-fault fork-join tasks.
    pub parallel_family: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            groups: Group::ALL[1..].to_vec(),
            tiers: vec![Tier::Medium],
            count: 10,
            reps: 10,
            seed: 0,
            metric: Metric::SuccessRate,
            parallel_family: false,
        }
    }
}

impl BenchConfig {
    pub fn tasks(&self) -> Vec<TaskSpec> {
        let mut tasks: Vec<TaskSpec> =
            self.tiers.iter().flat_map(|t| generate_tasks(*t, self.count, self.seed)).collect();
        if self.parallel_family {
            tasks.extend(generate_parallel_tasks(self.count, self.seed));
        }
        tasks
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub config: GroupConfig,
    pub description: &'static str,
    pub synthetic: bool,
    pub perf: Exact,
    pub success_rate: f64,
    pub mean_rounds: f64,
    pub sd_rounds: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSummary {
    pub task: String,
    pub tier: Tier,
    pub family: FaultFamily,
    pub group: Group,
    pub nodes: usize,
    pub longest_path: usize,
    pub success_rate: f64,
    pub mean_rounds: f64,
    pub sd_rounds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub metric: Metric,
    pub config_hash: String,
    pub groups: BTreeMap<Group, GroupSummary>,
    pub per_task: Vec<TaskSummary>,
    /// Present only when G1 to G6 all ran.
    pub gains: Option<GainReport>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub results: Vec<GroupResult>,
}

impl BenchReport {
    /// Builds a report, refusing if the groups did not run identical tasks,
    /// scripts and caps.
    pub fn from_results(results: Vec<GroupResult>, tasks: &[TaskSpec], metric: Metric) -> Result<Self, HarnessError> {
        let hash = config_hash(tasks);
        if results.iter().any(|r| r.config_hash != hash) {
            return Err(HarnessError::ConfigMismatch);
        }
        let mut groups = BTreeMap::new();
        let mut per_task = Vec::new();
        for r in &results {
            let (mean_rounds, sd_rounds) = r.rounds_mean_sd();
            groups.insert(
                r.group,
                GroupSummary {
                    config: r.group.config(),
                    description: r.group.description(),
                    synthetic: r.synthetic,
                    perf: Exact(r.perf(metric)),
                    success_rate: r.success_rate(),
                    mean_rounds,
                    sd_rounds,
                    runs: r.runs.len(),
                },
            );
            for t in tasks {
                let runs: Vec<_> = r.runs.iter().filter(|x| x.task == t.id).map(|x| &x.metrics).collect();
                let rounds: Vec<f64> = runs.iter().map(|m| m.rounds as f64).collect();
                let (mean_rounds, sd_rounds) = mean_sd(&rounds);
                let ok = runs.iter().filter(|m| m.success).count();
                per_task.push(TaskSummary {
                    task: t.id.clone(),
                    tier: t.tier,
                    family: t.family,
                    group: r.group,
                    nodes: t.plan.len(),
                    longest_path: t.longest_path(),
                    success_rate: if runs.is_empty() { 0.0 } else { ok as f64 / runs.len() as f64 },
                    mean_rounds,
                    sd_rounds,
                });
            }
        }
        let perf: BTreeMap<Group, _> = groups.iter().map(|(g, s)| (*g, s.perf.0.clone())).collect();
        let gains = match compute_gains(&perf) {
            Ok(g) => Some(g),
            Err(HarnessError::MissingGroup(_)) => None,
            Err(e) => return Err(e),
        };
        let mut notes = Vec::new();
        if groups.contains_key(&Group::G0) {
            notes.push("G0 is a synthetic loop reference; only success rate and rounds are meaningful for it".into());
        }
        Ok(Self { metric, config_hash: hash, groups, per_task, gains, notes, results })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `group,ready_size,rounds` rows: how many rounds ran with each |U|.
    pub fn ready_histogram_csv(&self) -> String {
        let mut out = String::from("group,ready_size,rounds\n");
        for r in &self.results {
            let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
            for run in &r.runs {
                for s in &run.metrics.ready_sizes {
                    *hist.entry(*s).or_default() += 1;
                }
            }
            for (size, n) in hist {
                let _ = writeln!(out, "{},{size},{n}", r.group);
            }
        }
        out
    }
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, HarnessError> {
    let tasks = config.tasks();
    let results =
        config.groups.iter().map(|g| run_group(*g, &tasks, config.reps, config.seed)).collect::<Result<Vec<_>, _>>()?;
    BenchReport::from_results(results, &tasks, config.metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_group_has_no_gains() {
        let cfg = BenchConfig { groups: vec![Group::G4], count: 3, reps: 2, ..Default::default() };
        let report = run_bench(&cfg).unwrap();
        assert!(report.gains.is_none());
        assert_eq!(report.groups[&Group::G4].runs, 6);
    }

    #[test]
    fn mismatched_task_sets_refuse_to_render() {
        let a = generate_tasks(Tier::Simple, 3, 1);
        let b = generate_tasks(Tier::Simple, 3, 2);
        let results = vec![run_group(Group::G3, &a, 1, 0).unwrap(), run_group(Group::G4, &b, 1, 0).unwrap()];
        assert_eq!(
            BenchReport::from_results(results, &a, Metric::SuccessRate).unwrap_err(),
            HarnessError::ConfigMismatch
        );
    }

    #[test]
    fn empty_task_list_gives_an_empty_report() {
        let results = vec![run_group(Group::G1, &[], 3, 0).unwrap()];
        let report = BenchReport::from_results(results, &[], Metric::SuccessRate).unwrap();
        assert_eq!(report.groups[&Group::G1].runs, 0);
        assert!(report.per_task.is_empty());
    }
}
