use graph_harness::harness::{
    generate_parallel_tasks, generate_tasks, run_group, run_task, without_faults, FaultFamily, Group, Metric, Tier,
};

#[test]
fn graph_groups_take_longest_path_rounds_without_faults() {
    let tasks = without_faults(&generate_parallel_tasks(6, 11));
    for task in &tasks {
        let m = run_task(Group::G4, task, 1).unwrap();
        assert!(m.success, "{}", task.id);
        assert_eq!(m.rounds as usize, task.longest_path(), "{}", task.id);
        for g in [Group::G1, Group::G2, Group::G3] {
            let loop_run = run_task(g, task, 1).unwrap();
            assert!(loop_run.rounds > m.rounds, "{g:?} on {}", task.id);
        }
    }
}

#[test]
fn scaffolded_loop_takes_one_step_per_node() {
    for task in without_faults(&generate_tasks(Tier::Simple, 8, 3)) {
        let m = run_task(Group::G3, &task, 9).unwrap();
        assert!(m.success);
        assert_eq!(m.rounds as usize, task.plan.len(), "{}", task.id);
    }
}

#[test]
fn medium_tier_has_alternatives() {
    let tasks = generate_tasks(Tier::Medium, 20, 7);
    assert!(tasks.iter().any(|t| t.plan.nodes().values().any(|c| c.any_of_group.is_some())));
    assert!(tasks.iter().all(|t| (4..=8).contains(&t.plan.len())), "medium plan sizes");
}

#[test]
fn patching_helps_contract_faults() {
    let tasks: Vec<_> = generate_tasks(Tier::Medium, 30, 5)
        .into_iter()
        .filter(|t| t.family == FaultFamily::ContractPatchable)
        .collect();
    assert!(!tasks.is_empty());
    let g4 = run_group(Group::G4, &tasks, 2, 1).unwrap().perf(Metric::SuccessRate);
    let g5 = run_group(Group::G5, &tasks, 2, 1).unwrap().perf(Metric::SuccessRate);
    assert!(g5 > g4, "G5 {g5} vs G4 {g4}");
}

#[test]
fn groups_are_deterministic_per_seed() {
    let tasks = generate_tasks(Tier::Simple, 5, 21);
    for g in Group::ALL {
        assert_eq!(run_group(g, &tasks, 3, 4).unwrap(), run_group(g, &tasks, 3, 4).unwrap(), "{g:?}");
    }
}
