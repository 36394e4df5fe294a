//! Runs G1 to G6 on generated tasks and prints the gain decomposition.

use graph_harness::harness::{run_bench, BenchConfig, Group, Metric, Tier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = BenchConfig {
        groups: Group::ALL[1..].to_vec(),
        tiers: vec![Tier::Simple, Tier::Medium, Tier::Complex],
        count: 10,
        reps: 5,
        seed: 7,
        metric: Metric::SuccessRate,
        parallel_family: false,
    };
    let report = run_bench(&config)?;
    for (group, s) in &report.groups {
        println!(
            "{group} {:<40} success {:.3}  rounds {:.2} ± {:.2}",
            s.description, s.success_rate, s.mean_rounds, s.sd_rounds
        );
    }
    let gains = report.gains.as_ref().expect("all six groups ran");
    let names = ["plan", "scaffold", "graph", "patch", "replan"];
    for (name, g) in names.iter().zip(gains.gains()) {
        println!("G_{name:<8} = {g}");
    }
    println!("G_total    = {}", gains.g_total.0);

    let parallel = BenchConfig { tiers: vec![], parallel_family: true, metric: Metric::Efficiency, ..config };
    let report = run_bench(&parallel)?;
    let gains = report.gains.as_ref().expect("all six groups ran");
    println!("fault-free fork-join tasks, efficiency: G_graph = {:.3}", gains.g_graph.to_f64());
    Ok(())
}
