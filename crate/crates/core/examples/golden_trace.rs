//! The ten-node bug-fix workflow with one transient failure on `fix_A`.
//!
//! Prints each round's ready set and the final node states.

use graph_harness::samples::{bugfix_faults, bugfix_plan};
use graph_harness::scheduler::run_to_completion;
use graph_harness::{EngineConfig, ScriptedExecutor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let result = run_to_completion(bugfix_plan(), ScriptedExecutor::new(bugfix_faults()), EngineConfig::default())?;

    for set in result.state.ready_history() {
        let names: Vec<&str> = set.members.iter().map(|n| n.as_str()).collect();
        println!("round {}: |U|={} {:?}", set.round, set.len(), names);
    }
    for (node, rt) in result.state.runtimes() {
        println!("{node:>13}  {}", rt.state);
    }
    println!("status: {:?}", result.status);
    println!("ready-set sizes: {:?}", result.ready_sizes());
    println!("trace records: {}", result.trace.len());
    Ok(())
}
