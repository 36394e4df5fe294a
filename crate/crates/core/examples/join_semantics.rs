//! any_of races and all_of joins: a winning candidate skips its siblings,
//! and a group where every candidate fails fails its join.

use graph_harness::samples::bugfix_plan;
use graph_harness::scheduler::{run_to_completion, RecoveryLevels};
use graph_harness::{EngineConfig, FaultScript, ScriptedExecutor};

fn show(label: &str, faults: FaultScript) -> Result<(), Box<dyn std::error::Error>> {
    let config = EngineConfig::default().with_recovery(RecoveryLevels::Retry);
    let result = run_to_completion(bugfix_plan(), ScriptedExecutor::new(faults), config)?;
    let s = |n: &str| result.state.node_state(&n.into());
    println!(
        "{label:<22} fix_A {:<10} fix_B {:<10} run_tests {:<10} report {}",
        s("fix_A"),
        s("fix_B"),
        s("run_tests"),
        s("report")
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    show("no faults", FaultScript::new())?;
    show("fix_A fails once", FaultScript::new().fail("fix_A", "transient", 1))?;
    show("both fixes fail", FaultScript::new().fail("fix_A", "invalid input", 9).fail("fix_B", "invalid input", 9))?;
    show("update_docs fails", FaultScript::new().fail("update_docs", "invalid input", 9))?;
    Ok(())
}
