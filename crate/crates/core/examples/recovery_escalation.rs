//! One failing node under the three recovery levels.
//!
//! A contract fault outlasting the retry budget is fixed by a patch; a
//! persistent fault needs a new plan version.

use graph_harness::samples::bugfix_plan;
use graph_harness::scheduler::{run_to_completion, RecoveryLevels};
use graph_harness::{EngineConfig, FaultScript, ScriptedExecutor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let faults = [
        ("transient x2", FaultScript::new().fail("analyze", "network timeout", 2)),
        ("contract x3", FaultScript::new().fail("analyze", "contract_violation", 3)),
        ("persistent", FaultScript::new().fail("analyze", "rate limit exceeded", 50)),
    ];
    let levels = [RecoveryLevels::Retry, RecoveryLevels::RetryPatch, RecoveryLevels::RetryPatchReplan];

    for (label, script) in &faults {
        for level in levels {
            let config = EngineConfig::default().with_recovery(level);
            let result = run_to_completion(bugfix_plan(), ScriptedExecutor::new(script.clone()), config)?;
            let r = result.state.recovery_counts();
            println!(
                "{label:<13} {:<16} -> {:<50} rounds {:>2}  retry {} patch {} replan {}  plan v{}",
                format!("{level:?}"),
                format!("{:?}", result.status),
                result.rounds(),
                r.retry,
                r.patch,
                r.replan,
                result.state.plan().version()
            );
        }
    }
    Ok(())
}
