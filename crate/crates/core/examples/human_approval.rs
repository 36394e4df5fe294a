//! A high_write step waits for approval: approved, cancelled, and a human
//! who never answers.

use graph_harness::samples::approval_plan;
use graph_harness::scheduler::{ApprovalDecision, NeverRespond};
use graph_harness::{Engine, EngineConfig, FaultScript, NodeConfig, NodeId, ScriptedExecutor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EngineConfig { human_timeout_ms: 5_000, ..EngineConfig::default() };

    let approve = |node: &NodeId, _: &NodeConfig, _: u64| {
        println!("asked to approve {node}: yes");
        ApprovalDecision::Approve
    };
    let mut engine = Engine::builder(approval_plan(), ScriptedExecutor::new(FaultScript::new()))
        .config(config.clone())
        .approval(approve)
        .build()?;
    println!("approved  -> {:?}", engine.run()?);

    let cancel = |_: &NodeId, _: &NodeConfig, _: u64| ApprovalDecision::Cancel;
    let mut engine = Engine::builder(approval_plan(), ScriptedExecutor::new(FaultScript::new()))
        .config(config.clone())
        .approval(cancel)
        .build()?;
    println!("cancelled -> {:?}", engine.run()?);

    let mut engine = Engine::builder(approval_plan(), ScriptedExecutor::new(FaultScript::new()))
        .config(config)
        .approval(NeverRespond)
        .build()?;
    let status = engine.run()?;
    println!("no answer -> {status:?} at t={} ms", engine.now());
    Ok(())
}
