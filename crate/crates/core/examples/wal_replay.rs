//! Runs the bug-fix workflow into a write-ahead log, then replays it in
//! full and from a prefix.

use graph_harness::persistence::{read_wal, replay, Wal};
use graph_harness::samples::{bugfix_faults, bugfix_plan};
use graph_harness::{Engine, ScriptedExecutor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let wal = Wal::create(dir.path(), "bugfix")?.snapshot_every(4);
    let mut engine = Engine::builder(bugfix_plan(), ScriptedExecutor::new(bugfix_faults())).sink(wal).build()?;
    let status = engine.run()?;
    let live = engine.state().clone();
    println!("run: {status:?}, {} records", live.last_seq());

    let records = read_wal(&dir.path().join("bugfix.wal"))?;
    println!("log holds {} records; first is {}", records.len(), records[0].body.kind());

    let replayed = replay(dir.path(), "bugfix", None)?;
    println!("full replay equals live state: {}", replayed == live);

    for upto in [1, 10, 30] {
        let prefix = replay(dir.path(), "bugfix", Some(upto))?;
        println!(
            "after seq {upto:>2}: round {}, {} executed",
            prefix.round(),
            prefix.count_in(graph_harness::NodeState::Executed)
        );
    }
    Ok(())
}
