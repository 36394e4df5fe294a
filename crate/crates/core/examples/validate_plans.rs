//! Loads every plan under `fixtures/` and reports which checks fail.

use std::path::Path;

use graph_harness::plan::{parse_plan, PredicateRegistry};
use graph_harness::validate_plan;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().contains("plan") || n.to_string_lossy().starts_with("invalid"))
        })
        .collect();
    paths.sort();

    for path in paths {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let plan = match parse_plan(&std::fs::read(&path)?) {
            Ok(p) => p,
            Err(e) => {
                println!("{name}: parse error: {e}");
                continue;
            }
        };
        let report = validate_plan(&plan, &PredicateRegistry::new());
        if report.ok {
            println!("{name}: ok");
        } else {
            println!("{name}: fails {:?}", report.failed_checks());
        }
    }
    Ok(())
}
