//! The ten acceptance criteria, one line each. Exits nonzero if any fails.
//! `ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.

use std::process::ExitCode;

use reduction_lab::acceptance::{parse_ids, run_criteria};

fn main() -> ExitCode {
    let ids = match parse_ids(&std::env::var("ACCEPTANCE_ONLY").unwrap_or_default()) {
        Ok(ids) => ids,
        Err(e) => {
            eprintln!("ACCEPTANCE_ONLY: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    println!("running acceptance criteria");
    let results = run_criteria(&ids, |r| println!("{}", r.line()));
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
