//! One line per acceptance criterion; exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use qlab_bench::checks;

fn main() -> ExitCode {
    let mut failed = 0;
    for id in 1..=10 {
        let start = Instant::now();
        let r = checks::run_check(id).expect("known id");
        println!("{r} ({:.1}s)", start.elapsed().as_secs_f64());
        if !r.passed {
            failed += 1;
        }
    }
    println!("{} of 10 criteria pass", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
