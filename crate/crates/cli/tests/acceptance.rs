//! Runs the acceptance suite twice with the same seed, once on a single worker
//! thread and once on the default pool, and prints one line per criterion.
//! Runs without the test harness so the lines always reach the output.

use glevy_cli::suite::{run_suite, SuiteRun};

const SEED: u64 = 20240229;

fn run_on(threads: usize) -> SuiteRun {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_suite(SEED))
        .unwrap()
}

fn main() {
    let first = run_on(0);
    for line in first.lines() {
        println!("{line}");
    }
    for t in &first.timings {
        println!(
            "timing {} {:.1}s (limit {:.0}s) {}",
            t.name,
            t.seconds,
            t.limit,
            if t.passed { "PASS" } else { "FAIL" }
        );
    }
    let second = run_on(1);
    let a = first
        .clone()
        .into_report(String::new())
        .deterministic_json();
    let b = second.into_report(String::new()).deterministic_json();
    let identical = a == b;
    println!(
        "criterion 12 {} byte-identical reports across reruns ({} bytes)",
        if identical { "PASS" } else { "FAIL" },
        a.len()
    );

    let failed: Vec<String> = first
        .criteria
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.line())
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
    assert!(
        first.timings.iter().all(|t| t.passed),
        "{:?}",
        first.timings
    );
    assert!(identical, "reports differ between reruns");
}
