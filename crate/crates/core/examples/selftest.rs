//! Runs the built-in checks that need no data files.

fn main() {
    let results = etd_core::cli::run_selftest();
    for r in &results {
        println!("{}", r.line());
    }
    std::process::exit(if results.iter().all(|r| r.passed) { 0 } else { 2 });
}
