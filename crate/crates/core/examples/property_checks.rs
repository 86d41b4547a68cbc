//! Runs the causality, dense-oracle, gradient, reachability and dropout
//! suites and prints one line per suite.

fn main() -> dispatcher::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for outcome in dispatcher::checks::run_all(seed)? {
        println!("{}", outcome.line());
    }
    Ok(())
}
