//! Runs every acceptance criterion and prints one pass/fail line each.
//! `HJBLAB_CRITERIA=3,11` restricts the run; `HJBLAB_SEED` changes the seed.

use hjblab::bench::{run_criterion, CRITERIA};

fn main() {
    let only: Vec<u32> = std::env::var("HJBLAB_CRITERIA")
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let seed = std::env::var("HJBLAB_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let (mut run, mut failed) = (0, 0);
    for (id, _) in CRITERIA.iter().filter(|(id, _)| only.is_empty() || only.contains(id)) {
        let o = run_criterion(*id, seed);
        println!("{}", o.line());
        run += 1;
        failed += usize::from(!o.pass);
    }
    println!("{}/{run} criteria passed", run - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
