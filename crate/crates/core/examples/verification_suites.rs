//! Runs every randomized verification suite and prints the outcome.

use adasub::verify::Suite;
use adasub::Result;

fn main() -> Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for suite in Suite::ALL {
        let out = suite.run(suite.default_instances(), seed)?;
        println!(
            "{:<34} {:>6} instances {:>3} failed  worst {:+.3e}",
            out.suite, out.instances, out.failed, out.worst
        );
        for note in &out.notes {
            println!("    {note}");
        }
    }
    Ok(())
}
