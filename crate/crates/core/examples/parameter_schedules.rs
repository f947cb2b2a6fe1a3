//! How the mechanisms' parameters scale with the sample size and the
//! number of rounds.

use adasub::mechanisms::{cost_hp, median_params, sq_params};
use adasub::Result;

fn main() -> Result<()> {
    let (tau, delta) = (0.1, 0.1);
    println!("{:>7} {:>6} {:>10} {:>7} {:>12} {:>12}", "n", "T", "epsilon", "k", "advisory n", "budget");
    for rounds in [10, 100, 1000] {
        for n in [1_000, 15_000, 100_000] {
            let p = sq_params(n, rounds, tau, delta)?;
            let budget = (rounds * p.votes) as f64 * cost_hp(n, 2, p.epsilon, delta)?;
            println!(
                "{n:>7} {rounds:>6} {:>10.3e} {:>7} {:>12.0} {:>12.3}",
                p.epsilon, p.votes, p.advisory_min_n, budget
            );
        }
    }
    println!();
    println!("{:>6} {:>8} {:>6} {:>12}", "T", "|R|", "k", "advisory n");
    for rounds in [10, 100, 1000] {
        for r in [16, 1024] {
            let arities = vec![2; rounds];
            let p = median_params(rounds, &arities, &[r], delta)?;
            println!("{rounds:>6} {r:>8} {:>6} {:>12.0}", p.groups, p.advisory_min_n);
        }
    }
    Ok(())
}
