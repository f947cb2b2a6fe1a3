//! The adaptive correlation attack against the exact sample mean and
//! against the subsampling mechanism, at a sample size where the
//! mechanism's guarantee applies.

use adasub::harness::{run_sq_experiment, Cube, RandomCorrelation, Settings, SqMechanism};
use adasub::mechanisms::sq_params;
use adasub::Result;

fn main() -> Result<()> {
    let (rounds, tau, delta) = (200, 0.2, 0.1);
    let params = sq_params(1, rounds, tau, delta)?;
    let n = params.advisory_min_n.ceil() as usize;
    let cube = Cube::uniform(rounds)?;
    let settings = Settings::new(21, 10, n);
    let schedule = sq_params(n, rounds, tau, delta)?;
    println!("n = {n}, k = {}, epsilon = {:.2e}", schedule.votes, schedule.epsilon);

    for mechanism in [
        SqMechanism::Naive,
        SqMechanism::Subsampling {
            epsilon: schedule.epsilon,
            votes: schedule.votes,
            delta,
        },
    ] {
        let report = run_sq_experiment(&settings, &cube, mechanism, tau, |_| RandomCorrelation::new(rounds))?;
        let s = &report.summary;
        println!(
            "{:>6}: mean test gap {:.4}, max answer bias {:.4}, trials within bound {}/{}",
            s.mechanism,
            s.mean_test_gap.unwrap_or(f64::NAN),
            s.max_bias,
            s.trials_all_within,
            s.trials
        );
    }
    Ok(())
}
