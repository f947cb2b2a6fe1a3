//! Draws answers to a subsampling query and compares them with the exact
//! response law obtained by enumerating every subset of the sample.

use adasub::engine::{exact_response_pmf, uniformize, SubsampleDrawer};
use adasub::model::{Dataset, Real, Sample};
use adasub::rng::RandomSource;
use adasub::Result;

fn main() -> Result<()> {
    let sample = Dataset::new([0.1, 0.4, 0.4, 0.7, 0.9, 0.2, 0.6].map(Real).to_vec())?;

    // is the mean of three distinct sample points at least one half?
    let range = vec![0.0, 1.0];
    let query = adasub::model::Query::deterministic("mean3>=0.5", 3, range, |xs: &[&Real]| {
        usize::from(xs.iter().map(|x| x.0).sum::<f64>() / 3.0 >= 0.5)
    })?;

    let exact = exact_response_pmf(&query, &sample)?;
    println!("exact law over {:?}: {:?}", exact.range(), exact.masses());

    let mut drawer = SubsampleDrawer::new(sample.len());
    let mut rng = RandomSource::new(7).stream();
    let draws = 20_000;
    let mut ones = 0;
    for _ in 0..draws {
        ones += drawer.answer(&query, &sample, &mut rng)?;
    }
    println!("empirical Pr[1] over {draws} draws: {:.4}", ones as f64 / draws as f64);

    // mixing in uniform noise makes every output at least 0.05 likely
    let noisy = uniformize(&query, 0.05)?;
    println!("0.05-uniform law: {:?}", exact_response_pmf(&noisy, &sample)?.masses());
    Ok(())
}
