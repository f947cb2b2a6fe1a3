//! The approximate-median mechanism answering a few queries of different
//! arities, each result checked against the exact population law.

use adasub::harness::{discretized_gaussian, linear_grid, Population};
use adasub::mechanisms::{approximate_median_margin, median_params, BudgetLedger, MedianSession};
use adasub::model::{Query, Real};
use adasub::rng::RandomSource;
use adasub::Result;

fn mean_on_grid(w: usize, grid: Vec<f64>) -> Result<Query<Real>> {
    let g = grid.clone();
    Query::deterministic(format!("mean{w}"), w, grid, move |xs: &[&Real]| {
        let m = xs.iter().map(|x| x.0).sum::<f64>() / xs.len() as f64;
        g.partition_point(|y| *y < m).min(g.len() - 1)
    })
}

fn main() -> Result<()> {
    let population = discretized_gaussian(linear_grid(-6.0, 6.0, 25)?, 1.0, 2.0)?;
    let grid = linear_grid(-4.0, 4.0, 33)?;
    let arities = [1, 2, 3];
    let params = median_params(arities.len(), &arities, &[grid.len()], 0.1)?;
    let n = (2.0 * params.advisory_min_n).ceil() as usize;
    println!("k = {} groups, n = {n}", params.groups);

    let root = RandomSource::new(3);
    let sample = population.draw(n, &mut root.child_named("sample").stream())?;
    let mut session = MedianSession::new(&sample, params.groups, root.child_named("mechanism"), BudgetLedger::unlimited())?;
    for w in arities {
        let q = mean_on_grid(w, grid.clone())?;
        let out = session.answer_detailed(&q)?;
        let margin = approximate_median_margin(&population.response_law(&q)?, out.value);
        println!(
            "{}: answer {:+.2}, side mass {:.3}, votes for 'at least' per step {:?}, cost {:.3}",
            q.label(),
            out.value,
            margin,
            out.tallies,
            out.cost
        );
    }
    Ok(())
}
