//! The statistical-query mechanism: schedule, answers, budget and the
//! mutual-information bound, plus the open-ended vote stream.

use adasub::harness::{bernoulli, Population};
use adasub::mechanisms::{mi_upper_bound, sq_params, BudgetLedger, BudgetMode, SqSession};
use adasub::model::{Symbol, TestQuery};
use adasub::rng::RandomSource;
use adasub::Result;

fn main() -> Result<()> {
    let (n, rounds, tau, delta) = (2000, 20, 0.1, 0.1);
    let params = sq_params(n, rounds, tau, delta)?;
    println!("{params:?}");

    let population = bernoulli(0.3)?;
    let root = RandomSource::new(11);
    let sample = population.draw(n, &mut root.child_named("sample").stream())?;
    let mut session = SqSession::new(
        sample,
        params.epsilon,
        params.votes,
        delta,
        root.child_named("mechanism"),
        BudgetLedger::new(BudgetMode::AlmostSure, 30.0),
    )?;

    let is_one = TestQuery::unary("x = 1", |x: &Symbol| f64::from(u8::from(*x == 1)));
    for t in 1..=rounds {
        match session.answer(&is_one) {
            Ok(y) => println!("t={t:2} answer {y:.4} (truth 0.3)"),
            Err(e) => {
                println!("t={t:2} {e}");
                break;
            }
        }
    }
    let ledger = session.ledger();
    println!("spent {:.4} of {}, MI bound {:.1}", ledger.total(), ledger.limit(), mi_upper_bound(ledger, n));

    // caller-controlled stopping; each vote is charged as it is drawn
    let mut free = SqSession::new(
        population.draw(n, &mut root.child_named("second sample").stream())?,
        params.epsilon,
        params.votes,
        delta,
        root.child_named("sequential"),
        BudgetLedger::unlimited(),
    )?;
    let mut stream = free.sequential(&is_one)?;
    while stream.drawn() < 400 {
        stream.next_vote()?;
    }
    println!("after {} votes the running estimate is {:.4}", stream.drawn(), stream.estimate().unwrap_or(f64::NAN));
    Ok(())
}
