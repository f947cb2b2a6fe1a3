//! The statistical-query mechanism: squash the query into `[ε, 1 − ε]`, take
//! `k` Bernoulli votes at uniformly drawn sample points, answer their mean.

use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, Element, Sample, TestQuery, Transcript};
use crate::rng::{index_from_word, unit_from_word, RandomSource};

use super::cost::cost_hp;
use super::ledger::BudgetLedger;

/// Upper clamp on the squash level.
pub const MAX_SQUASH: f64 = 0.49;

/// Leading constants for the SQ schedule. The accuracy theorem fixes them
/// only up to `O(·)`; these defaults are the ones the acceptance suite runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SqConstants {
    pub c_eps: f64,
    pub c_k: f64,
}

impl Default for SqConstants {
    fn default() -> Self {
        SqConstants { c_eps: 1.0, c_k: 8.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SqParams {
    pub epsilon: f64,
    pub votes: usize,
    /// `√(T·ln(T/δ)·ln(1/δ)) / τ²`: the sample size the accuracy guarantee
    /// asks for, with leading constant 1. Advisory only.
    pub advisory_min_n: f64,
}

/// `ε = min(c_ε·ln(2/δ)/n, 0.49)` and `k = ⌈c_k·ln(4T/δ)/τ²⌉`.
pub fn sq_params(n: usize, rounds: usize, tau: f64, delta: f64) -> Result<SqParams> {
    sq_params_with(n, rounds, tau, delta, SqConstants::default())
}

pub fn sq_params_with(n: usize, rounds: usize, tau: f64, delta: f64, c: SqConstants) -> Result<SqParams> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::domain(format!("τ = {tau} outside (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("δ = {delta} outside (0, 1)")));
    }
    if rounds < 1 || n < 1 {
        return Err(Error::domain(format!("need T ≥ 1 and n ≥ 1, got T={rounds}, n={n}")));
    }
    let t = rounds as f64;
    let epsilon = (c.c_eps * (2.0 / delta).ln() / n as f64).min(MAX_SQUASH);
    let votes = (c.c_k * (4.0 * t / delta).ln() / (tau * tau)).ceil() as usize;
    let advisory_min_n = (t * (t / delta).ln().max(0.0) * (1.0 / delta).ln()).sqrt() / (tau * tau);
    Ok(SqParams {
        epsilon,
        votes: votes.max(1),
        advisory_min_n,
    })
}

/// Pointwise clamp into `[ε, 1 − ε]`.
#[inline]
pub fn squash_value(v: f64, epsilon: f64) -> f64 {
    if v <= epsilon {
        epsilon
    } else if v >= 1.0 - epsilon {
        1.0 - epsilon
    } else {
        v
    }
}

fn check_squash(epsilon: f64) -> Result<()> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::domain(format!("squash level {epsilon} outside [0, 1/2)")));
    }
    Ok(())
}

/// The squashed query `φ′`. Idempotent and monotone.
pub fn squash<X: Element>(phi: &TestQuery<X>, epsilon: f64) -> Result<TestQuery<X>> {
    check_squash(epsilon)?;
    if phi.arity() != 1 {
        return Err(Error::InvalidQuery("statistical queries are unary".into()));
    }
    Ok(phi.map(format!("{}|sq({epsilon})", phi.label()), move |v| squash_value(v, epsilon)))
}

/// One vote: the sample position it looked at and its Bernoulli outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote {
    pub position: usize,
    pub value: bool,
}

/// 32-bit words consumed per vote: one u64 for the position, one for the
/// Bernoulli draw. Fixed, so any vote can be regenerated by seeking.
const WORDS_PER_VOTE: u64 = 4;

/// An SQ-mechanism session over one sample.
#[derive(Clone, Debug)]
pub struct SqSession<X> {
    data: Dataset<X>,
    epsilon: f64,
    votes: usize,
    delta: f64,
    source: RandomSource,
    transcript: Transcript,
    ledger: BudgetLedger,
}

impl<X: Element> SqSession<X> {
    pub fn new(
        data: Dataset<X>,
        epsilon: f64,
        votes: usize,
        delta: f64,
        source: RandomSource,
        ledger: BudgetLedger,
    ) -> Result<Self> {
        check_squash(epsilon)?;
        if votes < 1 {
            return Err(Error::domain("need at least one vote per query"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("δ = {delta} outside (0, 1)")));
        }
        Ok(SqSession {
            data,
            epsilon,
            votes,
            delta,
            source,
            transcript: Transcript::new(),
            ledger,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn votes(&self) -> usize {
        self.votes
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn sample_size(&self) -> usize {
        self.data.len()
    }

    /// Charge for one vote: a unary, ε-uniform query with `|Y| = 2`.
    pub fn vote_cost(&self) -> Result<f64> {
        cost_hp(self.data.len(), 2, self.epsilon, self.delta)
    }

    fn query_source(&self, t: usize) -> RandomSource {
        self.source.child(t as u64)
    }

    /// Answers `phi` with the mean of `k` votes. In almost-sure mode the
    /// `k` vote charges are taken up front; a refusal consumes nothing.
    pub fn answer(&mut self, phi: &TestQuery<X>) -> Result<f64> {
        if phi.arity() != 1 {
            return Err(Error::InvalidQuery("statistical queries are unary".into()));
        }
        let charge = self.votes as f64 * self.vote_cost()?;
        if !self.ledger.admits(charge) {
            return Err(Error::BudgetRefused {
                requested: charge,
                remaining: self.ledger.remaining(),
            });
        }
        let t = self.transcript.len() + 1;
        let mut rng = self.query_source(t).stream();
        let n = self.data.len();
        let mut ones = 0usize;
        for _ in 0..self.votes {
            let x = self.data.get(index_from_word(rng.next_u64(), n));
            let bias = squash_value(phi.value(&[x])?, self.epsilon);
            if unit_from_word(rng.next_u64()) < bias {
                ones += 1;
            }
        }
        self.ledger.try_charge(charge)?;
        let y = ones as f64 / self.votes as f64;
        self.transcript.push(phi.label(), y, charge);
        Ok(y)
    }

    /// Regenerates vote `i` of query `t` in isolation.
    pub fn replay_vote(&self, phi: &TestQuery<X>, t: usize, i: usize) -> Result<Vote> {
        let mut rng = self.query_source(t).stream_at(i as u64, WORDS_PER_VOTE);
        let position = index_from_word(rng.next_u64(), self.data.len());
        let bias = squash_value(phi.value(&[self.data.get(position)])?, self.epsilon);
        Ok(Vote {
            position,
            value: unit_from_word(rng.next_u64()) < bias,
        })
    }

    /// Starts an open-ended run of votes for `phi`; the caller decides when
    /// to stop. Each vote is charged as it is drawn. No accuracy guarantee
    /// is attached to a caller-chosen stopping rule.
    pub fn sequential<'s>(&'s mut self, phi: &'s TestQuery<X>) -> Result<VoteStream<'s, X>> {
        if phi.arity() != 1 {
            return Err(Error::InvalidQuery("statistical queries are unary".into()));
        }
        let cost = self.vote_cost()?;
        let t = self.transcript.len() + 1;
        let rng = self.query_source(t).stream();
        Ok(VoteStream {
            session: self,
            phi,
            rng,
            cost,
            drawn: 0,
            ones: 0,
            charged: 0.0,
        })
    }
}

/// Votes drawn one at a time; see [`SqSession::sequential`].
pub struct VoteStream<'s, X> {
    session: &'s mut SqSession<X>,
    phi: &'s TestQuery<X>,
    rng: crate::rng::Stream,
    cost: f64,
    drawn: usize,
    ones: usize,
    charged: f64,
}

impl<X: Element> VoteStream<'_, X> {
    pub fn next_vote(&mut self) -> Result<Vote> {
        self.session.ledger.try_charge(self.cost)?;
        self.charged += self.cost;
        let n = self.session.data.len();
        let position = index_from_word(self.rng.next_u64(), n);
        let bias = squash_value(self.phi.value(&[self.session.data.get(position)])?, self.session.epsilon);
        let value = unit_from_word(self.rng.next_u64()) < bias;
        self.drawn += 1;
        self.ones += usize::from(value);
        Ok(Vote { position, value })
    }

    pub fn drawn(&self) -> usize {
        self.drawn
    }

    /// Running mean of the votes so far (`None` before the first vote).
    pub fn estimate(&self) -> Option<f64> {
        (self.drawn > 0).then(|| self.ones as f64 / self.drawn as f64)
    }

    /// Ends the run, recording the running mean as the response.
    pub fn finish(self) -> Result<f64> {
        let y = self
            .estimate()
            .ok_or_else(|| Error::Precondition("no votes were drawn".into()))?;
        self.session.transcript.push(self.phi.label(), y, self.charged);
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::ledger::BudgetMode;
    use crate::model::{Real, Symbol};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn session(data: Vec<Symbol>, epsilon: f64, votes: usize, ledger: BudgetLedger) -> SqSession<Symbol> {
        SqSession::new(Dataset::new(data).unwrap(), epsilon, votes, 0.1, RandomSource::new(42), ledger).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let p = sq_params(15_000, 1000, 0.1, 0.1).unwrap();
        assert!(close(p.epsilon, 20f64.ln() / 15_000.0, 1e-18));
        assert!(close(p.epsilon, 2.0e-4, 1e-5));
        // ⌈800·ln 40000⌉ = ⌈8477.31⌉
        assert_eq!(p.votes, 8478);

        let p = sq_params(1000, 1, 1.0 - 1e-9, 1.0 - 1e-9).unwrap();
        assert_eq!(p.votes, 12);
        assert!(close(p.epsilon, 2f64.ln() / 1000.0, 1e-9));

        assert!(sq_params(100, 10, 1.0, 0.1).is_err());
        assert!(sq_params(100, 10, 0.1, 0.0).is_err());
        // tiny samples hit the squash ceiling
        assert_eq!(sq_params(1, 10, 0.1, 0.01).unwrap().epsilon, MAX_SQUASH);
    }

    #[test]
    fn squash_examples() {
        let id = TestQuery::unary("id", |x: &Real| x.0);
        let sq = squash(&id, 0.1).unwrap();
        assert_eq!(sq.value(&[&Real(0.0)]).unwrap(), 0.1);
        assert_eq!(sq.value(&[&Real(0.5)]).unwrap(), 0.5);
        assert_eq!(sq.value(&[&Real(1.0)]).unwrap(), 0.9);
        assert!(squash(&id, 0.5).is_err());
        let pair = TestQuery::<Real>::constant(2, 0.5).unwrap();
        assert!(squash(&pair, 0.1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn squash_is_idempotent_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, eps in 0.0f64..0.5) {
            let once = squash_value(a, eps);
            proptest::prop_assert_eq!(squash_value(once, eps), once);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(squash_value(lo, eps) <= squash_value(hi, eps));
        }
    }

    #[test]
    fn zero_query_without_squash_answers_zero() {
        let mut s = session(vec![0, 1, 1, 0], 0.0, 50, BudgetLedger::unlimited());
        let zero = TestQuery::<Symbol>::constant(1, 0.0).unwrap();
        for _ in 0..20 {
            assert_eq!(s.answer(&zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn half_query_concentrates() {
        let mut s = session(vec![0, 1], 0.0, 1_000_000, BudgetLedger::unlimited());
        let half = TestQuery::<Symbol>::constant(1, 0.5).unwrap();
        // binomial sd is 5e-4; 0.002 is four of them
        assert!(close(s.answer(&half).unwrap(), 0.5, 0.002));
    }

    #[test]
    fn squash_floor_shows_in_answers() {
        let mut s = session(vec![0, 1], 0.1, 1_000_000, BudgetLedger::unlimited());
        let zero = TestQuery::<Symbol>::constant(1, 0.0).unwrap();
        assert!(close(s.answer(&zero).unwrap(), 0.1, 0.0015));
    }

    #[test]
    fn answers_are_multiples_of_one_over_k() {
        let mut s = session(vec![0, 1, 1, 0, 1], 0.05, 37, BudgetLedger::unlimited());
        let id = TestQuery::unary("id", |x: &Symbol| f64::from(*x));
        for _ in 0..50 {
            let y = s.answer(&id).unwrap();
            let scaled = y * 37.0;
            assert!(close(scaled, scaled.round(), 1e-9));
            assert!((0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn unbiased_over_repetitions() {
        let data = vec![1u32, 0, 0, 1, 1, 0, 0, 0];
        let id = TestQuery::unary("id", |x: &Symbol| f64::from(*x));
        let eps = 0.05;
        let k = 25;
        let target = data.iter().map(|x| squash_value(f64::from(*x), eps)).sum::<f64>() / data.len() as f64;
        let mut s = session(data, eps, k, BudgetLedger::unlimited());
        let reps = 10_000;
        let mean = (0..reps).map(|_| s.answer(&id).unwrap()).sum::<f64>() / reps as f64;
        // each answer is a mean of k iid Bernoulli(target) votes
        let sd = (target * (1.0 - target) / (k * reps) as f64).sqrt();
        assert!((mean - target).abs() < 4.0 * sd);
    }

    #[test]
    fn charges_and_refusals() {
        let data = vec![0u32; 100];
        let probe = session(data.clone(), 0.1, 10, BudgetLedger::unlimited());
        let per_query = 10.0 * probe.vote_cost().unwrap();
        assert!(close(per_query, 10.0 * cost_hp(100, 2, 0.1, 0.1).unwrap(), 1e-15));

        let mut s = session(data, 0.1, 10, BudgetLedger::new(BudgetMode::AlmostSure, 2.5 * per_query));
        let q = TestQuery::<Symbol>::constant(1, 0.3).unwrap();
        s.answer(&q).unwrap();
        s.answer(&q).unwrap();
        let before = (s.transcript().clone(), s.ledger().clone());
        assert!(matches!(s.answer(&q), Err(Error::BudgetRefused { .. })));
        assert_eq!((s.transcript().clone(), s.ledger().clone()), before);
        assert!(close(s.ledger().total(), s.transcript().total_cost(), 1e-15));
    }

    #[test]
    fn votes_replay_in_isolation() {
        let data: Vec<Symbol> = (0..50).map(|i| i % 3).collect();
        let q = TestQuery::unary("third", |x: &Symbol| f64::from(*x) / 2.0);
        let mut s = session(data, 0.05, 200, BudgetLedger::unlimited());
        let live = {
            let mut stream = s.sequential(&q).unwrap();
            let votes: Vec<Vote> = (0..20).map(|_| stream.next_vote().unwrap()).collect();
            stream.finish().unwrap();
            votes
        };
        for (i, v) in live.iter().enumerate() {
            assert_eq!(s.replay_vote(&q, 1, i).unwrap(), *v);
        }
        assert_eq!(s.transcript().len(), 1);
    }

    #[test]
    fn sequential_charges_per_vote() {
        let mut s = session(vec![1, 0, 1], 0.1, 10, BudgetLedger::unlimited());
        let q = TestQuery::unary("id", |x: &Symbol| f64::from(*x));
        let cost = s.vote_cost().unwrap();
        let mut stream = s.sequential(&q).unwrap();
        assert!(stream.estimate().is_none());
        for _ in 0..7 {
            stream.next_vote().unwrap();
        }
        assert_eq!(stream.drawn(), 7);
        stream.finish().unwrap();
        assert!(close(s.ledger().total(), 7.0 * cost, 1e-15));
    }
}
