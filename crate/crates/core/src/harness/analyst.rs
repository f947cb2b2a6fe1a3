//! Adaptive analysts. An analyst sees only the responses so far, never the
//! sample: the interface has no way to hand it one.
//!
//! ```compile_fail
//! use adasub::harness::Analyst;
//! use adasub::model::Dataset;
//! // `next_query` takes responses, not data; this does not type-check.
//! fn peek<A: Analyst>(a: &mut A, s: &Dataset<A::Element>, src: &adasub::rng::RandomSource) {
//!     let _ = a.next_query(1, s, src);
//! }
//! ```

use crate::error::{Error, Result};
use crate::model::{Query, SignVector, TestQuery};
use crate::rng::RandomSource;

use super::population::Scalar;

/// A strategy that picks each query from the previous responses.
///
/// `history` holds `y_1, …, y_{t−1}`; a refused query shows up as NaN.
/// Implementations must be deterministic given `source`.
pub trait Analyst: Send {
    type Element: crate::model::Element;
    type Query;

    fn rounds(&self) -> usize;

    fn next_query(&mut self, t: usize, history: &[f64], source: &RandomSource) -> Result<Self::Query>;

    /// Tests posed after the last round.
    fn tests(&mut self, history: &[f64], source: &RandomSource) -> Result<Vec<TestQuery<Self::Element>>>;
}

/// Replays a fixed list, ignoring responses. Tests are the list itself.
#[derive(Clone, Debug)]
pub struct FixedAnalyst<X> {
    queries: Vec<TestQuery<X>>,
    rounds: usize,
}

impl<X: crate::model::Element> FixedAnalyst<X> {
    /// One round per query.
    pub fn new(queries: Vec<TestQuery<X>>) -> Result<Self> {
        let rounds = queries.len();
        Self::cycling(queries, rounds)
    }

    /// `rounds` rounds, cycling through the list.
    pub fn cycling(queries: Vec<TestQuery<X>>, rounds: usize) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::domain("a fixed analyst needs at least one query"));
        }
        if rounds == 0 {
            return Err(Error::domain("need at least one round"));
        }
        Ok(FixedAnalyst { queries, rounds })
    }
}

impl<X: crate::model::Element> Analyst for FixedAnalyst<X> {
    type Element = X;
    type Query = TestQuery<X>;

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn next_query(&mut self, t: usize, _history: &[f64], _source: &RandomSource) -> Result<TestQuery<X>> {
        Ok(self.queries[(t - 1) % self.queries.len()].clone())
    }

    fn tests(&mut self, _history: &[f64], _source: &RandomSource) -> Result<Vec<TestQuery<X>>> {
        Ok(self.queries.clone())
    }
}

/// The classic overfitting attack on a `d`-dimensional sign cube: ask for
/// every coordinate's mean, then test `Ind[Σ_t s_t·x_t > 0]` with
/// `s_t = sign(y_t − center)`. Ties and refusals count as +1.
#[derive(Clone, Debug)]
pub struct RandomCorrelation {
    dim: usize,
    center: f64,
}

impl RandomCorrelation {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_center(dim, 0.5)
    }

    /// `center` should be the coordinates' population mean.
    pub fn with_center(dim: usize, center: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("need at least one round"));
        }
        Ok(RandomCorrelation { dim, center })
    }

    pub fn signs(&self, history: &[f64]) -> SignVector {
        SignVector::from_fn(self.dim, |i| !(history[i] < self.center))
    }
}

impl Analyst for RandomCorrelation {
    type Element = SignVector;
    type Query = TestQuery<SignVector>;

    fn rounds(&self) -> usize {
        self.dim
    }

    fn next_query(&mut self, t: usize, _history: &[f64], _source: &RandomSource) -> Result<TestQuery<SignVector>> {
        Ok(TestQuery::coordinate(t - 1))
    }

    fn tests(&mut self, history: &[f64], _source: &RandomSource) -> Result<Vec<TestQuery<SignVector>>> {
        if history.len() != self.dim {
            return Err(Error::Precondition(format!(
                "expected {} responses, got {}",
                self.dim,
                history.len()
            )));
        }
        Ok(vec![TestQuery::signed_sum(self.signs(history))])
    }
}

/// Statistic a median query applies to its `w` arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Min,
    Max,
}

impl Statistic {
    const ALL: [Statistic; 3] = [Statistic::Mean, Statistic::Min, Statistic::Max];

    fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Min => "min",
            Statistic::Max => "max",
        }
    }

    fn apply(self, xs: impl Iterator<Item = f64>) -> f64 {
        match self {
            Statistic::Mean => {
                let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
                sum / count as f64
            }
            Statistic::Min => xs.fold(f64::INFINITY, f64::min),
            Statistic::Max => xs.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Adaptive median queries: round `t` asks for the mean, minimum or
/// maximum of `w_t ∈ {1, …, max_arity}` elements, reported on a grid of
/// `grid_points` values with the given spacing, centred on the previous
/// answer to the same statistic (or on `start`). Arity and statistic cycle
/// independently. The final test is `Ind[x ≤ y_T]`.
#[derive(Clone, Debug)]
pub struct MedianWalk {
    rounds: usize,
    max_arity: usize,
    grid_points: usize,
    spacing: f64,
    start: f64,
}

impl MedianWalk {
    pub fn new(rounds: usize, max_arity: usize, grid_points: usize, spacing: f64, start: f64) -> Result<Self> {
        if rounds == 0 || max_arity == 0 {
            return Err(Error::domain("need at least one round and positive arity"));
        }
        if grid_points < 1 || !(spacing > 0.0) || !start.is_finite() {
            return Err(Error::domain("grid needs ≥ 1 point, positive spacing and a finite start"));
        }
        Ok(MedianWalk {
            rounds,
            max_arity,
            grid_points,
            spacing,
            start,
        })
    }

    pub fn arity_at(&self, t: usize) -> usize {
        1 + (t - 1) % self.max_arity
    }

    pub fn arities(&self) -> Vec<usize> {
        (1..=self.rounds).map(|t| self.arity_at(t)).collect()
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    fn statistic_at(t: usize) -> Statistic {
        Statistic::ALL[(t - 1) % Statistic::ALL.len()]
    }

    fn center(&self, t: usize, history: &[f64]) -> f64 {
        let stride = Statistic::ALL.len();
        let mut s = t;
        while s > stride {
            s -= stride;
            let y = history[s - 1];
            if y.is_finite() {
                return y;
            }
        }
        self.start
    }

    /// The query at round `t` given the responses so far.
    pub fn query_at<X: Scalar>(&self, t: usize, history: &[f64]) -> Result<Query<X>> {
        let w = self.arity_at(t);
        let stat = Self::statistic_at(t);
        let h = self.spacing;
        let half = (self.grid_points / 2) as f64;
        let base = (self.center(t, history) / h).round() * h - half * h;
        let range: Vec<f64> = (0..self.grid_points).map(|j| base + h * j as f64).collect();
        let last = self.grid_points - 1;
        let label = format!("{}{w}@{:.6}", stat.name(), base);
        Query::deterministic(label, w, range, move |xs: &[&X]| {
            let v = stat.apply(xs.iter().map(|x| x.scalar()));
            let j = ((v - base) / h).round();
            if j <= 0.0 {
                0
            } else {
                (j as usize).min(last)
            }
        })
    }
}

impl<X: Scalar> Analyst for MedianWalkOn<X> {
    type Element = X;
    type Query = Query<X>;

    fn rounds(&self) -> usize {
        self.walk.rounds
    }

    fn next_query(&mut self, t: usize, history: &[f64], _source: &RandomSource) -> Result<Query<X>> {
        self.walk.query_at(t, history)
    }

    fn tests(&mut self, history: &[f64], _source: &RandomSource) -> Result<Vec<TestQuery<X>>> {
        let Some(&y) = history.iter().rev().find(|y| y.is_finite()) else {
            return Ok(Vec::new());
        };
        Ok(vec![TestQuery::unary(format!("below({y})"), move |x: &X| {
            if x.scalar() <= y {
                1.0
            } else {
                0.0
            }
        })])
    }
}

/// [`MedianWalk`] bound to an element type.
#[derive(Clone, Debug)]
pub struct MedianWalkOn<X> {
    walk: MedianWalk,
    _element: std::marker::PhantomData<fn() -> X>,
}

impl<X: Scalar> MedianWalkOn<X> {
    pub fn new(walk: MedianWalk) -> Self {
        MedianWalkOn {
            walk,
            _element: std::marker::PhantomData,
        }
    }
}

/// Test-query shapes for scalar populations, used by [`FixedAnalyst`].
pub fn constant_query<X: Scalar>(value: f64) -> Result<TestQuery<X>> {
    TestQuery::constant(1, value)
}

/// `Ind[x = v]`.
pub fn indicator_query<X: Scalar>(value: f64) -> TestQuery<X> {
    TestQuery::unary(format!("is({value})"), move |x: &X| f64::from(u8::from(x.scalar() == value)))
}

/// `Ind[x ≤ at]`.
pub fn threshold_query<X: Scalar>(at: f64) -> TestQuery<X> {
    TestQuery::unary(format!("le({at})"), move |x: &X| f64::from(u8::from(x.scalar() <= at)))
}

/// `x` itself; only valid when every element lies in `[0, 1]`.
pub fn identity_query<X: Scalar>() -> TestQuery<X> {
    TestQuery::unary("identity", |x: &X| x.scalar())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Real, Symbol};

    #[test]
    fn fixed_replays() {
        let q = constant_query::<Symbol>(0.5).unwrap();
        let mut a = FixedAnalyst::cycling(vec![q, indicator_query(1.0)], 5).unwrap();
        let src = RandomSource::new(0);
        let labels: Vec<String> = (1..=5)
            .map(|t| a.next_query(t, &[], &src).unwrap().label().to_string())
            .collect();
        assert_eq!(labels, ["const(0.5)", "is(1)", "const(0.5)", "is(1)", "const(0.5)"]);
        assert_eq!(a.tests(&[], &src).unwrap().len(), 2);
        assert!(FixedAnalyst::<Symbol>::new(Vec::new()).is_err());
    }

    #[test]
    fn correlation_signs() {
        let mut a = RandomCorrelation::new(4).unwrap();
        let src = RandomSource::new(0);
        assert_eq!(a.next_query(3, &[], &src).unwrap().label(), "coord[2]");
        let s = a.signs(&[0.6, 0.5, 0.4, f64::NAN]);
        assert_eq!((0..4).map(|i| s.coordinate(i)).collect::<Vec<_>>(), [1, 1, -1, 1]);
        assert!(a.tests(&[0.1], &src).is_err());
    }

    #[test]
    fn walk_queries() {
        let walk = MedianWalk::new(12, 4, 64, 0.25, 0.0).unwrap();
        assert_eq!(walk.arities(), [1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4]);
        let q: Query<Real> = walk.query_at(1, &[]).unwrap();
        assert_eq!(q.arity(), 1);
        assert_eq!(q.range().len(), 64);
        assert_eq!(q.range()[32], 0.0);
        let xs = [Real(1.0)];
        let args: Vec<&Real> = xs.iter().collect();
        assert_eq!(q.range()[q.law(&args).unwrap().iter().position(|&p| p == 1.0).unwrap()], 1.0);
        // round 4 is a mean again, centred on round 1's answer
        let q4: Query<Real> = walk.query_at(4, &[2.0, 9.0, 9.0]).unwrap();
        assert_eq!(q4.range()[32], 2.0);
        assert_eq!(q4.arity(), 4);
        // far values clamp to the grid ends
        let big = [Real(100.0); 4];
        let args: Vec<&Real> = big.iter().collect();
        assert_eq!(q4.law(&args).unwrap()[63], 1.0);
    }

    #[test]
    fn statistics() {
        let xs = || [3.0, -1.0, 2.0].into_iter();
        assert_eq!(Statistic::Mean.apply(xs()), 4.0 / 3.0);
        assert_eq!(Statistic::Min.apply(xs()), -1.0);
        assert_eq!(Statistic::Max.apply(xs()), 3.0);
    }
}
