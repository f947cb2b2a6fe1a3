//! The approximate-median mechanism: split the sample into `k` groups and
//! binary-search the query's ordered range, one noisy majority vote per step.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::Serialize;

use crate::engine::{ResponsePMF, SubsampleDrawer};
use crate::error::{Error, Result};
use crate::model::{Dataset, Element, Query, Sample, Transcript, MASS_TOLERANCE};
use crate::rng::{unit_from_word, RandomSource};

use super::cost::cost_uniform;
use super::ledger::BudgetLedger;

/// Default side-mass an approximate median must leave on each side.
pub const MEDIAN_MASS: f64 = 0.4;

/// Default leading constant for the group count: `1/(2·(1/2 − 0.4)²)`, the
/// Hoeffding constant for a majority vote that must not drift from a side
/// with mass at most 0.4 past one half. The accuracy proof works with a
/// failure bound of `exp(−k/300)`, far too conservative for desk scale.
/// A constant of 8 leaves most desk-scale runs with some answer short of
/// the required side mass.
pub const DEFAULT_C_M: f64 = 50.0;

/// `min(Pr[x ≤ y], Pr[x ≥ y])`: the smaller side-mass at `y`.
pub fn approximate_median_margin(dist: &ResponsePMF, y: f64) -> f64 {
    dist.at_most(y).min(dist.at_least(y))
}

/// Whether `y` leaves at least 0.4 of the mass on each side (atoms at `y`
/// count toward both sides).
pub fn approximate_median_check(dist: &ResponsePMF, y: f64) -> bool {
    approximate_median_check_with(dist, y, MEDIAN_MASS)
}

pub fn approximate_median_check_with(dist: &ResponsePMF, y: f64, side_mass: f64) -> bool {
    approximate_median_margin(dist, y) >= side_mass - MASS_TOLERANCE
}

/// Binary-search steps needed to isolate one of `r` values.
pub fn search_rounds(r: usize) -> usize {
    if r <= 1 {
        0
    } else {
        (usize::BITS - (r - 1).leading_zeros()) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MedianParams {
    pub groups: usize,
    /// `k·√(w_max·Σ_t w_t)`: the group count stands in for the log factor
    /// of the sample-size requirement. Advisory only.
    pub advisory_min_n: f64,
}

/// `k = max(2, ⌈c_m·ln(2T·⌈log₂ R_max⌉/δ)⌉)`, with `⌈log₂ R_max⌉` floored
/// at 1 so a trivial range still yields a positive log argument.
pub fn median_params(rounds: usize, arities: &[usize], range_sizes: &[usize], delta: f64) -> Result<MedianParams> {
    median_params_with(rounds, arities, range_sizes, delta, DEFAULT_C_M)
}

pub fn median_params_with(
    rounds: usize,
    arities: &[usize],
    range_sizes: &[usize],
    delta: f64,
    c_m: f64,
) -> Result<MedianParams> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("δ = {delta} outside (0, 1)")));
    }
    if rounds < 1 {
        return Err(Error::domain("need T ≥ 1"));
    }
    if !(c_m > 0.0) {
        return Err(Error::domain(format!("group constant {c_m} must be positive")));
    }
    if arities.contains(&0) {
        return Err(Error::domain("arities must be positive"));
    }
    let r_max = range_sizes.iter().copied().max().unwrap_or(0);
    if r_max == 0 {
        return Err(Error::domain("need at least one nonempty range"));
    }
    let log_r = search_rounds(r_max).max(1) as f64;
    let k = (c_m * (2.0 * rounds as f64 * log_r / delta).ln()).ceil();
    let groups = (k as usize).max(2);
    let w_max = arities.iter().copied().max().unwrap_or(1) as f64;
    let w_sum: usize = arities.iter().sum();
    let advisory_min_n = groups as f64 * (w_max * w_sum as f64).sqrt();
    Ok(MedianParams { groups, advisory_min_n })
}

/// Result of one median query, with the per-step vote tallies.
#[derive(Clone, Debug, PartialEq)]
pub struct MedianOutcome {
    pub index: usize,
    pub value: f64,
    /// Ones counted at each binary-search step.
    pub tallies: Vec<usize>,
    pub cost: f64,
}

/// A median-mechanism session over one sample split into `k` groups.
#[derive(Clone, Debug)]
pub struct MedianSession<X> {
    groups: Vec<Dataset<X>>,
    drawers: Vec<SubsampleDrawer>,
    noise: bool,
    source: RandomSource,
    transcript: Transcript,
    ledger: BudgetLedger,
}

impl<X: Element> MedianSession<X> {
    /// Randomly partitions `data` into `k` groups of sizes `⌊n/k⌋`/`⌈n/k⌉`.
    pub fn new(data: &Dataset<X>, k: usize, source: RandomSource, ledger: BudgetLedger) -> Result<Self> {
        let n = data.len();
        if k < 1 || k > n {
            return Err(Error::domain(format!("need 1 ≤ k ≤ n, got k={k}, n={n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut source.child_named("partition").stream());
        let (base, extra) = (n / k, n % k);
        let mut groups = Vec::with_capacity(k);
        let mut start = 0;
        for g in 0..k {
            let size = base + usize::from(g < extra);
            let members: Vec<X> = order[start..start + size].iter().map(|&i| data.get(i).clone()).collect();
            groups.push(Dataset::new(members)?);
            start += size;
        }
        let drawers = groups.iter().map(|g| SubsampleDrawer::new(g.len())).collect();
        Ok(MedianSession {
            groups,
            drawers,
            noise: true,
            source: source.child_named("votes"),
            transcript: Transcript::new(),
            ledger,
        })
    }

    /// Turns the vote-flipping noise off. The mechanism still runs; its
    /// accuracy guarantee is stated for the noisy version only.
    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn noise(&self) -> bool {
        self.noise
    }

    pub fn groups(&self) -> &[Dataset<X>] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn min_group_size(&self) -> usize {
        self.groups.iter().map(Dataset::len).min().unwrap_or(0)
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Dataset::len).max().unwrap_or(0)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    fn flip_probability(&self, w: usize, group: usize) -> f64 {
        if self.noise {
            w as f64 / self.groups[group].len() as f64
        } else {
            0.0
        }
    }

    /// Charge for one query: every step asks each group one binary
    /// subsampling query of arity `w`, made `w/|S_i|`-uniform by the flip.
    pub fn query_cost(&self, arity: usize, range_size: usize) -> Result<f64> {
        let rounds = search_rounds(range_size) as f64;
        let mut per_round = 0.0;
        for (g, group) in self.groups.iter().enumerate() {
            per_round += cost_uniform(group.len(), arity, 2, self.flip_probability(arity, g))?;
        }
        Ok(rounds * per_round)
    }

    pub fn answer(&mut self, phi: &Query<X>) -> Result<f64> {
        self.answer_detailed(phi).map(|o| o.value)
    }

    /// Runs the binary search for `phi`. In almost-sure mode the whole
    /// query is pre-charged; a refusal consumes nothing.
    pub fn answer_detailed(&mut self, phi: &Query<X>) -> Result<MedianOutcome> {
        let w = phi.arity();
        let min = self.min_group_size();
        if w >= min {
            return Err(Error::ArityExceedsSample { arity: w, len: min });
        }
        let range = phi.range();
        let cost = self.query_cost(w, range.len())?;
        if !self.ledger.admits(cost) {
            return Err(Error::BudgetRefused {
                requested: cost,
                remaining: self.ledger.remaining(),
            });
        }
        let t = self.transcript.len() + 1;
        let k = self.groups.len();
        let needed = k.div_ceil(2);
        let (mut lo, mut hi) = (0usize, range.len() - 1);
        let mut tallies = Vec::new();
        let mut step = 0u64;
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            let mut ones = 0;
            for g in 0..k {
                let mut rng = self.source.derive(&[t as u64, step, g as u64]).stream();
                let index = self.drawers[g].answer(phi, &self.groups[g], &mut rng)?;
                let mut vote = index >= mid;
                if unit_from_word(rng.next_u64()) < self.flip_probability(w, g) {
                    vote = !vote;
                }
                ones += usize::from(vote);
            }
            if ones >= needed {
                lo = mid;
            } else {
                hi = mid - 1;
            }
            tallies.push(ones);
            step += 1;
        }
        self.ledger.try_charge(cost)?;
        let value = range[lo];
        self.transcript.push(phi.label(), value, cost);
        Ok(MedianOutcome {
            index: lo,
            value,
            tallies,
            cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::ledger::BudgetMode;
    use crate::model::Real;

    fn grid(m: usize) -> Vec<f64> {
        (1..=m).map(|i| i as f64).collect()
    }

    fn data(n: usize) -> Dataset<Real> {
        Dataset::new((0..n).map(|i| Real(i as f64)).collect()).unwrap()
    }

    #[test]
    fn check_examples() {
        let point = ResponsePMF::point_mass(vec![1.0, 5.0, 9.0], 1).unwrap();
        assert!(approximate_median_check(&point, 5.0));
        let uniform = ResponsePMF::uniform(grid(10)).unwrap();
        assert!(approximate_median_check(&uniform, 5.0));
        assert!((approximate_median_margin(&uniform, 5.0) - 0.5).abs() < 1e-12);
        assert!(!approximate_median_check(&uniform, 1.0));
        // four atoms of 0.1 sum to 0.4 only up to rounding
        assert!(approximate_median_check(&uniform, 7.0));
        assert!(!approximate_median_check(&uniform, 8.0));
        assert!(approximate_median_check_with(&uniform, 8.0, 0.3));
    }

    #[test]
    fn round_counts() {
        assert_eq!(search_rounds(1), 0);
        assert_eq!(search_rounds(2), 1);
        assert_eq!(search_rounds(3), 2);
        assert_eq!(search_rounds(64), 6);
        assert_eq!(search_rounds(65), 7);
        assert_eq!(search_rounds(1024), 10);
    }

    #[test]
    fn schedule_examples() {
        let with8 = |t, w: &[usize], r: &[usize], d| median_params_with(t, w, r, d, 8.0).unwrap().groups;
        assert_eq!(with8(1, &[1], &[2], 0.5), 12);
        // with c_m = 8 the log argument is at least 2, so k ≥ ⌈8·ln 2⌉ = 6;
        // the floor of 2 only binds for small constants
        assert_eq!(with8(1, &[1], &[2], 1.0 - 1e-12), 6);
        assert_eq!(median_params_with(1, &[1], &[2], 1.0 - 1e-12, 1.0).unwrap().groups, 2);
        assert_eq!(with8(100, &[1], &[1024], 0.05), 85);
        // ⌈8·ln(2·50·6/0.1)⌉ = ⌈69.6⌉
        let p = median_params_with(50, &[4, 1, 2], &[64], 0.1, 8.0).unwrap();
        assert_eq!(p.groups, 70);
        assert!((p.advisory_min_n - 70.0 * (4.0f64 * 7.0).sqrt()).abs() < 1e-9);
        // default constant 50: ⌈50·ln 6000⌉, ⌈50·ln 40000⌉, ⌈50·ln 4⌉
        assert_eq!(median_params(50, &[4, 1, 2], &[64], 0.1).unwrap().groups, 435);
        assert_eq!(median_params(100, &[1], &[1024], 0.05).unwrap().groups, 530);
        assert_eq!(median_params(1, &[1], &[2], 0.5).unwrap().groups, 70);
        assert!(median_params(10, &[1], &[8], 0.0).is_err());
        assert!(median_params(10, &[1], &[], 0.1).is_err());
        assert!(median_params(0, &[1], &[8], 0.1).is_err());
    }

    #[test]
    fn partition_shape() {
        let s = MedianSession::new(&data(103), 10, RandomSource::new(3), BudgetLedger::unlimited()).unwrap();
        assert_eq!(s.group_count(), 10);
        assert_eq!((s.min_group_size(), s.max_group_size()), (10, 11));
        let mut seen: Vec<f64> = s.groups().iter().flat_map(|g| g.elements().iter().map(|x| x.0)).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..103).map(|i| i as f64).collect::<Vec<_>>());
        assert!(MedianSession::new(&data(5), 6, RandomSource::new(3), BudgetLedger::unlimited()).is_err());
    }

    #[test]
    fn single_value_range_needs_no_rounds() {
        let mut s = MedianSession::new(&data(40), 4, RandomSource::new(1), BudgetLedger::unlimited()).unwrap();
        let q = Query::<Real>::constant(1, vec![7.5], 0).unwrap();
        let out = s.answer_detailed(&q).unwrap();
        assert_eq!(out.value, 7.5);
        assert!(out.tallies.is_empty());
        assert_eq!(out.cost, 0.0);
    }

    #[test]
    fn noiseless_constant_is_found_exactly() {
        let mut s = MedianSession::new(&data(60), 5, RandomSource::new(2), BudgetLedger::unlimited())
            .unwrap()
            .without_noise();
        for j in 0..10 {
            let q = Query::<Real>::constant(1, grid(10), j).unwrap();
            assert_eq!(s.answer(&q).unwrap(), (j + 1) as f64);
        }
    }

    #[test]
    fn noisy_constant_is_found_with_high_probability() {
        // 12 groups of 20, flip probability 1/20; a step fails only if at
        // least 6 of 12 votes flip, about 1e-5 per step
        let mut s = MedianSession::new(&data(240), 12, RandomSource::new(9), BudgetLedger::unlimited()).unwrap();
        let mut hits = 0;
        for rep in 0..200 {
            let j = rep % 10;
            let q = Query::<Real>::constant(1, grid(10), j).unwrap();
            hits += usize::from(s.answer(&q).unwrap() == (j + 1) as f64);
        }
        assert!(hits >= 198);
    }

    #[test]
    fn answers_lie_in_the_range() {
        let mut s = MedianSession::new(&data(90), 6, RandomSource::new(4), BudgetLedger::unlimited()).unwrap();
        let range = vec![-1.0, 0.5, 2.0, 30.0, 31.0];
        let q = Query::valued("clip", 2, range.clone(), |xs: &[&Real]| {
            let v = xs[0].0 + xs[1].0;
            if v < 40.0 {
                -1.0
            } else if v < 80.0 {
                0.5
            } else if v < 120.0 {
                2.0
            } else if v < 150.0 {
                30.0
            } else {
                31.0
            }
        })
        .unwrap();
        for _ in 0..30 {
            assert!(range.contains(&s.answer(&q).unwrap()));
        }
    }

    #[test]
    fn identity_median_of_the_sample() {
        // median of Unif{0..99} is about 49.5
        let mut s = MedianSession::new(&data(100), 5, RandomSource::new(11), BudgetLedger::unlimited()).unwrap();
        let range: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let q = Query::valued("id", 1, range, |xs: &[&Real]| xs[0].0).unwrap();
        let y = s.answer(&q).unwrap();
        assert!((20.0..=80.0).contains(&y), "{y}");
    }

    #[test]
    fn charges_and_refusals() {
        let probe = MedianSession::new(&data(100), 4, RandomSource::new(5), BudgetLedger::unlimited()).unwrap();
        let cost = probe.query_cost(2, 16).unwrap();
        let expected = 4.0 * 4.0 * cost_uniform(25, 2, 2, 2.0 / 25.0).unwrap();
        assert!((cost - expected).abs() < 1e-12);
        let quiet = probe.clone().without_noise();
        assert!((quiet.query_cost(2, 16).unwrap() - 16.0 * cost_uniform(25, 2, 2, 0.0).unwrap()).abs() < 1e-12);

        let ledger = BudgetLedger::new(BudgetMode::AlmostSure, 1.5 * cost);
        let mut s = MedianSession::new(&data(100), 4, RandomSource::new(5), ledger).unwrap();
        let q = Query::<Real>::constant(2, grid(16), 3).unwrap();
        s.answer(&q).unwrap();
        let before = (s.transcript().clone(), s.ledger().clone());
        assert!(matches!(s.answer(&q), Err(Error::BudgetRefused { .. })));
        assert_eq!((s.transcript().clone(), s.ledger().clone()), before);
    }

    #[test]
    fn arity_must_fit_the_groups() {
        let mut s = MedianSession::new(&data(20), 5, RandomSource::new(6), BudgetLedger::unlimited()).unwrap();
        let q = Query::<Real>::constant(4, grid(4), 0).unwrap();
        assert!(matches!(s.answer(&q), Err(Error::ArityExceedsSample { .. })));
    }

    #[test]
    fn sessions_replay() {
        let run = || {
            let mut s = MedianSession::new(&data(100), 5, RandomSource::new(8), BudgetLedger::unlimited()).unwrap();
            let range: Vec<f64> = (0..100).map(|i| i as f64).collect();
            let q = Query::valued("id", 1, range, |xs: &[&Real]| xs[0].0).unwrap();
            (0..5).map(|_| s.answer(&q).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
