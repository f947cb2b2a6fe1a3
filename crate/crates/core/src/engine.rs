//! The subsampling query primitive: draws `y ~ φ^(n)(S)`, exact response
//! laws for small instances, and p-uniform wrapping.

use std::sync::Arc;

use rand::Rng;

use crate::combinatorics::{binomial, for_each_subset, for_each_tuple, power, Subsampler};
use crate::error::{Error, Result};
use crate::model::{inverse_cdf, Element, Evaluator, GroundTruth, Query, Sample, ENUMERATION_CAP, MASS_TOLERANCE};
use crate::rng::Stream;

/// A distribution over an ordered finite range of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponsePMF {
    range: Arc<[f64]>,
    masses: Vec<f64>,
}

impl ResponsePMF {
    pub fn new(range: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if range.is_empty() || range.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::InvalidDistribution(
                "range must be nonempty and strictly increasing".into(),
            ));
        }
        Self::from_shared(range.into(), masses)
    }

    pub(crate) fn from_shared(range: Arc<[f64]>, masses: Vec<f64>) -> Result<Self> {
        if range.len() != masses.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} masses for a range of {}",
                masses.len(),
                range.len()
            )));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidDistribution("negative mass".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
        }
        Ok(ResponsePMF { range, masses })
    }

    /// Uniform law over `range`.
    pub fn uniform(range: Vec<f64>) -> Result<Self> {
        let m = range.len().max(1);
        Self::new(range, vec![1.0 / m as f64; m])
    }

    pub fn point_mass(range: Vec<f64>, index: usize) -> Result<Self> {
        let mut masses = vec![0.0; range.len()];
        *masses
            .get_mut(index)
            .ok_or_else(|| Error::InvalidDistribution(format!("index {index} outside range")))? = 1.0;
        Self::new(range, masses)
    }

    pub fn range(&self) -> &[f64] {
        &self.range
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Mass at the range value `y` (0 if `y` is not in the range).
    pub fn mass(&self, y: f64) -> f64 {
        self.range
            .iter()
            .position(|r| *r == y)
            .map_or(0.0, |i| self.masses[i])
    }

    pub fn mean(&self) -> f64 {
        self.range.iter().zip(&self.masses).map(|(y, p)| y * p).sum()
    }

    /// `Pr[x ≤ y]`.
    pub fn at_most(&self, y: f64) -> f64 {
        self.range
            .iter()
            .zip(&self.masses)
            .filter(|(r, _)| **r <= y)
            .map(|(_, p)| p)
            .sum()
    }

    /// `Pr[x ≥ y]`.
    pub fn at_least(&self, y: f64) -> f64 {
        self.range
            .iter()
            .zip(&self.masses)
            .filter(|(r, _)| **r >= y)
            .map(|(_, p)| p)
            .sum()
    }

    /// Whether both laws live on the same range.
    pub fn same_range(&self, other: &ResponsePMF) -> bool {
        self.range == other.range
    }

    /// `(1 − weight)·self + weight·Unif(range)`.
    pub fn mix_uniform(&self, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::domain(format!("mixture weight {weight} outside [0,1]")));
        }
        let u = weight / self.masses.len() as f64;
        let masses = self.masses.iter().map(|p| (1.0 - weight) * p + u).collect();
        Self::from_shared(self.range.clone(), masses)
    }

    /// Largest per-outcome gap to `other`.
    pub fn max_abs_diff(&self, other: &ResponsePMF) -> f64 {
        self.masses
            .iter()
            .zip(&other.masses)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One draw `y ~ φ^(n)(S)`: a uniform without-replacement `w`-subset of
/// positions, evaluated (and sampled, if randomized). Returns the index of
/// `y` in `q.range()`.
pub fn subsample_answer<X, S>(q: &Query<X>, s: &S, rng: &mut Stream) -> Result<usize>
where
    X: Element,
    S: Sample<X> + ?Sized,
{
    let mut drawer = SubsampleDrawer::new(s.len());
    drawer.answer(q, s, rng)
}

/// Repeated [`subsample_answer`] draws against one sample, reusing the
/// permutation buffer.
#[derive(Clone, Debug)]
pub struct SubsampleDrawer {
    sub: Subsampler,
    idx: Vec<usize>,
}

impl SubsampleDrawer {
    pub fn new(n: usize) -> Self {
        SubsampleDrawer {
            sub: Subsampler::new(n),
            idx: Vec::new(),
        }
    }

    pub fn answer<X, S>(&mut self, q: &Query<X>, s: &S, rng: &mut Stream) -> Result<usize>
    where
        X: Element,
        S: Sample<X> + ?Sized,
    {
        let (w, n) = (q.arity(), s.len());
        if w > n {
            return Err(Error::ArityExceedsSample { arity: w, len: n });
        }
        debug_assert_eq!(self.sub.population(), n);
        self.sub.draw_sorted(w, rng, &mut self.idx);
        let args: Vec<&X> = self.idx.iter().map(|&i| s.get(i)).collect();
        q.sample_index(&args, rng)
    }
}

/// Exact law of `φ^(n)(S)`: the average over all `C(n,w)` subsets of the
/// output law at that subset.
pub fn exact_response_pmf<X, S>(q: &Query<X>, s: &S) -> Result<ResponsePMF>
where
    X: Element,
    S: Sample<X> + ?Sized,
{
    exact_response_pmf_capped(q, s, ENUMERATION_CAP)
}

pub fn exact_response_pmf_capped<X, S>(q: &Query<X>, s: &S, cap: u64) -> Result<ResponsePMF>
where
    X: Element,
    S: Sample<X> + ?Sized,
{
    let (w, n) = (q.arity(), s.len());
    if w > n {
        return Err(Error::ArityExceedsSample { arity: w, len: n });
    }
    let subsets = binomial(n, w);
    let needed = subsets.saturating_mul(q.range().len() as u128);
    if needed > u128::from(cap) {
        return Err(Error::EnumerationCap { needed, cap });
    }
    let mut acc = vec![0.0; q.range().len()];
    let weight = 1.0 / subsets as f64;
    let mut args: Vec<&X> = Vec::with_capacity(w);
    let mut failure = None;
    for_each_subset(n, w, |idx| {
        if failure.is_some() {
            return;
        }
        args.clear();
        args.extend(idx.iter().map(|&i| s.get(i)));
        if let Err(e) = q.accumulate_law(&args, weight, &mut acc) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    ResponsePMF::from_shared(q.shared_range(), renormalize(acc))
}

/// Exact law of `φ^(dist)(D)`: `φ` applied to `w` iid draws from `D`.
pub fn population_response_pmf<X: Element>(q: &Query<X>, d: &GroundTruth<X>) -> Result<ResponsePMF> {
    population_response_pmf_capped(q, d, ENUMERATION_CAP)
}

pub fn population_response_pmf_capped<X: Element>(q: &Query<X>, d: &GroundTruth<X>, cap: u64) -> Result<ResponsePMF> {
    let w = q.arity();
    let m = d.support().len();
    let tuples = power(m, w);
    let needed = tuples.saturating_mul(q.range().len() as u128);
    if needed > u128::from(cap) {
        return Err(Error::EnumerationCap { needed, cap });
    }
    let mut acc = vec![0.0; q.range().len()];
    let mut args: Vec<&X> = Vec::with_capacity(w);
    let mut failure = None;
    for_each_tuple(m, w, |idx| {
        if failure.is_some() {
            return;
        }
        let weight: f64 = idx.iter().map(|&i| d.masses()[i]).product();
        if weight == 0.0 {
            return;
        }
        args.clear();
        args.extend(idx.iter().map(|&i| &d.support()[i]));
        if let Err(e) = q.accumulate_law(&args, weight, &mut acc) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    ResponsePMF::from_shared(q.shared_range(), renormalize(acc))
}

/// Removes accumulated rounding so the total is 1 to machine precision.
fn renormalize(mut acc: Vec<f64>) -> Vec<f64> {
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        for a in &mut acc {
            *a /= total;
        }
    }
    acc
}

/// Mixes `q` with uniform noise: with probability `p·|Y|` the output is a
/// uniform draw from `Y`, otherwise `q`'s output. The result is p-uniform.
pub fn uniformize<X: Element>(q: &Query<X>, p: f64) -> Result<Query<X>> {
    let m = q.range().len();
    let noise = p * m as f64;
    if !(p >= 0.0) || noise > 1.0 + 1e-12 {
        return Err(Error::domain(format!(
            "uniformity {p} is infeasible for a range of {m} (need 0 ≤ p·|Y| ≤ 1)"
        )));
    }
    let noise = noise.min(1.0);
    let eval = match q.evaluator().clone() {
        Evaluator::Explicit(_) => {
            let inner = q.clone();
            Evaluator::Explicit(Arc::new(move |xs: &[&X]| {
                let law = match inner.law(xs) {
                    Ok(law) => law,
                    // keep the violation visible to the caller
                    Err(_) => return crate::model::Response::Value(usize::MAX),
                };
                crate::model::Response::Law(law.iter().map(|l| (1.0 - noise) * l + p).collect())
            }))
        }
        Evaluator::Sampler(f) => Evaluator::Sampler(Arc::new(move |xs: &[&X], rng: &mut Stream| {
            if rng.gen::<f64>() < noise {
                rng.gen_range(0..m)
            } else {
                f(xs, rng)
            }
        })),
    };
    Ok(Query::from_parts(
        format!("{}~u({p})", q.label()),
        q.arity(),
        q.shared_range(),
        eval,
        p,
    ))
}

/// Draw count per input tuple when checking an opaque query.
pub const SPOT_CHECK_DRAWS: u64 = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct UniformityFailure {
    /// Position of the offending tuple in the supplied inputs.
    pub input: usize,
    /// Index of the under-weighted output in the range.
    pub output: usize,
    pub observed: f64,
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniformityReport {
    pub declared: f64,
    pub inputs_checked: usize,
    pub failures: Vec<UniformityFailure>,
}

impl UniformityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks a declared uniformity floor on sample inputs: exactly for queries
/// with explicit laws, by [`SPOT_CHECK_DRAWS`] draws (5σ slack) otherwise.
pub fn spot_check_uniformity<X: Element>(q: &Query<X>, inputs: &[Vec<X>], rng: &mut Stream) -> Result<UniformityReport> {
    let p = q.uniformity();
    if !(p > 0.0) {
        return Err(Error::Precondition("query declares no uniformity floor".into()));
    }
    let m = q.range().len();
    let mut failures = Vec::new();
    for (input, tuple) in inputs.iter().enumerate() {
        if tuple.len() != q.arity() {
            return Err(Error::InvalidQuery(format!(
                "input {input} has {} elements for arity {}",
                tuple.len(),
                q.arity()
            )));
        }
        let args: Vec<&X> = tuple.iter().collect();
        let (law, slack) = if q.is_opaque() {
            let mut counts = vec![0u64; m];
            for _ in 0..SPOT_CHECK_DRAWS {
                counts[q.sample_index(&args, rng)?] += 1;
            }
            let k = SPOT_CHECK_DRAWS as f64;
            let law: Vec<f64> = counts.iter().map(|c| *c as f64 / k).collect();
            (law, 5.0 * (p * (1.0 - p) / k).sqrt())
        } else {
            (q.law(&args)?, 1e-12)
        };
        for (output, observed) in law.into_iter().enumerate() {
            if observed < p - slack {
                failures.push(UniformityFailure {
                    input,
                    output,
                    observed,
                    floor: p,
                });
            }
        }
    }
    Ok(UniformityReport {
        declared: p,
        inputs_checked: inputs.len(),
        failures,
    })
}

/// Draws from an explicit law (helper for callers holding a PMF).
pub fn sample_pmf(pmf: &ResponsePMF, rng: &mut Stream) -> f64 {
    pmf.range()[inverse_cdf(pmf.masses(), rng.gen::<f64>())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{query_expectation_on_sample, Dataset, Enumeration, Real, Symbol};
    use crate::rng::RandomSource;

    fn bits(xs: &[u32]) -> Dataset<Symbol> {
        Dataset::new(xs.to_vec()).unwrap()
    }

    fn identity() -> Query<Symbol> {
        Query::deterministic("id", 1, vec![0.0, 1.0], |x| *x[0] as usize).unwrap()
    }

    fn pair_sum() -> Query<Symbol> {
        Query::deterministic("sum", 2, vec![0.0, 1.0, 2.0], |x| (*x[0] + *x[1]) as usize).unwrap()
    }

    #[test]
    fn exact_pmf_examples() {
        let pmf = exact_response_pmf(&identity(), &bits(&[1, 0, 0])).unwrap();
        assert!((pmf.mass(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((pmf.mass(0.0) - 2.0 / 3.0).abs() < 1e-15);

        let pmf = exact_response_pmf(&pair_sum(), &bits(&[1, 1, 0, 0])).unwrap();
        let expect = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
        for (got, want) in pmf.masses().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }

        let c = Query::<Symbol>::constant(2, vec![0.0, 1.0, 5.0], 2).unwrap();
        let pmf = exact_response_pmf(&c, &bits(&[0, 1, 1, 0, 1])).unwrap();
        assert_eq!(pmf.masses(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn population_pmf_examples() {
        let d = GroundTruth::point_mass(3u32);
        let q = Query::deterministic("sum", 2, (0..7).map(f64::from).collect(), |x: &[&Symbol]| (*x[0] + *x[1]) as usize).unwrap();
        let pmf = population_response_pmf(&q, &d).unwrap();
        assert_eq!(pmf.mass(6.0), 1.0);

        let fair = GroundTruth::bernoulli(0.5).unwrap();
        let xor = Query::deterministic("xor", 2, vec![0.0, 1.0], |x: &[&Symbol]| (*x[0] ^ *x[1]) as usize).unwrap();
        let pmf = population_response_pmf(&xor, &fair).unwrap();
        assert!((pmf.mass(0.0) - 0.5).abs() < 1e-15 && (pmf.mass(1.0) - 0.5).abs() < 1e-15);

        let c = Query::<Symbol>::constant(3, vec![0.0, 1.0], 0).unwrap();
        assert_eq!(population_response_pmf(&c, &fair).unwrap().masses(), &[1.0, 0.0]);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let data = bits(&[0; 30]);
        let q = Query::<Symbol>::constant(15, vec![0.0, 1.0], 0).unwrap();
        assert!(matches!(exact_response_pmf(&q, &data), Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn subsample_answer_examples() {
        let mut rng = RandomSource::new(5).stream();
        let c = Query::<Symbol>::constant(2, vec![0.0, 1.0, 2.0], 1).unwrap();
        for _ in 0..100 {
            assert_eq!(subsample_answer(&c, &bits(&[0, 1, 0]), &mut rng).unwrap(), 1);
        }
        // |S| = w: the only subset is S itself
        let s = bits(&[1, 1]);
        assert_eq!(subsample_answer(&pair_sum(), &s, &mut rng).unwrap(), 2);
        assert!(matches!(
            subsample_answer(&pair_sum(), &bits(&[1]), &mut rng),
            Err(Error::ArityExceedsSample { .. })
        ));
    }

    #[test]
    fn identity_frequency_within_three_sigma() {
        let s = bits(&[1, 0, 0]);
        let q = identity();
        let mut rng = RandomSource::new(77).stream();
        let mut drawer = SubsampleDrawer::new(3);
        let draws = 1_000_000u32;
        let mut ones = 0u32;
        for _ in 0..draws {
            ones += drawer.answer(&q, &s, &mut rng).unwrap() as u32;
        }
        let p = 1.0 / 3.0;
        let se = (p * (1.0 - p) / f64::from(draws)).sqrt();
        assert!((f64::from(ones) / f64::from(draws) - p).abs() < 3.0 * se);
    }

    #[test]
    fn uniformize_examples() {
        let q = identity();
        let same = uniformize(&q, 0.0).unwrap();
        assert_eq!(same.law(&[&1]).unwrap(), vec![0.0, 1.0]);

        let mixed = uniformize(&q, 0.1).unwrap();
        assert_eq!(mixed.uniformity(), 0.1);
        let law = mixed.law(&[&1]).unwrap();
        assert!((law[1] - 0.9).abs() < 1e-15 && (law[0] - 0.1).abs() < 1e-15);

        let flat = uniformize(&q, 0.5).unwrap();
        assert_eq!(flat.law(&[&0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(flat.law(&[&1]).unwrap(), vec![0.5, 0.5]);

        assert!(uniformize(&q, 0.6).is_err());
    }

    #[test]
    fn spot_check_examples() {
        let mut rng = RandomSource::new(9).stream();
        let inputs: Vec<Vec<Symbol>> = vec![vec![0], vec![1]];
        let ok = spot_check_uniformity(&uniformize(&identity(), 0.1).unwrap(), &inputs, &mut rng).unwrap();
        assert!(ok.passed());

        let liar = identity().declare_uniformity(0.1);
        let bad = spot_check_uniformity(&liar, &inputs, &mut rng).unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.failures.len(), 2);

        let coin = Query::<Symbol>::opaque("coin", 1, vec![0.0, 1.0], 0.4, |_, rng| usize::from(rng.gen::<bool>())).unwrap();
        assert!(spot_check_uniformity(&coin, &inputs, &mut rng).unwrap().passed());

        assert!(spot_check_uniformity(&identity(), &inputs, &mut rng).is_err());
    }

    #[test]
    fn opaque_queries_have_no_exact_law() {
        let coin = Query::<Symbol>::opaque("coin", 1, vec![0.0, 1.0], 0.4, |_, rng| usize::from(rng.gen::<bool>())).unwrap();
        assert_eq!(exact_response_pmf(&coin, &bits(&[0, 1])), Err(Error::OpaqueQuery));
    }

    #[test]
    fn mean_matches_sample_expectation() {
        let s = Dataset::new([0.0, 0.5, 1.0, 1.0, 0.0].iter().map(|&x| Real(x)).collect()).unwrap();
        let q = Query::valued("mean2", 2, vec![0.0, 0.25, 0.5, 0.75, 1.0], |x: &[&Real]| (x[0].0 + x[1].0) / 2.0).unwrap();
        let pmf = exact_response_pmf(&q, &s).unwrap();
        let direct = query_expectation_on_sample(&q, &s, &Enumeration::default()).unwrap().value;
        assert!((pmf.mean() - direct).abs() < 1e-12);
    }
}
