//! Data model: samples, populations, queries, transcripts and the error
//! metric of a test query.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;

use crate::combinatorics::{binomial, for_each_subset, for_each_tuple, power, Subsampler};
use crate::error::{Error, Result};
use crate::rng::{RandomSource, Stream};

/// Default number of subsets (or tuples) an exact oracle may enumerate
/// before a Monte Carlo budget is required.
pub const ENUMERATION_CAP: u64 = 2_000_000;

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

pub trait Element: Clone + Eq + Hash + fmt::Debug + Send + Sync + 'static {}

impl<T: Clone + Eq + Hash + fmt::Debug + Send + Sync + 'static> Element for T {}

/// Integer-coded categorical symbol.
pub type Symbol = u32;

/// A real scalar with bitwise equality, so it can serve as a domain element.
#[derive(Clone, Copy, Debug, PartialOrd)]
pub struct Real(pub f64);

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Real {}

impl Hash for Real {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

/// Fixed-length vector of ±1 coordinates, packed one bit per coordinate
/// (set bit = +1).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SignVector {
    dim: usize,
    words: Box<[u64]>,
}

impl SignVector {
    pub fn from_fn(dim: usize, mut plus: impl FnMut(usize) -> bool) -> Self {
        let mut words = vec![0u64; dim.div_ceil(64)];
        for i in 0..dim {
            if plus(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        SignVector {
            dim,
            words: words.into_boxed_slice(),
        }
    }

    pub(crate) fn from_words(dim: usize, mut words: Vec<u64>) -> Self {
        words.resize(dim.div_ceil(64), 0);
        if !dim.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (dim % 64)) - 1;
            }
        }
        SignVector {
            dim,
            words: words.into_boxed_slice(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_plus(&self, i: usize) -> bool {
        assert!(i < self.dim, "coordinate {i} out of range for dimension {}", self.dim);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn coordinate(&self, i: usize) -> i8 {
        if self.is_plus(i) {
            1
        } else {
            -1
        }
    }

    pub fn plus_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `Σ_i self_i · other_i`.
    pub fn signed_dot(&self, other: &SignVector) -> i64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let disagree: u32 = self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        self.dim as i64 - 2 * i64::from(disagree)
    }
}

impl fmt::Debug for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.dim.min(64))
            .map(|i| if self.is_plus(i) { '+' } else { '-' })
            .collect();
        let ellipsis = if self.dim > 64 { "…" } else { "" };
        write!(f, "SignVector[{}]({s}{ellipsis})", self.dim)
    }
}

/// Random-access view of a sample, implemented by [`Dataset`] and by the
/// leave-one-out view [`LeaveOneOut`].
pub trait Sample<X> {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> &X;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A sample `S ∈ X^n`, `n ≥ 1`. Positions, not values, are what subsets
/// range over, so duplicates behave as a multiset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset<X> {
    elements: Arc<[X]>,
}

impl<X: Element> Dataset<X> {
    pub fn new(elements: Vec<X>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::domain("a dataset needs at least one element"));
        }
        Ok(Dataset {
            elements: elements.into(),
        })
    }

    pub fn elements(&self) -> &[X] {
        &self.elements
    }

    /// `S_{-i}`: all positions but `i`, without copying.
    pub fn without(&self, i: usize) -> LeaveOneOut<'_, X> {
        assert!(i < self.elements.len(), "index {i} out of range");
        LeaveOneOut {
            data: &self.elements,
            skip: i,
        }
    }
}

impl<X> Sample<X> for Dataset<X> {
    fn len(&self) -> usize {
        self.elements.len()
    }

    fn get(&self, i: usize) -> &X {
        &self.elements[i]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LeaveOneOut<'a, X> {
    data: &'a [X],
    skip: usize,
}

impl<X> LeaveOneOut<'_, X> {
    pub fn removed(&self) -> usize {
        self.skip
    }
}

impl<X> Sample<X> for LeaveOneOut<'_, X> {
    fn len(&self) -> usize {
        self.data.len() - 1
    }

    fn get(&self, i: usize) -> &X {
        if i < self.skip {
            &self.data[i]
        } else {
            &self.data[i + 1]
        }
    }
}

/// A finite population distribution with explicit support.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<X> {
    support: Vec<X>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<X: Element> GroundTruth<X> {
    pub fn new(support: Vec<X>, masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != masses.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points but {} masses",
                support.len(),
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidDistribution(format!("mass {m} is not a probability")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
        }
        let mut seen = std::collections::HashSet::with_capacity(support.len());
        if let Some(dup) = support.iter().find(|x| !seen.insert(*x)) {
            return Err(Error::InvalidDistribution(format!("support point {dup:?} repeated")));
        }
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Ok(GroundTruth {
            support,
            masses,
            cumulative,
        })
    }

    pub fn uniform(support: Vec<X>) -> Result<Self> {
        let m = support.len();
        if m == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        // Normalize through the sum so 1/m rounding cannot break the check.
        let masses = vec![1.0 / m as f64; m];
        Self::new(support, masses)
    }

    pub fn point_mass(x: X) -> Self {
        Self::new(vec![x], vec![1.0]).expect("a point mass is valid")
    }

    pub fn support(&self) -> &[X] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass_of(&self, x: &X) -> f64 {
        self.support
            .iter()
            .position(|s| s == x)
            .map_or(0.0, |i| self.masses[i])
    }

    /// Whether every element of `data` is a support point.
    pub fn covers(&self, data: &Dataset<X>) -> bool {
        data.elements().iter().all(|x| self.support.contains(x))
    }

    /// Index of the support point at cumulative probability `u ∈ [0,1)`.
    pub fn index_at(&self, u: f64) -> usize {
        let i = self.cumulative.partition_point(|c| *c <= u);
        // rounding can leave the last cumulative value just below 1
        i.min(self.support.len() - 1)
    }

    pub fn draw_one<R: Rng + ?Sized>(&self, rng: &mut R) -> &X {
        &self.support[self.index_at(rng.gen::<f64>())]
    }

    /// `n` iid draws.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset<X>> {
        Dataset::new((0..n).map(|_| self.draw_one(rng).clone()).collect())
    }
}

impl GroundTruth<Symbol> {
    /// Bernoulli(p) on the symbols {0, 1}.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("bernoulli parameter {p} outside [0,1]")));
        }
        Self::new(vec![0, 1], vec![1.0 - p, p])
    }
}

/// Law of a query's output for one input tuple: a single index into the
/// range, or an explicit distribution over it.
#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Value(usize),
    Law(Vec<f64>),
}

type ExplicitFn<X> = dyn Fn(&[&X]) -> Response + Send + Sync;
type SamplerFn<X> = dyn Fn(&[&X], &mut Stream) -> usize + Send + Sync;

#[derive(Clone)]
pub(crate) enum Evaluator<X> {
    Explicit(Arc<ExplicitFn<X>>),
    /// Black box: only draws are available.
    Sampler(Arc<SamplerFn<X>>),
}

/// A subsampling query `φ: X^w → Y` over a finite, strictly increasing range
/// of reals. The evaluator sees subsets in increasing position order.
#[derive(Clone)]
pub struct Query<X> {
    label: String,
    arity: usize,
    range: Arc<[f64]>,
    eval: Evaluator<X>,
    uniformity: f64,
}

impl<X> fmt::Debug for Query<X> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Query")
            .field("label", &self.label)
            .field("arity", &self.arity)
            .field("range", &self.range)
            .field("uniformity", &self.uniformity)
            .field("opaque", &matches!(self.eval, Evaluator::Sampler(_)))
            .finish()
    }
}

fn check_range(arity: usize, range: &[f64]) -> Result<()> {
    if arity == 0 {
        return Err(Error::InvalidQuery("arity must be positive".into()));
    }
    if range.is_empty() {
        return Err(Error::InvalidQuery("empty range".into()));
    }
    if range.iter().any(|y| !y.is_finite()) || range.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidQuery(
            "range must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

impl<X: Element> Query<X> {
    /// Query whose evaluator returns an index into `range`, or a law over it.
    pub fn new(
        label: impl Into<String>,
        arity: usize,
        range: Vec<f64>,
        eval: impl Fn(&[&X]) -> Response + Send + Sync + 'static,
    ) -> Result<Self> {
        check_range(arity, &range)?;
        Ok(Query {
            label: label.into(),
            arity,
            range: range.into(),
            eval: Evaluator::Explicit(Arc::new(eval)),
            uniformity: 0.0,
        })
    }

    /// Deterministic query returning an index into `range`.
    pub fn deterministic(
        label: impl Into<String>,
        arity: usize,
        range: Vec<f64>,
        f: impl Fn(&[&X]) -> usize + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(label, arity, range, move |xs| Response::Value(f(xs)))
    }

    /// Deterministic query returning a value that must be one of `range`.
    pub fn valued(
        label: impl Into<String>,
        arity: usize,
        range: Vec<f64>,
        f: impl Fn(&[&X]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_range(arity, &range)?;
        let lookup: Arc<[f64]> = range.clone().into();
        Self::new(label, arity, range, move |xs| {
            let y = f(xs);
            match lookup.binary_search_by(|r| r.total_cmp(&y)) {
                Ok(i) => Response::Value(i),
                // reported as a contract violation by `law`
                Err(_) => Response::Value(usize::MAX),
            }
        })
    }

    /// Randomized query with an explicit output law per input.
    pub fn randomized(
        label: impl Into<String>,
        arity: usize,
        range: Vec<f64>,
        f: impl Fn(&[&X]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(label, arity, range, move |xs| Response::Law(f(xs)))
    }

    /// Black-box randomized query: only sampling is possible. `declared_p`
    /// is the uniformity floor the caller claims; see
    /// [`crate::engine::spot_check_uniformity`].
    pub fn opaque(
        label: impl Into<String>,
        arity: usize,
        range: Vec<f64>,
        declared_p: f64,
        f: impl Fn(&[&X], &mut Stream) -> usize + Send + Sync + 'static,
    ) -> Result<Self> {
        check_range(arity, &range)?;
        Ok(Query {
            label: label.into(),
            arity,
            range: range.into(),
            eval: Evaluator::Sampler(Arc::new(f)),
            uniformity: declared_p.max(0.0),
        })
    }

    pub fn constant(arity: usize, range: Vec<f64>, index: usize) -> Result<Self> {
        if index >= range.len() {
            return Err(Error::InvalidQuery(format!("index {index} outside range")));
        }
        Self::deterministic(format!("const[{index}]"), arity, range, move |_| index)
    }

    /// Declares a uniformity floor without changing behavior.
    pub fn declare_uniformity(mut self, p: f64) -> Self {
        self.uniformity = p.max(0.0);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn range(&self) -> &[f64] {
        &self.range
    }

    pub(crate) fn shared_range(&self) -> Arc<[f64]> {
        self.range.clone()
    }

    pub fn uniformity(&self) -> f64 {
        self.uniformity
    }

    pub fn is_opaque(&self) -> bool {
        matches!(self.eval, Evaluator::Sampler(_))
    }

    pub(crate) fn evaluator(&self) -> &Evaluator<X> {
        &self.eval
    }

    pub(crate) fn from_parts(
        label: String,
        arity: usize,
        range: Arc<[f64]>,
        eval: Evaluator<X>,
        uniformity: f64,
    ) -> Self {
        Query {
            label,
            arity,
            range,
            eval,
            uniformity,
        }
    }

    /// Output law over the range at `args`, validated against the range.
    pub fn law(&self, args: &[&X]) -> Result<Vec<f64>> {
        let Evaluator::Explicit(f) = &self.eval else {
            return Err(Error::OpaqueQuery);
        };
        let m = self.range.len();
        match f(args) {
            Response::Value(i) if i < m => {
                let mut law = vec![0.0; m];
                law[i] = 1.0;
                Ok(law)
            }
            Response::Value(_) => Err(Error::ContractViolation { value: f64::NAN }),
            Response::Law(law) => {
                validate_law(&law, m)?;
                Ok(law)
            }
        }
    }

    /// Adds the law at `args`, scaled by `weight`, into `acc`.
    pub(crate) fn accumulate_law(&self, args: &[&X], weight: f64, acc: &mut [f64]) -> Result<()> {
        let Evaluator::Explicit(f) = &self.eval else {
            return Err(Error::OpaqueQuery);
        };
        match f(args) {
            Response::Value(i) if i < acc.len() => acc[i] += weight,
            Response::Value(_) => return Err(Error::ContractViolation { value: f64::NAN }),
            Response::Law(law) => {
                validate_law(&law, acc.len())?;
                for (a, l) in acc.iter_mut().zip(&law) {
                    *a += weight * l;
                }
            }
        }
        Ok(())
    }

    /// One draw of the output index at `args`.
    pub fn sample_index(&self, args: &[&X], rng: &mut Stream) -> Result<usize> {
        match &self.eval {
            Evaluator::Explicit(f) => match f(args) {
                Response::Value(i) if i < self.range.len() => Ok(i),
                Response::Value(_) => Err(Error::ContractViolation { value: f64::NAN }),
                Response::Law(law) => {
                    validate_law(&law, self.range.len())?;
                    Ok(inverse_cdf(&law, rng.gen::<f64>()))
                }
            },
            Evaluator::Sampler(f) => {
                let i = f(args, rng);
                if i < self.range.len() {
                    Ok(i)
                } else {
                    Err(Error::ContractViolation { value: f64::NAN })
                }
            }
        }
    }
}

pub(crate) fn validate_law(law: &[f64], m: usize) -> Result<()> {
    if law.len() != m {
        return Err(Error::InvalidQuery(format!(
            "output law has {} entries for a range of {m}",
            law.len()
        )));
    }
    if law.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidQuery("negative output mass".into()));
    }
    let total: f64 = law.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidQuery(format!("output law sums to {total}")));
    }
    Ok(())
}

pub(crate) fn inverse_cdf(law: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last partial sum
    law.iter().rposition(|p| *p > 0.0).unwrap_or(law.len() - 1)
}

/// Structural description of a test query, for populations that can only
/// evaluate queries of known shape in closed form.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryForm {
    Opaque,
    Constant(f64),
    /// `Ind[x_i = +1]` on a sign vector.
    Coordinate(usize),
    /// `Ind[Σ_i s_i·x_i > 0]` on a sign vector.
    SignedSum(SignVector),
}

/// A test query `ψ: X^w → [0,1]`. Evaluators must respect `[0,1]`; a value
/// outside it is reported as a contract violation, never clamped.
#[derive(Clone)]
pub struct TestQuery<X> {
    label: String,
    arity: usize,
    eval: Arc<dyn Fn(&[&X]) -> f64 + Send + Sync>,
    form: QueryForm,
}

impl<X> fmt::Debug for TestQuery<X> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestQuery")
            .field("label", &self.label)
            .field("arity", &self.arity)
            .field("form", &self.form)
            .finish()
    }
}

impl<X: Element> TestQuery<X> {
    pub fn new(
        label: impl Into<String>,
        arity: usize,
        eval: impl Fn(&[&X]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidQuery("arity must be positive".into()));
        }
        Ok(TestQuery {
            label: label.into(),
            arity,
            eval: Arc::new(eval),
            form: QueryForm::Opaque,
        })
    }

    /// Statistical query on single elements.
    pub fn unary(label: impl Into<String>, f: impl Fn(&X) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(label, 1, move |xs| f(xs[0])).expect("arity 1 is valid")
    }

    pub fn constant(arity: usize, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::ContractViolation { value });
        }
        let mut q = Self::new(format!("const({value})"), arity, move |_| value)?;
        q.form = QueryForm::Constant(value);
        Ok(q)
    }

    pub fn with_form(mut self, form: QueryForm) -> Self {
        self.form = form;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn form(&self) -> &QueryForm {
        &self.form
    }

    pub fn value(&self, args: &[&X]) -> Result<f64> {
        let v = (self.eval)(args);
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(Error::ContractViolation { value: v })
        }
    }

    /// Maps the evaluator through `g`; the result is opaque again.
    pub fn map(&self, label: impl Into<String>, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let inner = self.eval.clone();
        TestQuery {
            label: label.into(),
            arity: self.arity,
            eval: Arc::new(move |xs| g(inner(xs))),
            form: QueryForm::Opaque,
        }
    }
}

impl TestQuery<SignVector> {
    /// `Ind[x_i = +1]`.
    pub fn coordinate(i: usize) -> Self {
        TestQuery::unary(format!("coord[{i}]"), move |x: &SignVector| {
            if x.is_plus(i) {
                1.0
            } else {
                0.0
            }
        })
        .with_form(QueryForm::Coordinate(i))
    }

    /// `Ind[Σ_i s_i·x_i > 0]`.
    pub fn signed_sum(signs: SignVector) -> Self {
        let s = signs.clone();
        TestQuery::unary("sign-of-sum", move |x: &SignVector| {
            if s.signed_dot(x) > 0 {
                1.0
            } else {
                0.0
            }
        })
        .with_form(QueryForm::SignedSum(signs))
    }
}

/// Queries with a real-valued expected output per input tuple.
pub trait RealValued<X> {
    fn arity(&self) -> usize;
    fn mean_at(&self, args: &[&X]) -> Result<f64>;
}

impl<X: Element> RealValued<X> for TestQuery<X> {
    fn arity(&self) -> usize {
        self.arity
    }

    fn mean_at(&self, args: &[&X]) -> Result<f64> {
        self.value(args)
    }
}

impl<X: Element> RealValued<X> for Query<X> {
    fn arity(&self) -> usize {
        self.arity
    }

    fn mean_at(&self, args: &[&X]) -> Result<f64> {
        let law = self.law(args)?;
        Ok(law.iter().zip(self.range.iter()).map(|(p, y)| p * y).sum())
    }
}

/// Monte Carlo fallback for expectations too large to enumerate.
#[derive(Clone, Debug)]
pub struct MonteCarlo {
    pub draws: u64,
    pub source: RandomSource,
}

/// How an exact oracle may evaluate an expectation.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub cap: u64,
    pub monte_carlo: Option<MonteCarlo>,
}

impl Default for Enumeration {
    fn default() -> Self {
        Enumeration {
            cap: ENUMERATION_CAP,
            monte_carlo: None,
        }
    }
}

impl Enumeration {
    pub fn with_monte_carlo(draws: u64, source: RandomSource) -> Self {
        Enumeration {
            cap: ENUMERATION_CAP,
            monte_carlo: Some(MonteCarlo { draws, source }),
        }
    }
}

/// A computed expectation. `std_error` is zero for exact values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub exact: bool,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
            exact: true,
        }
    }

    fn from_draws(sum: f64, sum_sq: f64, draws: u64) -> Self {
        let k = draws as f64;
        let mean = sum / k;
        let var = (sum_sq / k - mean * mean).max(0.0);
        Estimate {
            value: mean,
            std_error: (var / k).sqrt(),
            exact: false,
        }
    }
}

fn monte_carlo_or_cap(policy: &Enumeration, needed: u128) -> Result<&MonteCarlo> {
    policy.monte_carlo.as_ref().ok_or(Error::EnumerationCap {
        needed,
        cap: policy.cap,
    })
}

/// `φ(S)`: exact expectation of `q` over a uniform without-replacement
/// `w`-subset of `s`. Falls back to Monte Carlo above the enumeration cap.
pub fn query_expectation_on_sample<X, Q, S>(q: &Q, s: &S, policy: &Enumeration) -> Result<Estimate>
where
    X: Element,
    Q: RealValued<X> + ?Sized,
    S: Sample<X> + ?Sized,
{
    let (w, n) = (q.arity(), s.len());
    if w > n {
        return Err(Error::ArityExceedsSample { arity: w, len: n });
    }
    if w == 1 {
        let mut total = 0.0;
        for i in 0..n {
            total += q.mean_at(&[s.get(i)])?;
        }
        return Ok(Estimate::exact(total / n as f64));
    }
    let subsets = binomial(n, w);
    let mut args: Vec<&X> = Vec::with_capacity(w);
    if subsets <= u128::from(policy.cap) {
        let mut total = 0.0;
        let mut failure = None;
        for_each_subset(n, w, |idx| {
            if failure.is_some() {
                return;
            }
            args.clear();
            args.extend(idx.iter().map(|&i| s.get(i)));
            match q.mean_at(&args) {
                Ok(v) => total += v,
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        return Ok(Estimate::exact(total / subsets as f64));
    }
    let mc = monte_carlo_or_cap(policy, subsets)?;
    let mut rng = mc.source.stream();
    let mut sub = Subsampler::new(n);
    let mut idx = Vec::with_capacity(w);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..mc.draws {
        sub.draw_sorted(w, &mut rng, &mut idx);
        args.clear();
        args.extend(idx.iter().map(|&i| s.get(i)));
        let v = q.mean_at(&args)?;
        sum += v;
        sum_sq += v * v;
    }
    Ok(Estimate::from_draws(sum, sum_sq, mc.draws))
}

/// First and second moments of `q` under iid draws from `d`.
fn population_moments<X, Q>(q: &Q, d: &GroundTruth<X>, policy: &Enumeration) -> Result<(Estimate, Estimate)>
where
    X: Element,
    Q: RealValued<X> + ?Sized,
{
    let w = q.arity();
    let m = d.support().len();
    let tuples = power(m, w);
    let mut args: Vec<&X> = Vec::with_capacity(w);
    if tuples <= u128::from(policy.cap) {
        let (mut first, mut second) = (0.0, 0.0);
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
            match q.mean_at(&args) {
                Ok(v) => {
                    first += weight * v;
                    second += weight * v * v;
                }
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        return Ok((Estimate::exact(first), Estimate::exact(second)));
    }
    let mc = monte_carlo_or_cap(policy, tuples)?;
    let mut rng = mc.source.stream();
    let (mut s1, mut s1sq, mut s2, mut s2sq) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..mc.draws {
        args.clear();
        for _ in 0..w {
            args.push(d.draw_one(&mut rng));
        }
        let v = q.mean_at(&args)?;
        s1 += v;
        s1sq += v * v;
        s2 += v * v;
        s2sq += v * v * v * v;
    }
    Ok((
        Estimate::from_draws(s1, s1sq, mc.draws),
        Estimate::from_draws(s2, s2sq, mc.draws),
    ))
}

/// `φ(D)`: expectation of `q` over `w` iid draws from `d`.
pub fn query_expectation_on_population<X, Q>(q: &Q, d: &GroundTruth<X>, policy: &Enumeration) -> Result<Estimate>
where
    X: Element,
    Q: RealValued<X> + ?Sized,
{
    population_moments(q, d, policy).map(|(first, _)| first)
}

/// `Var_D(ψ)`: variance of `q`'s expected output over `w` iid draws.
pub fn query_variance_on_population<X, Q>(q: &Q, d: &GroundTruth<X>, policy: &Enumeration) -> Result<f64>
where
    X: Element,
    Q: RealValued<X> + ?Sized,
{
    let (first, second) = population_moments(q, d, policy)?;
    Ok((second.value - first.value * first.value).max(0.0))
}

/// `(1/w)·min(Δ, Δ²/var)`, with the ratio taken as +∞ when `var = 0`.
pub fn error_from_gap(gap: f64, variance: f64, arity: usize) -> f64 {
    let gap = gap.abs();
    let ratio = if variance > 0.0 {
        gap * gap / variance
    } else {
        f64::INFINITY
    };
    gap.min(ratio) / arity as f64
}

/// Error of a test query: `(1/w)·min(Δ, Δ²/Var_D(ψ))`, `Δ = |ψ(S) − ψ(D)|`.
pub fn error_metric<X: Element>(
    psi: &TestQuery<X>,
    s: &Dataset<X>,
    d: &GroundTruth<X>,
    policy: &Enumeration,
) -> Result<f64> {
    let on_sample = query_expectation_on_sample(psi, s, policy)?.value;
    let (first, second) = population_moments(psi, d, policy)?;
    let variance = (second.value - first.value * first.value).max(0.0);
    Ok(error_from_gap(on_sample - first.value, variance, psi.arity()))
}

/// One answered query.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: usize,
    pub query: String,
    pub response: f64,
    pub cost: f64,
}

/// Ordered record of an analyst session; `t` counts from 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record and returns its time index.
    pub fn push(&mut self, query: impl Into<String>, response: f64, cost: f64) -> usize {
        assert!(cost >= 0.0, "charged cost must be nonnegative, got {cost}");
        let t = self.records.len() + 1;
        self.records.push(Record {
            t,
            query: query.into(),
            response,
            cost,
        });
        t
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn responses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.response).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reals(xs: &[f64]) -> Dataset<Real> {
        Dataset::new(xs.iter().map(|&x| Real(x)).collect()).unwrap()
    }

    fn identity() -> TestQuery<Real> {
        TestQuery::unary("id", |x: &Real| x.0)
    }

    fn pair_sum() -> Query<Real> {
        Query::valued("sum", 2, vec![0.0, 1.0, 2.0], |xs: &[&Real]| xs[0].0 + xs[1].0).unwrap()
    }

    #[test]
    fn sample_expectation_examples() {
        let policy = Enumeration::default();
        let e = query_expectation_on_sample(&identity(), &reals(&[1.0, 0.0, 0.0]), &policy).unwrap();
        assert!((e.value - 1.0 / 3.0).abs() < 1e-15 && e.exact);

        let e = query_expectation_on_sample(&pair_sum(), &reals(&[1.0, 1.0, 0.0, 0.0]), &policy).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15);

        let c = TestQuery::<Real>::constant(2, 0.7).unwrap();
        let e = query_expectation_on_sample(&c, &reals(&[0.3, 0.9, 0.1]), &policy).unwrap();
        assert!((e.value - 0.7).abs() < 1e-15);
    }

    #[test]
    fn arity_above_sample_size_is_an_error() {
        let err = query_expectation_on_sample(&pair_sum(), &reals(&[1.0]), &Enumeration::default());
        assert_eq!(err, Err(Error::ArityExceedsSample { arity: 2, len: 1 }));
    }

    #[test]
    fn cap_without_monte_carlo_is_an_error_and_with_it_an_estimate() {
        let data = reals(&vec![0.5; 40]);
        let q = TestQuery::new("avg3", 3, |xs: &[&Real]| xs.iter().map(|x| x.0).sum::<f64>() / 3.0).unwrap();
        let tight = Enumeration {
            cap: 100,
            monte_carlo: None,
        };
        assert!(matches!(
            query_expectation_on_sample(&q, &data, &tight),
            Err(Error::EnumerationCap { .. })
        ));
        let mc = Enumeration {
            cap: 100,
            monte_carlo: Some(MonteCarlo {
                draws: 1000,
                source: RandomSource::new(1),
            }),
        };
        let e = query_expectation_on_sample(&q, &data, &mc).unwrap();
        assert!(!e.exact);
        assert!((e.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn population_expectation_examples() {
        let policy = Enumeration::default();
        let d = GroundTruth::bernoulli(0.3).unwrap();
        let id = TestQuery::unary("id", |x: &Symbol| f64::from(*x));
        let e = query_expectation_on_population(&id, &d, &policy).unwrap();
        assert!((e.value - 0.3).abs() < 1e-15);

        let fair = GroundTruth::bernoulli(0.5).unwrap();
        let eq = TestQuery::new("eq", 2, |xs: &[&Symbol]| f64::from(u8::from(xs[0] == xs[1]))).unwrap();
        let e = query_expectation_on_population(&eq, &fair, &policy).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);

        let zero = TestQuery::<Symbol>::constant(3, 0.0).unwrap();
        assert_eq!(query_expectation_on_population(&zero, &d, &policy).unwrap().value, 0.0);
    }

    #[test]
    fn error_metric_examples() {
        assert_eq!(error_from_gap(0.0, 0.25, 1), 0.0);
        assert!((error_from_gap(0.1, 0.25, 1) - 0.04).abs() < 1e-15);
        assert!((error_from_gap(0.3, 0.01, 2) - 0.15).abs() < 1e-15);
        assert!((error_from_gap(-0.3, 0.01, 2) - 0.15).abs() < 1e-15);
        // zero variance takes the Δ/w branch
        assert!((error_from_gap(0.2, 0.0, 2) - 0.1).abs() < 1e-15);
        assert_eq!(error_from_gap(0.0, 0.0, 1), 0.0);
    }

    #[test]
    fn error_metric_end_to_end() {
        // S = [1,1,0], D = Bernoulli(0.5): ψ(S) = 2/3, ψ(D) = 1/2, Var = 1/4.
        let s = Dataset::new(vec![1u32, 1, 0]).unwrap();
        let d = GroundTruth::bernoulli(0.5).unwrap();
        let id = TestQuery::unary("id", |x: &Symbol| f64::from(*x));
        let err = error_metric(&id, &s, &d, &Enumeration::default()).unwrap();
        let gap: f64 = 1.0 / 6.0;
        assert!((err - (gap * gap / 0.25).min(gap)).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_test_query_is_a_violation() {
        let bad = TestQuery::unary("bad", |x: &Real| x.0 * 2.0);
        let r = query_expectation_on_sample(&bad, &reals(&[0.9]), &Enumeration::default());
        assert!(matches!(r, Err(Error::ContractViolation { .. })));
        let off_range = Query::valued("off", 1, vec![0.0, 1.0], |x: &[&Real]| x[0].0).unwrap();
        assert!(matches!(off_range.law(&[&Real(0.5)]), Err(Error::ContractViolation { .. })));
    }

    #[test]
    fn ground_truth_validation() {
        assert!(GroundTruth::new(vec![0u32, 1], vec![0.5, 0.6]).is_err());
        assert!(GroundTruth::new(vec![0u32, 0], vec![0.5, 0.5]).is_err());
        assert!(GroundTruth::new(vec![0u32, 1], vec![-0.1, 1.1]).is_err());
        assert!(GroundTruth::new(vec![0u32], vec![1.0]).is_ok());
        let d = GroundTruth::bernoulli(0.3).unwrap();
        assert!(d.covers(&Dataset::new(vec![0, 1, 1]).unwrap()));
        assert!(!d.covers(&Dataset::new(vec![0, 2]).unwrap()));
        assert_eq!(d.index_at(0.0), 0);
        assert_eq!(d.index_at(0.7), 1);
        assert_eq!(d.index_at(0.999_999), 1);
    }

    #[test]
    fn leave_one_out_view_skips_one_position() {
        let s = Dataset::new(vec![10u32, 11, 12, 13]).unwrap();
        let v = s.without(1);
        assert_eq!(v.len(), 3);
        let got: Vec<u32> = (0..v.len()).map(|i| *v.get(i)).collect();
        assert_eq!(got, vec![10, 12, 13]);
    }

    #[test]
    fn sign_vector_dot() {
        let a = SignVector::from_fn(130, |i| i % 3 == 0);
        let b = SignVector::from_fn(130, |i| i % 2 == 0);
        let direct: i64 = (0..130).map(|i| i64::from(a.coordinate(i)) * i64::from(b.coordinate(i))).sum();
        assert_eq!(a.signed_dot(&b), direct);
        assert_eq!(a.signed_dot(&a), 130);
        assert_eq!(a.plus_count(), (0..130).filter(|i| i % 3 == 0).count());
    }

    #[test]
    fn transcript_indices_and_costs() {
        let mut t = Transcript::new();
        assert_eq!(t.push("a", 0.5, 0.25), 1);
        assert_eq!(t.push("b", 0.1, 0.5), 2);
        assert_eq!(t.total_cost(), 0.75);
        assert_eq!(t.responses(), vec![0.5, 0.1]);
    }

    proptest::proptest! {
        #[test]
        fn unary_expectation_matches_direct_loop(xs in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let data = reals(&xs);
            let q = TestQuery::unary("sq", |x: &Real| x.0 * x.0);
            let got = query_expectation_on_sample(&q, &data, &Enumeration::default()).unwrap().value;
            let mut direct = 0.0;
            for x in &xs {
                direct += x * x;
            }
            direct /= xs.len() as f64;
            proptest::prop_assert!((got - direct).abs() < 1e-12);
        }

        #[test]
        fn error_metric_bounds(gap in -1.0f64..1.0, var in 0.0f64..0.25, w in 1usize..5) {
            let e = error_from_gap(gap, var, w);
            proptest::prop_assert_eq!(e, error_from_gap(-gap, var, w));
            proptest::prop_assert!(e <= gap.abs() / w as f64 + 1e-15);
            if var > 0.0 {
                proptest::prop_assert!(e <= gap * gap / (w as f64 * var) + 1e-15);
            }
        }

        #[test]
        fn transcript_cost_is_additive(costs in proptest::collection::vec(0.0f64..10.0, 0..30)) {
            let mut t = Transcript::new();
            for c in &costs {
                t.push("q", 0.0, *c);
            }
            let direct: f64 = costs.iter().sum();
            proptest::prop_assert!((t.total_cost() - direct).abs() < 1e-9);
        }
    }
}
