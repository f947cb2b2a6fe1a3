//! KL and χ² divergences, closed-form stability bounds, and brute-force
//! verifiers for the stability inequalities of subsampling queries.
//!
//! Logarithms are natural throughout. The χ² divergence here is Neyman's:
//!
//! ```text
//! χ²(D ‖ E) = Σ_y (D(y) − E(y))² / D(y)
//! ```
//!
//! which is `+∞` as soon as `E` puts mass where `D` has none.

use rand::Rng;
use serde::Serialize;

use crate::combinatorics::{binomial, for_each_subset, Subsampler};
use crate::engine::{exact_response_pmf, ResponsePMF};
use crate::error::{Error, Result};
use crate::model::{Dataset, Element, Query, Sample, ENUMERATION_CAP};
use crate::rng::Stream;

/// Slack allowed on inequalities checked after exhaustive enumeration.
pub const INEQUALITY_SLACK: f64 = 1e-10;

/// A divergence value. Infinity is a distinct variant, never a sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_finite(&self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Divergence::Finite(v) => Some(*v),
            Divergence::Infinite => None,
        }
    }

    /// As an `f64`, mapping the infinite variant to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    fn scale_plus(&self, factor: f64, offset: f64) -> Divergence {
        match self {
            Divergence::Finite(v) => Divergence::Finite(factor * v + offset),
            Divergence::Infinite => Divergence::Infinite,
        }
    }
}

fn same_range(d: &ResponsePMF, e: &ResponsePMF) -> Result<()> {
    if d.same_range(e) {
        Ok(())
    } else {
        Err(Error::RangeMismatch)
    }
}

/// `KL(D ‖ E) = Σ_{D(y)>0} D(y)·ln(D(y)/E(y))`.
pub fn kl_divergence(d: &ResponsePMF, e: &ResponsePMF) -> Result<Divergence> {
    same_range(d, e)?;
    let mut total = 0.0;
    for (&p, &q) in d.masses().iter().zip(e.masses()) {
        if p > 0.0 {
            if q == 0.0 {
                return Ok(Divergence::Infinite);
            }
            total += p * (p / q).ln();
        }
    }
    // tiny negative totals are rounding
    Ok(Divergence::Finite(total.max(0.0)))
}

/// Neyman's `χ²(D ‖ E)`; infinite iff `supp(E) ⊄ supp(D)`.
pub fn chi2_divergence(d: &ResponsePMF, e: &ResponsePMF) -> Result<Divergence> {
    same_range(d, e)?;
    let mut total = 0.0;
    for (&p, &q) in d.masses().iter().zip(e.masses()) {
        if p > 0.0 {
            total += (p - q) * (p - q) / p;
        } else if q > 0.0 {
            return Ok(Divergence::Infinite);
        }
    }
    Ok(Divergence::Finite(total))
}

/// `w(|Y| − 1) / ((n − 1)(n − w))`: the χ² stability of `φ^(n)` with
/// respect to `φ^(n−1)` for any `φ: X^w → Y`.
pub fn chi2_stability_bound(n: usize, w: usize, ysize: usize) -> Result<f64> {
    if w < 1 || w + 1 > n || ysize < 1 {
        return Err(Error::domain(format!(
            "need 1 ≤ w ≤ n − 1 and |Y| ≥ 1, got n={n}, w={w}, |Y|={ysize}"
        )));
    }
    Ok((w * (ysize - 1)) as f64 / ((n - 1) as f64 * (n - w) as f64))
}

/// Measured versus closed-form leave-one-out χ² stability of one query on
/// one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub measured: f64,
    pub bound: f64,
    pub per_index: Vec<f64>,
    pub slack: f64,
}

impl StabilityReport {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound + INEQUALITY_SLACK
    }
}

/// Law of `φ^(n)(S)` together with the laws of `φ^(n−1)(S_{−i})` for all `i`.
fn leave_one_out_laws<X: Element>(q: &Query<X>, s: &Dataset<X>) -> Result<(ResponsePMF, Vec<ResponsePMF>)> {
    let n = s.len();
    if q.arity() + 1 > n {
        return Err(Error::domain(format!(
            "leave-one-out needs w ≤ n − 1, got w={} n={n}",
            q.arity()
        )));
    }
    let full = exact_response_pmf(q, s)?;
    let rest = (0..n)
        .map(|i| exact_response_pmf(q, &s.without(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((full, rest))
}

/// `E_{i∼[n]} χ²(φ^(n)(S) ‖ φ^(n−1)(S_{−i}))`, by exhaustive enumeration.
pub fn measure_leave_one_out_chi2<X: Element>(q: &Query<X>, s: &Dataset<X>) -> Result<StabilityReport> {
    let (full, rest) = leave_one_out_laws(q, s)?;
    let per_index = rest
        .iter()
        .map(|e| chi2_divergence(&full, e).map(|d| d.to_f64()))
        .collect::<Result<Vec<_>>>()?;
    let measured = per_index.iter().sum::<f64>() / per_index.len() as f64;
    let bound = chi2_stability_bound(s.len(), q.arity(), q.range().len())?;
    Ok(StabilityReport {
        measured,
        bound,
        slack: bound - measured,
        per_index,
    })
}

/// `E_i KL(φ^(n)(S) ‖ (1 − mix)·φ^(n−1)(S_{−i}) + mix·Unif(Y))`.
pub fn measure_leave_one_out_kl<X: Element>(q: &Query<X>, s: &Dataset<X>, mix: f64) -> Result<Divergence> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::domain(format!("mixture weight {mix} outside [0,1]")));
    }
    let (full, rest) = leave_one_out_laws(q, s)?;
    let mut total = 0.0;
    for e in &rest {
        match kl_divergence(&full, &e.mix_uniform(mix)?)? {
            Divergence::Finite(v) => total += v,
            Divergence::Infinite => return Ok(Divergence::Infinite),
        }
    }
    Ok(Divergence::Finite(total / rest.len() as f64))
}

/// ALKL stability implied by ε-χ² stability, for the mechanism mixed with
/// uniform noise at weight ε: `ε·(3 + 2·ln(|Y|/ε))`.
pub fn alkl_bound_general(eps: f64, ysize: usize) -> Result<f64> {
    if !(eps > 0.0) || ysize < 1 {
        return Err(Error::domain(format!("need ε > 0 and |Y| ≥ 1, got ε={eps}, |Y|={ysize}")));
    }
    Ok(eps * (3.0 + 2.0 * (ysize as f64 / eps).ln()))
}

/// ALKL stability of a p-uniform query from ε-χ² stability:
/// `ε·(1 + ln(1 + w/(n·p)))`.
pub fn alkl_bound_uniform(eps: f64, w: usize, n: usize, p: f64) -> Result<f64> {
    if !(p > 0.0) || n == 0 || eps < 0.0 {
        return Err(Error::domain(format!("need p > 0, n ≥ 1, ε ≥ 0, got p={p}, n={n}, ε={eps}")));
    }
    Ok(eps * (1.0 + (1.0 + w as f64 / (n as f64 * p)).ln()))
}

/// Both sides of the variance contraction inequality
///
/// ```text
/// Var_{i∼[n]} E[f(T) | i ∉ T]  ≤  w / ((n−1)(n−w)) · Var_T f(T)
/// ```
///
/// for `T` uniform over `w`-subsets of `0..n` (passed in increasing order).
pub fn verify_variance_contraction(f: impl Fn(&[usize]) -> f64, n: usize, w: usize) -> Result<(f64, f64)> {
    if n < 2 || w + 1 > n {
        return Err(Error::domain(format!("need w ≤ n − 1 and n ≥ 2, got n={n}, w={w}")));
    }
    let subsets = binomial(n, w);
    if subsets > u128::from(ENUMERATION_CAP) {
        return Err(Error::EnumerationCap {
            needed: subsets,
            cap: ENUMERATION_CAP,
        });
    }
    let mut values = Vec::with_capacity(subsets as usize);
    let mut containing = vec![0.0; n];
    for_each_subset(n, w, |t| {
        let v = f(t);
        for &i in t {
            containing[i] += v;
        }
        values.push(v);
    });
    let count = values.len() as f64;
    let total: f64 = values.iter().sum();
    let mean = total / count;
    let var_t = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;

    let without = binomial(n - 1, w) as f64;
    let conditional: Vec<f64> = containing.iter().map(|c| (total - c) / without).collect();
    let cmean = conditional.iter().sum::<f64>() / n as f64;
    let lhs = conditional.iter().map(|c| (c - cmean) * (c - cmean)).sum::<f64>() / n as f64;
    let rhs = w as f64 / ((n - 1) as f64 * (n - w) as f64) * var_t;
    Ok((lhs, rhs))
}

/// Outcome of a numeric inequality check `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: Divergence,
    pub rhs: Divergence,
    pub passed: bool,
}

fn compare(lhs: Divergence, rhs: Divergence) -> InequalityCheck {
    let passed = match (lhs, rhs) {
        (_, Divergence::Infinite) => true,
        (Divergence::Infinite, Divergence::Finite(_)) => false,
        (Divergence::Finite(l), Divergence::Finite(r)) => l <= r + INEQUALITY_SLACK,
    };
    InequalityCheck { lhs, rhs, passed }
}

/// Checks `KL(D‖E) ≤ (1 + ln(1/τ))·χ²(D‖E)` given `E(y) ≥ τ·D(y)` for all
/// `y`. A violated precondition is an error, not a failed check.
pub fn verify_kl_chi2_inequality(d: &ResponsePMF, e: &ResponsePMF, tau: f64) -> Result<InequalityCheck> {
    same_range(d, e)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Precondition(format!("τ = {tau} outside (0, 1]")));
    }
    if let Some((p, q)) = d
        .masses()
        .iter()
        .zip(e.masses())
        .find(|(p, q)| **q < tau * **p - 1e-15)
    {
        return Err(Error::Precondition(format!("E(y) = {q} < τ·D(y) = {}", tau * p)));
    }
    let lhs = kl_divergence(d, e)?;
    let rhs = chi2_divergence(d, e)?.scale_plus(1.0 + (1.0 / tau).ln(), 0.0);
    Ok(compare(lhs, rhs))
}

/// Checks `KL(D‖E′) ≤ (1 + ln(|Y|/τ))·(χ²(D‖E) + τ) + τ` for the mixture
/// `E′ = (1 − τ)·E + τ·Unif(Y)`.
pub fn verify_kl_mixture_inequality(d: &ResponsePMF, e: &ResponsePMF, tau: f64) -> Result<InequalityCheck> {
    same_range(d, e)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Precondition(format!("τ = {tau} outside (0, 1]")));
    }
    let mixed = e.mix_uniform(tau)?;
    let lhs = kl_divergence(d, &mixed)?;
    let factor = 1.0 + (d.len() as f64 / tau).ln();
    let rhs = chi2_divergence(d, e)?.scale_plus(factor, factor * tau + tau);
    Ok(compare(lhs, rhs))
}

/// Estimate of `Pr[x > E[x] − 1]` for `x` the sum of `n` draws without
/// replacement from a multiset of values in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub exact: bool,
}

/// Lower bound on the probe probability, `(2√3 − 3)/13`.
pub fn sample_exceeds_mean_floor() -> f64 {
    (2.0 * 3f64.sqrt() - 3.0) / 13.0
}

fn check_probe_domain(values: &[f64], n: usize) -> Result<()> {
    if n < 1 || n >= values.len() {
        return Err(Error::domain(format!("need 1 ≤ n < |S|, got n={n}, |S|={}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("value {v} outside [0,1]")));
    }
    Ok(())
}

/// Monte Carlo estimate over `trials` independent subsets.
pub fn sample_exceeds_mean_probe(values: &[f64], n: usize, trials: u64, rng: &mut Stream) -> Result<ProbeEstimate> {
    check_probe_domain(values, n)?;
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    let threshold = n as f64 * values.iter().sum::<f64>() / values.len() as f64 - 1.0;
    let mut sub = Subsampler::new(values.len());
    let mut hits = 0u64;
    for _ in 0..trials {
        let sum: f64 = sub.draw(n, rng).iter().map(|&i| values[i]).sum();
        if sum > threshold {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    Ok(ProbeEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        exact: false,
    })
}

/// Exact probability by enumerating all `C(|S|, n)` subsets.
pub fn sample_exceeds_mean_exact(values: &[f64], n: usize) -> Result<ProbeEstimate> {
    check_probe_domain(values, n)?;
    let subsets = binomial(values.len(), n);
    if subsets > u128::from(ENUMERATION_CAP) {
        return Err(Error::EnumerationCap {
            needed: subsets,
            cap: ENUMERATION_CAP,
        });
    }
    let threshold = n as f64 * values.iter().sum::<f64>() / values.len() as f64 - 1.0;
    let mut hits = 0u64;
    for_each_subset(values.len(), n, |t| {
        if t.iter().map(|&i| values[i]).sum::<f64>() > threshold {
            hits += 1;
        }
    });
    Ok(ProbeEstimate {
        probability: hits as f64 / subsets as f64,
        std_error: 0.0,
        exact: true,
    })
}

/// Dirichlet(1, …, 1) draw: uniform over the probability simplex.
pub fn random_pmf<R: Rng + ?Sized>(range: Vec<f64>, rng: &mut R) -> ResponsePMF {
    let raw: Vec<f64> = range.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let masses = raw.iter().map(|r| r / total).collect();
    ResponsePMF::new(range, masses).expect("normalized exponentials form a distribution")
}
