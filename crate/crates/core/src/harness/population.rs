//! Named populations with exact oracles for the truths the harness needs.

use rand::RngCore;

use crate::engine::{population_response_pmf_capped, ResponsePMF};
use crate::error::{Error, Result};
use crate::model::{
    query_expectation_on_population, query_variance_on_population, Dataset, Element, Enumeration, GroundTruth,
    Query, QueryForm, Real, SignVector, Symbol, TestQuery,
};
use crate::rng::{unit_from_word, Stream};

/// Enumeration limit for population response laws: `support^w · |R|`.
pub const LAW_CAP: u64 = 100_000_000;

/// A population `D` the harness can sample from and compute truths against.
pub trait Population: Send + Sync {
    type Element: Element;

    fn describe(&self) -> String;

    /// `n` iid draws.
    fn draw(&self, n: usize, rng: &mut Stream) -> Result<Dataset<Self::Element>>;

    /// `ψ(D)`.
    fn expectation(&self, psi: &TestQuery<Self::Element>) -> Result<f64>;

    /// `Var_D(ψ)`.
    fn variance(&self, psi: &TestQuery<Self::Element>) -> Result<f64>;

    /// Law of `φ^(dist)(D)`.
    fn response_law(&self, phi: &Query<Self::Element>) -> Result<ResponsePMF>;
}

/// Elements with a natural real value, used to build threshold and
/// statistic queries.
pub trait Scalar: Element {
    fn scalar(&self) -> f64;
}

impl Scalar for Symbol {
    fn scalar(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for Real {
    fn scalar(&self) -> f64 {
        self.0
    }
}

/// A population with explicit finite support; truths by enumeration.
#[derive(Clone, Debug)]
pub struct Finite<X> {
    name: String,
    truth: GroundTruth<X>,
    policy: Enumeration,
}

impl<X: Element> Finite<X> {
    pub fn new(name: impl Into<String>, truth: GroundTruth<X>) -> Self {
        Finite {
            name: name.into(),
            truth,
            policy: Enumeration::default(),
        }
    }

    pub fn with_policy(mut self, policy: Enumeration) -> Self {
        self.policy = policy;
        self
    }

    pub fn truth(&self) -> &GroundTruth<X> {
        &self.truth
    }
}

/// Bernoulli(p) on `{0, 1}`.
pub fn bernoulli(p: f64) -> Result<Finite<Symbol>> {
    Ok(Finite::new(format!("bernoulli({p})"), GroundTruth::bernoulli(p)?))
}

/// Categorical on `{0, …, m−1}` with the given masses.
pub fn categorical(masses: Vec<f64>) -> Result<Finite<Symbol>> {
    let support = (0..masses.len() as Symbol).collect();
    let name = format!("categorical({})", masses.len());
    Ok(Finite::new(name, GroundTruth::new(support, masses)?))
}

/// `points` equally spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("bad grid: {points} points on [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| lo + step * i as f64).collect())
}

/// Gaussian `N(μ, σ²)` restricted to `grid`: masses proportional to the
/// density at each grid point.
pub fn discretized_gaussian(grid: Vec<f64>, mu: f64, sigma: f64) -> Result<Finite<Real>> {
    if !(sigma > 0.0) || !mu.is_finite() {
        return Err(Error::domain(format!("bad gaussian parameters μ={mu}, σ={sigma}")));
    }
    if grid.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::domain("grid must be strictly increasing"));
    }
    let density: Vec<f64> = grid
        .iter()
        .map(|x| (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = density.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("grid carries no gaussian mass"));
    }
    let name = format!("discretized_gaussian({} points, μ={mu}, σ={sigma})", grid.len());
    let masses = density.iter().map(|d| d / total).collect();
    Ok(Finite::new(name, GroundTruth::new(grid.into_iter().map(Real).collect(), masses)?))
}

impl<X: Element> Population for Finite<X> {
    type Element = X;

    fn describe(&self) -> String {
        self.name.clone()
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> Result<Dataset<X>> {
        self.truth.draw(n, rng)
    }

    fn expectation(&self, psi: &TestQuery<X>) -> Result<f64> {
        Ok(query_expectation_on_population(psi, &self.truth, &self.policy)?.value)
    }

    fn variance(&self, psi: &TestQuery<X>) -> Result<f64> {
        query_variance_on_population(psi, &self.truth, &self.policy)
    }

    fn response_law(&self, phi: &Query<X>) -> Result<ResponsePMF> {
        population_response_pmf_capped(phi, &self.truth, LAW_CAP)
    }
}

/// Product population on `{±1}^dim`: each coordinate is +1 independently
/// with probability `p_one`. Represented implicitly; only queries with a
/// closed-form truth are admitted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    dim: usize,
    p_one: f64,
}

impl Cube {
    pub fn new(dim: usize, p_one: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("cube dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&p_one) {
            return Err(Error::domain(format!("coordinate probability {p_one} outside [0,1]")));
        }
        Ok(Cube { dim, p_one })
    }

    /// Coordinates uniform on ±1.
    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(dim, 0.5)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_one(&self) -> f64 {
        self.p_one
    }

    /// `Pr[Σ_i s_i·x_i > 0]`, exactly: the number of +1 terms is a sum of
    /// independent Bernoullis, `p` where `s_i = +1` and `1 − p` otherwise.
    pub fn signed_sum_probability(&self, signs: &SignVector) -> Result<f64> {
        if signs.dim() != self.dim {
            return Err(Error::NotAdmitted(format!(
                "sign vector of dimension {} against a {}-dimensional cube",
                signs.dim(),
                self.dim
            )));
        }
        let mut pmf = vec![0.0; self.dim + 1];
        pmf[0] = 1.0;
        for i in 0..self.dim {
            let q = if signs.is_plus(i) { self.p_one } else { 1.0 - self.p_one };
            for u in (0..=i + 1).rev() {
                let stay = pmf[u] * (1.0 - q);
                let step = if u > 0 { pmf[u - 1] * q } else { 0.0 };
                pmf[u] = stay + step;
            }
        }
        // the sum is 2U − dim
        Ok(pmf.iter().enumerate().filter(|(u, _)| 2 * u > self.dim).map(|(_, p)| p).sum())
    }

    fn check_unary(&self, psi: &TestQuery<SignVector>) -> Result<()> {
        if psi.arity() != 1 {
            return Err(Error::NotAdmitted(format!("{}: only unary queries on the cube", psi.label())));
        }
        Ok(())
    }
}

impl Population for Cube {
    type Element = SignVector;

    fn describe(&self) -> String {
        format!("cube(dim={}, p_one={})", self.dim, self.p_one)
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> Result<Dataset<SignVector>> {
        let uniform = self.p_one == 0.5;
        let rows = (0..n)
            .map(|_| {
                if uniform {
                    let words = (0..self.dim.div_ceil(64)).map(|_| rng.next_u64()).collect();
                    SignVector::from_words(self.dim, words)
                } else {
                    SignVector::from_fn(self.dim, |_| unit_from_word(rng.next_u64()) < self.p_one)
                }
            })
            .collect();
        Dataset::new(rows)
    }

    fn expectation(&self, psi: &TestQuery<SignVector>) -> Result<f64> {
        match psi.form() {
            QueryForm::Constant(c) => Ok(*c),
            QueryForm::Coordinate(i) if *i < self.dim => {
                self.check_unary(psi)?;
                Ok(self.p_one)
            }
            QueryForm::SignedSum(signs) => {
                self.check_unary(psi)?;
                self.signed_sum_probability(signs)
            }
            _ => Err(Error::NotAdmitted(format!(
                "{}: no closed-form truth on the cube",
                psi.label()
            ))),
        }
    }

    fn variance(&self, psi: &TestQuery<SignVector>) -> Result<f64> {
        if let QueryForm::Constant(_) = psi.form() {
            return Ok(0.0);
        }
        // the admitted non-constant forms are indicators
        let m = self.expectation(psi)?;
        Ok(m * (1.0 - m))
    }

    fn response_law(&self, phi: &Query<SignVector>) -> Result<ResponsePMF> {
        Err(Error::NotAdmitted(format!("{}: response laws are not available on the cube", phi.label())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn bernoulli_masses() {
        let d = bernoulli(0.3).unwrap();
        assert_eq!(d.truth().masses(), &[0.7, 0.3]);
        let one = TestQuery::unary("one", |x: &Symbol| f64::from(*x));
        assert!((d.expectation(&one).unwrap() - 0.3).abs() < 1e-15);
        assert!((d.variance(&one).unwrap() - 0.21).abs() < 1e-15);
        assert!(bernoulli(1.5).is_err());
    }

    #[test]
    fn gaussian_normalizes() {
        let d = discretized_gaussian(linear_grid(-5.0, 5.0, 101).unwrap(), 0.0, 1.0).unwrap();
        let total: f64 = d.truth().masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean = TestQuery::unary("x", |x: &Real| (x.0 + 5.0) / 10.0);
        assert!((d.expectation(&mean).unwrap() - 0.5).abs() < 1e-12);
        assert!(discretized_gaussian(vec![0.0, 1.0], 0.0, 0.0).is_err());
        assert!(linear_grid(1.0, 0.0, 5).is_err());
    }

    #[test]
    fn cube_marginals() {
        let cube = Cube::uniform(3).unwrap();
        for i in 0..3 {
            assert_eq!(cube.expectation(&TestQuery::coordinate(i)).unwrap(), 0.5);
        }
        assert!(cube.expectation(&TestQuery::coordinate(3)).is_err());
        let opaque = TestQuery::unary("plus0", |x: &SignVector| f64::from(u8::from(x.is_plus(0))));
        assert!(matches!(cube.expectation(&opaque), Err(Error::NotAdmitted(_))));
    }

    #[test]
    fn signed_sum_single_coordinate_is_half() {
        let cube = Cube::uniform(1).unwrap();
        let psi = TestQuery::signed_sum(SignVector::from_fn(1, |_| true));
        assert_eq!(cube.expectation(&psi).unwrap(), 0.5);
    }

    #[test]
    fn signed_sum_matches_enumeration() {
        let dim = 7;
        let p = 0.3;
        let cube = Cube::new(dim, p).unwrap();
        let signs = SignVector::from_fn(dim, |i| i % 3 != 0);
        let mut direct = 0.0;
        for bits in 0u32..(1 << dim) {
            let x = SignVector::from_fn(dim, |i| bits >> i & 1 == 1);
            let plus = x.plus_count() as i32;
            let mass = p.powi(plus) * (1.0 - p).powi(dim as i32 - plus);
            if signs.signed_dot(&x) > 0 {
                direct += mass;
            }
        }
        let exact = cube.signed_sum_probability(&signs).unwrap();
        assert!((exact - direct).abs() < 1e-14);
    }

    #[test]
    fn even_dimension_ties_lose() {
        // Σ of 2 uniform signs is positive only when both are +1
        let cube = Cube::uniform(2).unwrap();
        let psi = TestQuery::signed_sum(SignVector::from_fn(2, |_| true));
        assert!((cube.expectation(&psi).unwrap() - 0.25).abs() < 1e-15);
        assert!((cube.variance(&psi).unwrap() - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn cube_draws_have_the_right_marginal() {
        let cube = Cube::new(200, 0.3).unwrap();
        let mut rng = RandomSource::new(1).stream();
        let s = cube.draw(500, &mut rng).unwrap();
        let plus: usize = s.elements().iter().map(SignVector::plus_count).sum();
        let freq = plus as f64 / 100_000.0;
        // sd ≈ 0.00145
        assert!((freq - 0.3).abs() < 0.006, "{freq}");
        let u = Cube::uniform(70).unwrap().draw(400, &mut rng).unwrap();
        let plus: usize = u.elements().iter().map(SignVector::plus_count).sum();
        assert!((plus as f64 / 28_000.0 - 0.5).abs() < 0.012);
    }
}
