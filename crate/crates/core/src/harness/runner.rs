//! The experiment loop: draw a sample, let the analyst interact with a
//! mechanism, score every answer against the population truth.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{
    approximate_median_margin, mi_upper_bound, BudgetLedger, MedianSession, SqSession, MEDIAN_MASS,
};
use crate::model::{error_from_gap, query_expectation_on_sample, Dataset, Element, Enumeration, Query, TestQuery};
use crate::rng::RandomSource;

use super::analyst::Analyst;
use super::population::Population;

/// `φ(S)` for a statistical query: the exact sample mean.
pub fn naive_answer<X: Element>(s: &Dataset<X>, phi: &TestQuery<X>) -> Result<f64> {
    if phi.arity() != 1 {
        return Err(Error::InvalidQuery("statistical queries are unary".into()));
    }
    Ok(query_expectation_on_sample(phi, s, &Enumeration::default())?.value)
}

/// Accuracy target for an SQ with population mean `m`:
/// `max(τ·√(m(1−m)), τ²)`.
pub fn sq_threshold(tau: f64, truth: f64) -> f64 {
    let var = (truth * (1.0 - truth)).max(0.0);
    (tau * var.sqrt()).max(tau * tau)
}

/// One report row. For median queries `sample_value` holds the side-mass
/// `min(Pr[x ≤ y], Pr[x ≥ y])` of the answer under the population law,
/// `truth` the population median and `threshold` the required side-mass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub trial: usize,
    pub t: usize,
    pub query_id: String,
    pub mechanism: String,
    pub answer: f64,
    pub sample_value: f64,
    pub truth: f64,
    pub bias: f64,
    pub threshold: f64,
    pub within_bound: bool,
    pub cost: f64,
}

/// Prefix marking the analyst's final tests among the rows.
pub const TEST_PREFIX: &str = "test:";

impl Row {
    pub fn is_test(&self) -> bool {
        self.query_id.starts_with(TEST_PREFIX)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub all_within: bool,
    pub max_bias: f64,
    pub total_cost: f64,
    /// `None` for mechanisms without a cost ledger.
    pub mi_bound: Option<f64>,
    /// `ψ(S) − ψ(D)` per test.
    pub test_gaps: Vec<f64>,
    /// Error metric per test.
    pub test_errors: Vec<f64>,
    pub refusals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mechanism: String,
    pub trials: usize,
    pub rounds: usize,
    pub rows: usize,
    pub max_bias: f64,
    pub mean_bias: f64,
    pub trials_all_within: usize,
    pub fraction_all_within: f64,
    pub mean_test_gap: Option<f64>,
    pub max_abs_test_gap: Option<f64>,
    pub mean_test_error: Option<f64>,
    pub max_test_error: Option<f64>,
    pub mean_total_cost: f64,
    pub mean_mi_bound: Option<f64>,
    pub max_mi_bound: Option<f64>,
    pub refusals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub population: String,
    pub n: usize,
    /// Sample size the MI bound is scaled by (the largest group for the
    /// median mechanism).
    pub mi_scale: usize,
    pub rows: Vec<Row>,
    pub trials: Vec<TrialSummary>,
    pub summary: Summary,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn max(xs: impl Iterator<Item = f64>) -> Option<f64> {
    xs.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
}

impl ExperimentReport {
    fn assemble(
        population: String,
        n: usize,
        mi_scale: usize,
        mechanism: &str,
        rounds: usize,
        trials: Vec<(Vec<Row>, TrialSummary)>,
    ) -> Self {
        let (rows, summaries): (Vec<Vec<Row>>, Vec<TrialSummary>) = trials.into_iter().unzip();
        let rows: Vec<Row> = rows.into_iter().flatten().collect();
        let summary = summarize(mechanism, rounds, &rows, &summaries);
        ExperimentReport {
            population,
            n,
            mi_scale,
            rows,
            trials: summaries,
            summary,
        }
    }

    /// Rebuilds the summary from the rows (and the per-trial test errors,
    /// which need population variances the rows do not carry).
    pub fn recompute_summary(&self) -> Summary {
        let mut trials = Vec::with_capacity(self.trials.len());
        for ts in &self.trials {
            let rows: Vec<&Row> = self.rows.iter().filter(|r| r.trial == ts.trial).collect();
            let queries: Vec<&Row> = rows.iter().copied().filter(|r| !r.is_test()).collect();
            let total_cost: f64 = rows.iter().map(|r| r.cost).sum();
            trials.push(TrialSummary {
                trial: ts.trial,
                all_within: queries.iter().all(|r| r.within_bound),
                max_bias: max(queries.iter().map(|r| r.bias).filter(|b| !b.is_nan())).unwrap_or(0.0),
                total_cost,
                mi_bound: ts.mi_bound.map(|_| self.mi_scale as f64 * total_cost),
                test_gaps: rows.iter().filter(|r| r.is_test()).map(|r| r.answer - r.truth).collect(),
                test_errors: ts.test_errors.clone(),
                refusals: queries.iter().filter(|r| r.answer.is_nan()).count(),
            });
        }
        summarize(&self.summary.mechanism, self.summary.rounds, &self.rows, &trials)
    }

    /// Whether the stored summary agrees with [`Self::recompute_summary`]
    /// to `rel` relative tolerance on every number.
    pub fn summary_consistent(&self, rel: f64) -> bool {
        let a = serde_json::to_value(&self.summary).expect("summary serializes");
        let b = serde_json::to_value(self.recompute_summary()).expect("summary serializes");
        values_close(&a, &b, rel)
    }
}

fn values_close(a: &serde_json::Value, b: &serde_json::Value, rel: f64) -> bool {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-300) || x == y
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| values_close(v, w, rel)))
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(v, w)| values_close(v, w, rel)),
        _ => a == b,
    }
}

fn summarize(mechanism: &str, rounds: usize, rows: &[Row], trials: &[TrialSummary]) -> Summary {
    let queries = || rows.iter().filter(|r| !r.is_test()).filter(|r| !r.bias.is_nan());
    let gaps = || trials.iter().flat_map(|t| t.test_gaps.iter().copied());
    let errors = || trials.iter().flat_map(|t| t.test_errors.iter().copied());
    let within = trials.iter().filter(|t| t.all_within).count();
    let mi = || trials.iter().filter_map(|t| t.mi_bound);
    Summary {
        mechanism: mechanism.to_string(),
        trials: trials.len(),
        rounds,
        rows: rows.len(),
        max_bias: max(queries().map(|r| r.bias)).unwrap_or(0.0),
        mean_bias: mean(queries().map(|r| r.bias)).unwrap_or(0.0),
        trials_all_within: within,
        fraction_all_within: within as f64 / trials.len().max(1) as f64,
        mean_test_gap: mean(gaps()),
        max_abs_test_gap: max(gaps().map(f64::abs)),
        mean_test_error: mean(errors()),
        max_test_error: max(errors()),
        mean_total_cost: mean(trials.iter().map(|t| t.total_cost)).unwrap_or(0.0),
        mean_mi_bound: mean(mi()),
        max_mi_bound: max(mi()),
        refusals: trials.iter().map(|t| t.refusals).sum(),
    }
}

/// Settings shared by every experiment.
#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub trials: usize,
    pub n: usize,
    /// Worker cap; `None` uses all cores.
    pub threads: Option<usize>,
    /// Ledger each trial starts from.
    pub ledger: BudgetLedger,
}

impl Settings {
    pub fn new(seed: u64, trials: usize, n: usize) -> Self {
        Settings {
            seed,
            trials,
            n,
            threads: None,
            ledger: BudgetLedger::unlimited(),
        }
    }

    fn trial_source(&self, trial: usize) -> RandomSource {
        RandomSource::new(self.seed).child_named("trial").child(trial as u64)
    }

    fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::domain("need at least one trial"));
        }
        if self.n == 0 {
            return Err(Error::domain("need a nonempty sample"));
        }
        Ok(())
    }

    fn run_trials<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        pool.install(|| (0..self.trials).into_par_iter().map(&f).collect())
    }
}

/// How statistical queries are answered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SqMechanism {
    /// Squash level `epsilon`, `votes` votes, high-probability costs at `delta`.
    Subsampling { epsilon: f64, votes: usize, delta: f64 },
    /// The exact sample mean; no costs are charged.
    Naive,
}

impl SqMechanism {
    pub fn name(&self) -> &'static str {
        match self {
            SqMechanism::Subsampling { .. } => "sq",
            SqMechanism::Naive => "naive",
        }
    }
}

fn test_rows<P: Population>(
    population: &P,
    data: &Dataset<P::Element>,
    tests: &[TestQuery<P::Element>],
    trial: usize,
    rounds: usize,
    mechanism: &str,
    tau: f64,
) -> Result<(Vec<Row>, Vec<f64>, Vec<f64>)> {
    let mut rows = Vec::new();
    let (mut gaps, mut errors) = (Vec::new(), Vec::new());
    for (j, psi) in tests.iter().enumerate() {
        let on_sample = query_expectation_on_sample(psi, data, &Enumeration::default())?.value;
        let truth = population.expectation(psi)?;
        let gap = on_sample - truth;
        let threshold = sq_threshold(tau, truth);
        gaps.push(gap);
        errors.push(error_from_gap(gap, population.variance(psi)?, psi.arity()));
        rows.push(Row {
            trial,
            t: rounds + j + 1,
            query_id: format!("{TEST_PREFIX}{}", psi.label()),
            mechanism: mechanism.to_string(),
            answer: on_sample,
            sample_value: on_sample,
            truth,
            bias: gap.abs(),
            threshold,
            within_bound: gap.abs() <= threshold,
            cost: 0.0,
        });
    }
    Ok((rows, gaps, errors))
}

/// Runs a statistical-query experiment. `tau` sets the accuracy threshold
/// `max(τ·std(φ), τ²)` each answer is scored against.
pub fn run_sq_experiment<P, A, F>(
    settings: &Settings,
    population: &P,
    mechanism: SqMechanism,
    tau: f64,
    make_analyst: F,
) -> Result<ExperimentReport>
where
    P: Population,
    A: Analyst<Element = P::Element, Query = TestQuery<P::Element>>,
    F: Fn(usize) -> Result<A> + Sync,
{
    settings.check()?;
    let name = mechanism.name();
    let mut rounds = 0;
    let trials = settings.run_trials(|trial| {
        let source = settings.trial_source(trial);
        let data = population.draw(settings.n, &mut source.child_named("sample").stream())?;
        let mut analyst = make_analyst(trial)?;
        let analyst_source = source.child_named("analyst");
        let mut session = match mechanism {
            SqMechanism::Subsampling { epsilon, votes, delta } => Some(SqSession::new(
                data.clone(),
                epsilon,
                votes,
                delta,
                source.child_named("mechanism"),
                settings.ledger.clone(),
            )?),
            SqMechanism::Naive => None,
        };
        let t_max = analyst.rounds();
        let mut history = Vec::with_capacity(t_max);
        let mut rows = Vec::with_capacity(t_max + 1);
        let mut refusals = 0;
        for t in 1..=t_max {
            let phi = analyst.next_query(t, &history, &analyst_source.child(t as u64))?;
            let sample_value = naive_answer(&data, &phi)?;
            let (answer, cost) = match session.as_mut() {
                Some(s) => match s.answer(&phi) {
                    Ok(y) => (y, s.transcript().records().last().map_or(0.0, |r| r.cost)),
                    Err(Error::BudgetRefused { .. }) => {
                        refusals += 1;
                        (f64::NAN, 0.0)
                    }
                    Err(e) => return Err(e),
                },
                None => (sample_value, 0.0),
            };
            let truth = population.expectation(&phi)?;
            let threshold = sq_threshold(tau, truth);
            let bias = (answer - truth).abs();
            rows.push(Row {
                trial,
                t,
                query_id: phi.label().to_string(),
                mechanism: name.to_string(),
                answer,
                sample_value,
                truth,
                bias,
                threshold,
                within_bound: bias <= threshold,
                cost,
            });
            history.push(answer);
        }
        let tests = analyst.tests(&history, &analyst_source.child_named("tests"))?;
        let (test_rows, test_gaps, test_errors) = test_rows(population, &data, &tests, trial, t_max, name, tau)?;
        let query_rows = &rows[..];
        let summary = TrialSummary {
            trial,
            all_within: query_rows.iter().all(|r| r.within_bound),
            max_bias: max(query_rows.iter().map(|r| r.bias).filter(|b| !b.is_nan())).unwrap_or(0.0),
            total_cost: session.as_ref().map_or(0.0, |s| s.ledger().total()),
            mi_bound: session.as_ref().map(|s| mi_upper_bound(s.ledger(), settings.n)),
            test_gaps,
            test_errors,
            refusals,
        };
        rows.extend(test_rows);
        Ok((rows, summary, t_max))
    })?;
    let trials = trials
        .into_iter()
        .map(|(rows, summary, t)| {
            rounds = rounds.max(t);
            (rows, summary)
        })
        .collect();
    Ok(ExperimentReport::assemble(
        population.describe(),
        settings.n,
        settings.n,
        name,
        rounds,
        trials,
    ))
}

/// Median-mechanism settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MedianMechanism {
    pub groups: usize,
    pub noise: bool,
    /// Side-mass each answer must leave under the population law.
    pub side_mass: f64,
}

impl MedianMechanism {
    pub fn new(groups: usize) -> Self {
        MedianMechanism {
            groups,
            noise: true,
            side_mass: MEDIAN_MASS,
        }
    }
}

/// Smallest range value `y` with `Pr[x ≤ y] ≥ 1/2`.
fn population_median(law: &crate::engine::ResponsePMF) -> f64 {
    let mut acc = 0.0;
    for (y, p) in law.range().iter().zip(law.masses()) {
        acc += p;
        if acc >= 0.5 - crate::model::MASS_TOLERANCE {
            return *y;
        }
    }
    *law.range().last().expect("laws have nonempty ranges")
}

/// Runs a median experiment; each answer passes when it leaves at least
/// `side_mass` of `φ_t^(dist)(D)` on each side.
pub fn run_median_experiment<P, A, F>(
    settings: &Settings,
    population: &P,
    mechanism: MedianMechanism,
    make_analyst: F,
) -> Result<ExperimentReport>
where
    P: Population,
    A: Analyst<Element = P::Element, Query = Query<P::Element>>,
    F: Fn(usize) -> Result<A> + Sync,
{
    settings.check()?;
    let name = "median";
    let mi_scale = settings.n.div_ceil(mechanism.groups.max(1));
    let mut rounds = 0;
    let trials = settings.run_trials(|trial| {
        let source = settings.trial_source(trial);
        let data = population.draw(settings.n, &mut source.child_named("sample").stream())?;
        let mut analyst = make_analyst(trial)?;
        let analyst_source = source.child_named("analyst");
        let mut session = MedianSession::new(
            &data,
            mechanism.groups,
            source.child_named("mechanism"),
            settings.ledger.clone(),
        )?;
        if !mechanism.noise {
            session = session.without_noise();
        }
        let t_max = analyst.rounds();
        let mut history = Vec::with_capacity(t_max);
        let mut rows = Vec::with_capacity(t_max + 1);
        let mut refusals = 0;
        for t in 1..=t_max {
            let phi = analyst.next_query(t, &history, &analyst_source.child(t as u64))?;
            let (answer, cost) = match session.answer_detailed(&phi) {
                Ok(out) => (out.value, out.cost),
                Err(Error::BudgetRefused { .. }) => {
                    refusals += 1;
                    (f64::NAN, 0.0)
                }
                Err(e) => return Err(e),
            };
            let law = population.response_law(&phi)?;
            let truth = population_median(&law);
            let margin = if answer.is_nan() {
                f64::NAN
            } else {
                approximate_median_margin(&law, answer)
            };
            rows.push(Row {
                trial,
                t,
                query_id: phi.label().to_string(),
                mechanism: name.to_string(),
                answer,
                sample_value: margin,
                truth,
                bias: (answer - truth).abs(),
                threshold: mechanism.side_mass,
                within_bound: margin >= mechanism.side_mass - crate::model::MASS_TOLERANCE,
                cost,
            });
            history.push(answer);
        }
        let tests = analyst.tests(&history, &analyst_source.child_named("tests"))?;
        let (test_rows, test_gaps, test_errors) = test_rows(population, &data, &tests, trial, t_max, name, 0.0)?;
        let summary = TrialSummary {
            trial,
            all_within: rows.iter().all(|r| r.within_bound),
            max_bias: max(rows.iter().map(|r| r.bias).filter(|b| !b.is_nan())).unwrap_or(0.0),
            total_cost: session.ledger().total(),
            mi_bound: Some(mi_upper_bound(session.ledger(), mi_scale)),
            test_gaps,
            test_errors,
            refusals,
        };
        rows.extend(test_rows);
        Ok((rows, summary, t_max))
    })?;
    let trials = trials
        .into_iter()
        .map(|(rows, summary, t)| {
            rounds = rounds.max(t);
            (rows, summary)
        })
        .collect();
    Ok(ExperimentReport::assemble(
        population.describe(),
        settings.n,
        mi_scale,
        name,
        rounds,
        trials,
    ))
}
