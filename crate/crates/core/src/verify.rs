//! Seeded property suites over random small instances: the stability
//! bound, variance contraction, the KL/χ² inequalities and the
//! sample-exceeds-mean probe. Every failure carries its full instance.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::divergence::{
    alkl_bound_general, chi2_stability_bound, measure_leave_one_out_chi2,
    measure_leave_one_out_kl, random_pmf, sample_exceeds_mean_exact, sample_exceeds_mean_probe,
    verify_kl_chi2_inequality, verify_kl_mixture_inequality, verify_variance_contraction, Divergence,
    INEQUALITY_SLACK,
};
use crate::engine::{exact_response_pmf, ResponsePMF};
use crate::error::{Error, Result};
use crate::model::{Dataset, Query, Symbol};
use crate::rng::{RandomSource, Stream};

/// Probability floor the sample-exceeds-mean probes are held to.
pub const PROBE_FLOOR: f64 = 0.0357;

/// Failures kept per suite; the count is always complete.
const KEPT_FAILURES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Chi2Stability,
    Chi2Equality,
    VarContraction,
    VarContractionLinearEquality,
    KlChi2,
    KlMixture,
    AlklMixture,
    SampleExceedsMean,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Chi2Stability,
        Suite::Chi2Equality,
        Suite::VarContraction,
        Suite::VarContractionLinearEquality,
        Suite::KlChi2,
        Suite::KlMixture,
        Suite::AlklMixture,
        Suite::SampleExceedsMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Chi2Stability => "chi2-stability",
            Suite::Chi2Equality => "chi2-equality",
            Suite::VarContraction => "var-contraction",
            Suite::VarContractionLinearEquality => "var-contraction-linear-equality",
            Suite::KlChi2 => "kl-chi2",
            Suite::KlMixture => "kl-mixture",
            Suite::AlklMixture => "alkl-mixture",
            Suite::SampleExceedsMean => "sample-exceeds-mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Instance count used when none is given.
    pub fn default_instances(self) -> usize {
        match self {
            Suite::Chi2Stability | Suite::Chi2Equality | Suite::VarContraction => 1000,
            Suite::VarContractionLinearEquality | Suite::AlklMixture => 200,
            Suite::KlChi2 | Suite::KlMixture => 10_000,
            Suite::SampleExceedsMean => 3,
        }
    }

    pub fn run(self, instances: usize, seed: u64) -> Result<SuiteOutcome> {
        let source = RandomSource::new(seed).child_named(self.name());
        let mut out = SuiteOutcome::new(self, seed);
        match self {
            Suite::Chi2Stability => chi2_suite(&mut out, instances, &source, false)?,
            Suite::Chi2Equality => chi2_suite(&mut out, instances, &source, true)?,
            Suite::VarContraction => variance_suite(&mut out, instances, &source, false)?,
            Suite::VarContractionLinearEquality => variance_suite(&mut out, instances, &source, true)?,
            Suite::KlChi2 => kl_chi2_suite(&mut out, instances, &source)?,
            Suite::KlMixture => kl_mixture_suite(&mut out, instances, &source)?,
            Suite::AlklMixture => alkl_suite(&mut out, instances, &source)?,
            Suite::SampleExceedsMean => probe_suite(&mut out, &source)?,
        }
        Ok(out)
    }
}

/// Result of one suite run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub suite: String,
    pub seed: u64,
    pub instances: usize,
    pub failed: usize,
    /// Largest `lhs − rhs` seen (for equality suites, largest `|lhs − rhs|`;
    /// for the probe suite, the smallest probability).
    pub worst: f64,
    pub failures: Vec<Value>,
    pub notes: Vec<String>,
}

impl SuiteOutcome {
    fn new(suite: Suite, seed: u64) -> Self {
        SuiteOutcome {
            suite: suite.name().to_string(),
            seed,
            instances: 0,
            failed: 0,
            worst: f64::NEG_INFINITY,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0 && self.instances > 0
    }

    fn record(&mut self, gap: f64, ok: bool, instance: impl FnOnce() -> Value) {
        self.instances += 1;
        if gap > self.worst || self.worst.is_nan() {
            self.worst = gap;
        }
        if !ok {
            self.failed += 1;
            if self.failures.len() < KEPT_FAILURES {
                self.failures.push(instance());
            }
        }
    }
}

/// A random small subsampling instance: data over a small alphabet and a
/// deterministic query given as a lookup table over value tuples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryInstance {
    pub index: usize,
    pub n: usize,
    pub w: usize,
    pub ysize: usize,
    pub alphabet: usize,
    pub data: Vec<Symbol>,
    /// Output index for each value tuple, keyed by `Σ_j x_j·alphabet^j`.
    pub table: Vec<usize>,
}

impl QueryInstance {
    pub fn random(index: usize, rng: &mut Stream, force_unary: bool) -> Self {
        let n: usize = rng.gen_range(3..=8);
        let w = if force_unary { 1 } else { rng.gen_range(1..=3.min(n - 1)) };
        let ysize: usize = rng.gen_range(2..=4);
        let alphabet: usize = rng.gen_range(2..=4);
        let data = (0..n).map(|_| rng.gen_range(0..alphabet as Symbol)).collect();
        let table = (0..alphabet.pow(w as u32)).map(|_| rng.gen_range(0..ysize)).collect();
        QueryInstance {
            index,
            n,
            w,
            ysize,
            alphabet,
            data,
            table,
        }
    }

    pub fn query(&self) -> Result<Query<Symbol>> {
        let table = self.table.clone();
        let alphabet = self.alphabet;
        let range = (0..self.ysize).map(|y| y as f64).collect();
        Query::deterministic("table", self.w, range, move |xs: &[&Symbol]| {
            let key = xs.iter().rev().fold(0usize, |k, x| k * alphabet + **x as usize);
            table[key]
        })
    }

    pub fn dataset(&self) -> Result<Dataset<Symbol>> {
        Dataset::new(self.data.clone())
    }
}

fn instance_stream(source: &RandomSource, i: usize) -> Stream {
    source.child(i as u64).stream()
}

fn chi2_suite(out: &mut SuiteOutcome, instances: usize, source: &RandomSource, unary_only: bool) -> Result<()> {
    for i in 0..instances {
        let inst = QueryInstance::random(i, &mut instance_stream(source, i), unary_only);
        let q = inst.query()?;
        let s = inst.dataset()?;
        let report = measure_leave_one_out_chi2(&q, &s)?;
        let mut gap = report.measured - report.bound;
        let mut ok = report.holds();
        let mut realized = None;
        if inst.w == 1 {
            // tight when every realized output is counted: the bound with
            // |Y| replaced by the support size of φ^(n)(S)
            let support = exact_response_pmf(&q, &s)?.masses().iter().filter(|m| **m > 0.0).count();
            let tight = chi2_stability_bound(inst.n, 1, support)?;
            let diff = (report.measured - tight).abs();
            if unary_only {
                gap = diff;
            }
            ok &= diff <= INEQUALITY_SLACK;
            realized = Some((support, tight));
        }
        out.record(gap, ok, || {
            json!({
                "instance": inst,
                "measured": report.measured,
                "bound": report.bound,
                "per_index": report.per_index,
                "realized_support_and_tight_bound": realized,
            })
        });
    }
    if unary_only {
        out.notes.push("worst = max |measured − bound at realized |Y||".into());
    }
    Ok(())
}

fn variance_suite(out: &mut SuiteOutcome, instances: usize, source: &RandomSource, linear: bool) -> Result<()> {
    for i in 0..instances {
        let mut rng = instance_stream(source, i);
        let n: usize = rng.gen_range(2..=8);
        let w = rng.gen_range(1..=3.min(n - 1));
        let (lhs, rhs, f) = if linear {
            let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (lhs, rhs) = verify_variance_contraction(|t| t.iter().map(|&j| alpha[j]).sum(), n, w)?;
            (lhs, rhs, json!({ "alpha": alpha }))
        } else {
            // one value per subset, keyed by its bitmask
            let table: Vec<f64> = (0..1usize << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (lhs, rhs) = verify_variance_contraction(|t| table[t.iter().map(|&j| 1usize << j).sum::<usize>()], n, w)?;
            (lhs, rhs, json!({ "table_by_bitmask": table }))
        };
        let (gap, ok) = if linear {
            ((lhs - rhs).abs(), (lhs - rhs).abs() <= INEQUALITY_SLACK)
        } else {
            (lhs - rhs, lhs <= rhs + INEQUALITY_SLACK)
        };
        out.record(gap, ok, || json!({ "index": i, "n": n, "w": w, "f": f, "lhs": lhs, "rhs": rhs }));
    }
    Ok(())
}

fn random_pair(rng: &mut Stream) -> (ResponsePMF, ResponsePMF) {
    let m = rng.gen_range(2..=6);
    let range: Vec<f64> = (0..m).map(|y| y as f64).collect();
    (random_pmf(range.clone(), rng), random_pmf(range, rng))
}

fn divergence_gap(lhs: Divergence, rhs: Divergence) -> f64 {
    match (lhs, rhs) {
        (_, Divergence::Infinite) => f64::NEG_INFINITY,
        (Divergence::Infinite, _) => f64::INFINITY,
        (Divergence::Finite(l), Divergence::Finite(r)) => l - r,
    }
}

fn kl_chi2_suite(out: &mut SuiteOutcome, instances: usize, source: &RandomSource) -> Result<()> {
    for i in 0..instances {
        let (d, e) = random_pair(&mut instance_stream(source, i));
        let tau = d
            .masses()
            .iter()
            .zip(e.masses())
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| q / p)
            .fold(1.0f64, f64::min);
        let check = verify_kl_chi2_inequality(&d, &e, tau)?;
        out.record(divergence_gap(check.lhs, check.rhs), check.passed, || {
            json!({ "index": i, "d": d.masses(), "e": e.masses(), "tau": tau, "check": check })
        });
    }
    Ok(())
}

fn kl_mixture_suite(out: &mut SuiteOutcome, instances: usize, source: &RandomSource) -> Result<()> {
    const TAUS: [f64; 3] = [0.5, 0.1, 0.01];
    for i in 0..instances {
        let (d, e) = random_pair(&mut instance_stream(source, i));
        let tau = TAUS[i % TAUS.len()];
        let check = verify_kl_mixture_inequality(&d, &e, tau)?;
        out.record(divergence_gap(check.lhs, check.rhs), check.passed, || {
            json!({ "index": i, "d": d.masses(), "e": e.masses(), "tau": tau, "check": check })
        });
    }
    Ok(())
}

fn alkl_suite(out: &mut SuiteOutcome, instances: usize, source: &RandomSource) -> Result<()> {
    for i in 0..instances {
        // the mixture weight must be a probability, so redraw instances
        // whose stability bound exceeds 1
        let mut rng = instance_stream(source, i);
        let (inst, eps) = loop {
            let inst = QueryInstance::random(i, &mut rng, false);
            let eps = chi2_stability_bound(inst.n, inst.w, inst.ysize)?;
            if eps <= 1.0 {
                break (inst, eps);
            }
        };
        let q = inst.query()?;
        let s = inst.dataset()?;
        let measured = measure_leave_one_out_kl(&q, &s, eps)?;
        let bound = alkl_bound_general(eps, inst.ysize)?;
        let gap = measured.to_f64() - bound;
        out.record(gap, gap <= INEQUALITY_SLACK, || {
            json!({ "instance": inst, "mix": eps, "measured": measured, "bound": bound })
        });
    }
    Ok(())
}

/// One fixed probe instance of the sample-exceeds-mean suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeInstance {
    pub name: &'static str,
    pub values: Vec<f64>,
    pub n: usize,
    /// `None` for exact enumeration.
    pub trials: Option<u64>,
}

pub fn probe_instances() -> Vec<ProbeInstance> {
    vec![
        ProbeInstance {
            name: "constant",
            values: vec![0.5; 50],
            n: 10,
            trials: Some(10_000),
        },
        ProbeInstance {
            name: "half-zeros-half-ones",
            values: [vec![0.0; 200], vec![1.0; 200]].concat(),
            n: 100,
            trials: Some(100_000),
        },
        ProbeInstance {
            name: "alternating-10",
            values: (0..10).map(|i| f64::from(i % 2)).collect(),
            n: 5,
            trials: None,
        },
    ]
}

fn probe_suite(out: &mut SuiteOutcome, source: &RandomSource) -> Result<()> {
    out.worst = f64::INFINITY;
    for (i, inst) in probe_instances().into_iter().enumerate() {
        let est = match inst.trials {
            Some(trials) => sample_exceeds_mean_probe(&inst.values, inst.n, trials, &mut source.child(i as u64).stream())?,
            None => sample_exceeds_mean_exact(&inst.values, inst.n)?,
        };
        let ok = if est.exact {
            est.probability >= PROBE_FLOOR
        } else {
            est.probability >= PROBE_FLOOR - 4.0 * est.std_error
        };
        out.instances += 1;
        out.worst = out.worst.min(est.probability);
        out.notes.push(format!(
            "{}: probability {:.6} (se {:.2e}, {})",
            inst.name,
            est.probability,
            est.std_error,
            if est.exact { "exact" } else { "monte carlo" }
        ));
        if !ok {
            out.failed += 1;
            out.failures.push(json!({ "instance": inst, "estimate": est }));
        }
    }
    Ok(())
}

/// Runs one suite by name, or every suite for `"all"`. `instances` of
/// `None` uses each suite's default count.
pub fn run_named(name: &str, instances: Option<usize>, seed: u64) -> Result<Vec<SuiteOutcome>> {
    let suites: Vec<Suite> = if name == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::from_name(name).ok_or_else(|| Error::config("suite", format!("unknown suite `{name}`")))?]
    };
    suites
        .into_iter()
        .map(|s| s.run(instances.unwrap_or(s.default_instances()), seed))
        .collect()
}
