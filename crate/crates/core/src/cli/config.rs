//! Experiment configuration files (TOML). Every section is validated
//! before anything runs; unknown keys are rejected with their path.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{BudgetLedger, BudgetMode, MEDIAN_MASS};

/// Sample size: a number, or a multiple of the schedule's advisory minimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSize {
    Fixed(usize),
    Advisory { advisory_factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    Bernoulli { p: f64 },
    Categorical { masses: Vec<f64> },
    /// ±1 coordinates, each +1 with probability `p`.
    Cube { dim: usize, p: f64 },
    UniformPm1Cube { dim: usize },
    DiscretizedGaussian { grid: GridSpec, mu: f64, sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Linear { lo: f64, hi: f64, points: usize },
    Points(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub mode: BudgetMode,
    pub limit: f64,
}

impl BudgetSpec {
    pub fn ledger(&self) -> BudgetLedger {
        BudgetLedger::new(self.mode, self.limit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismSpec {
    Sq {
        c_eps: f64,
        c_k: f64,
        epsilon: Option<f64>,
        votes: Option<usize>,
        budget: Option<BudgetSpec>,
    },
    Naive,
    Median {
        c_m: f64,
        groups: Option<usize>,
        noise: bool,
        side_mass: f64,
        budget: Option<BudgetSpec>,
    },
}

impl MechanismSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismSpec::Sq { .. } => "sq",
            MechanismSpec::Naive => "naive",
            MechanismSpec::Median { .. } => "median",
        }
    }
}

/// A test query shape for the fixed analyst.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuerySpec {
    Constant { value: f64 },
    Indicator { value: f64 },
    Threshold { at: f64 },
    Identity,
    Coordinate { index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalystSpec {
    Fixed {
        queries: Vec<QuerySpec>,
        rounds: Option<usize>,
        tau: f64,
        delta: f64,
    },
    RandomCorrelation {
        rounds: usize,
        tau: f64,
        delta: f64,
        center: Option<f64>,
    },
    MedianWalk {
        rounds: usize,
        delta: f64,
        max_arity: usize,
        grid_points: usize,
        spacing: f64,
        start: f64,
    },
}

impl AnalystSpec {
    pub fn rounds(&self) -> usize {
        match self {
            AnalystSpec::Fixed { queries, rounds, .. } => rounds.unwrap_or(queries.len()),
            AnalystSpec::RandomCorrelation { rounds, .. } | AnalystSpec::MedianWalk { rounds, .. } => *rounds,
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            AnalystSpec::Fixed { delta, .. }
            | AnalystSpec::RandomCorrelation { delta, .. }
            | AnalystSpec::MedianWalk { delta, .. } => *delta,
        }
    }

    /// Accuracy parameter; median analysts have none.
    pub fn tau(&self) -> Option<f64> {
        match self {
            AnalystSpec::Fixed { tau, .. } | AnalystSpec::RandomCorrelation { tau, .. } => Some(*tau),
            AnalystSpec::MedianWalk { .. } => None,
        }
    }
}

/// Assertions checked after a run; any failure exits with status 3.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    pub min_trials_within: Option<usize>,
    pub max_bias: Option<f64>,
    pub min_mean_test_gap: Option<f64>,
    pub max_mean_test_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub n: SampleSize,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub population: PopulationSpec,
    pub mechanism: MechanismSpec,
    pub analyst: AnalystSpec,
    pub checks: Checks,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    trials: usize,
    n: SampleSize,
    threads: Option<usize>,
    output: Option<PathBuf>,
    population: toml::Table,
    mechanism: toml::Table,
    analyst: toml::Table,
    checks: Option<Checks>,
}

fn section<T: DeserializeOwned>(key: &str, table: toml::Table) -> Result<T> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))
}

fn take_kind(key: &str, table: &mut toml::Table) -> Result<String> {
    match table.remove("kind") {
        Some(toml::Value::String(s)) => Ok(s),
        Some(_) => Err(Error::config(format!("{key}.kind"), "must be a string")),
        None => Err(Error::config(format!("{key}.kind"), "missing")),
    }
}

fn unknown_kind(key: &str, kind: &str, known: &[&str]) -> Error {
    Error::config(
        format!("{key}.kind"),
        format!("unknown {key} `{kind}` (expected one of: {})", known.join(", ")),
    )
}

fn default_c_eps() -> f64 {
    1.0
}
fn default_c_k() -> f64 {
    8.0
}
fn default_c_m() -> f64 {
    crate::mechanisms::median::DEFAULT_C_M
}
fn default_true() -> bool {
    true
}
fn default_side_mass() -> f64 {
    MEDIAN_MASS
}
fn default_max_arity() -> usize {
    4
}
fn default_grid_points() -> usize {
    64
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SqRaw {
    #[serde(default = "default_c_eps")]
    c_eps: f64,
    #[serde(default = "default_c_k")]
    c_k: f64,
    epsilon: Option<f64>,
    votes: Option<usize>,
    budget: Option<BudgetSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NaiveRaw {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MedianRaw {
    #[serde(default = "default_c_m")]
    c_m: f64,
    groups: Option<usize>,
    #[serde(default = "default_true")]
    noise: bool,
    #[serde(default = "default_side_mass")]
    side_mass: f64,
    budget: Option<BudgetSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BernoulliRaw {
    p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoricalRaw {
    masses: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeRaw {
    dim: usize,
    p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformCubeRaw {
    dim: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRaw {
    grid: GridSpec,
    mu: f64,
    sigma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedRaw {
    queries: Vec<QuerySpec>,
    rounds: Option<usize>,
    tau: f64,
    delta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelationRaw {
    rounds: usize,
    tau: f64,
    delta: f64,
    center: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WalkRaw {
    rounds: usize,
    delta: f64,
    #[serde(default = "default_max_arity")]
    max_arity: usize,
    #[serde(default = "default_grid_points")]
    grid_points: usize,
    spacing: f64,
    #[serde(default)]
    start: f64,
}

fn population(mut t: toml::Table) -> Result<PopulationSpec> {
    const KEY: &str = "population";
    let kind = take_kind(KEY, &mut t)?;
    Ok(match kind.as_str() {
        "bernoulli" => {
            let r: BernoulliRaw = section(KEY, t)?;
            PopulationSpec::Bernoulli { p: r.p }
        }
        "categorical" => {
            let r: CategoricalRaw = section(KEY, t)?;
            PopulationSpec::Categorical { masses: r.masses }
        }
        "cube" => {
            let r: CubeRaw = section(KEY, t)?;
            PopulationSpec::Cube { dim: r.dim, p: r.p }
        }
        "uniform_pm1_cube" => {
            let r: UniformCubeRaw = section(KEY, t)?;
            PopulationSpec::UniformPm1Cube { dim: r.dim }
        }
        "discretized_gaussian" => {
            let r: GaussianRaw = section(KEY, t)?;
            PopulationSpec::DiscretizedGaussian {
                grid: r.grid,
                mu: r.mu,
                sigma: r.sigma,
            }
        }
        other => {
            return Err(unknown_kind(
                KEY,
                other,
                &["bernoulli", "categorical", "cube", "uniform_pm1_cube", "discretized_gaussian"],
            ))
        }
    })
}

fn mechanism(mut t: toml::Table) -> Result<MechanismSpec> {
    const KEY: &str = "mechanism";
    let kind = take_kind(KEY, &mut t)?;
    Ok(match kind.as_str() {
        "sq" => {
            let r: SqRaw = section(KEY, t)?;
            MechanismSpec::Sq {
                c_eps: r.c_eps,
                c_k: r.c_k,
                epsilon: r.epsilon,
                votes: r.votes,
                budget: r.budget,
            }
        }
        "naive" => {
            let _: NaiveRaw = section(KEY, t)?;
            MechanismSpec::Naive
        }
        "median" => {
            let r: MedianRaw = section(KEY, t)?;
            MechanismSpec::Median {
                c_m: r.c_m,
                groups: r.groups,
                noise: r.noise,
                side_mass: r.side_mass,
                budget: r.budget,
            }
        }
        other => return Err(unknown_kind(KEY, other, &["sq", "naive", "median"])),
    })
}

fn analyst(mut t: toml::Table) -> Result<AnalystSpec> {
    const KEY: &str = "analyst";
    let kind = take_kind(KEY, &mut t)?;
    Ok(match kind.as_str() {
        "fixed" => {
            let r: FixedRaw = section(KEY, t)?;
            AnalystSpec::Fixed {
                queries: r.queries,
                rounds: r.rounds,
                tau: r.tau,
                delta: r.delta,
            }
        }
        "random_correlation" => {
            let r: CorrelationRaw = section(KEY, t)?;
            AnalystSpec::RandomCorrelation {
                rounds: r.rounds,
                tau: r.tau,
                delta: r.delta,
                center: r.center,
            }
        }
        "median_walk" => {
            let r: WalkRaw = section(KEY, t)?;
            AnalystSpec::MedianWalk {
                rounds: r.rounds,
                delta: r.delta,
                max_arity: r.max_arity,
                grid_points: r.grid_points,
                spacing: r.spacing,
                start: r.start,
            }
        }
        other => return Err(unknown_kind(KEY, other, &["fixed", "random_correlation", "median_walk"])),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| text[..s.start].lines().count().to_string())
                .map_or_else(|| "<document>".to_string(), |line| format!("<line {line}>"));
            Error::config(key, e.message().to_string())
        })?;
        let cfg = ExperimentConfig {
            seed: raw.seed,
            trials: raw.trials,
            n: raw.n,
            threads: raw.threads,
            output: raw.output,
            population: population(raw.population)?,
            mechanism: mechanism(raw.mechanism)?,
            analyst: analyst(raw.analyst)?,
            checks: raw.checks.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::parse(&text)
    }

    /// Checks the cross-section constraints that the types alone do not.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        match self.n {
            SampleSize::Fixed(0) => return Err(Error::config("n", "must be at least 1")),
            SampleSize::Advisory { advisory_factor } if !(advisory_factor > 0.0) => {
                return Err(Error::config("n.advisory_factor", "must be positive"))
            }
            _ => {}
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        if self.analyst.rounds() == 0 {
            return Err(Error::config("analyst.rounds", "must be at least 1"));
        }
        let delta = self.analyst.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config("analyst.delta", "must lie in (0, 1)"));
        }
        if let Some(tau) = self.analyst.tau() {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::config("analyst.tau", "must lie in (0, 1)"));
            }
        }
        let cube_dim = match &self.population {
            PopulationSpec::Cube { dim, .. } | PopulationSpec::UniformPm1Cube { dim } => Some(*dim),
            _ => None,
        };
        match (&self.analyst, &self.mechanism) {
            (AnalystSpec::MedianWalk { .. }, MechanismSpec::Median { .. }) => {
                if cube_dim.is_some() {
                    return Err(Error::config("population.kind", "median analysts need a scalar population"));
                }
            }
            (AnalystSpec::MedianWalk { .. }, _) => {
                return Err(Error::config("mechanism.kind", "a median_walk analyst needs the median mechanism"))
            }
            (_, MechanismSpec::Median { .. }) => {
                return Err(Error::config("mechanism.kind", "the median mechanism needs a median_walk analyst"))
            }
            (AnalystSpec::RandomCorrelation { rounds, .. }, _) => match (&self.population, cube_dim) {
                (_, Some(d)) if d != *rounds => {
                    return Err(Error::config(
                        "population.dim",
                        format!("the attack needs dim = analyst.rounds = {rounds}, got {d}"),
                    ))
                }
                (PopulationSpec::Bernoulli { .. }, _) | (_, Some(_)) => {}
                _ => {
                    return Err(Error::config(
                        "population.kind",
                        "random_correlation runs on a cube (or bernoulli coordinates)",
                    ))
                }
            },
            (AnalystSpec::Fixed { queries, .. }, _) => {
                if queries.is_empty() {
                    return Err(Error::config("analyst.queries", "need at least one query"));
                }
                for q in queries {
                    let ok = match q {
                        QuerySpec::Coordinate { index } => cube_dim.is_some_and(|d| *index < d),
                        QuerySpec::Constant { .. } => true,
                        _ => cube_dim.is_none(),
                    };
                    if !ok {
                        return Err(Error::config(
                            "analyst.queries",
                            format!("{q:?} does not apply to population `{:?}`", self.population),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQ: &str = r#"
seed = 1
trials = 2
n = 50
[population]
kind = "bernoulli"
p = 0.3
[mechanism]
kind = "sq"
[analyst]
kind = "fixed"
tau = 0.1
delta = 0.1
queries = [{ kind = "indicator", value = 1 }, { kind = "constant", value = 0.5 }]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::parse(SQ).unwrap();
        assert_eq!(
            c.mechanism,
            MechanismSpec::Sq {
                c_eps: 1.0,
                c_k: 8.0,
                epsilon: None,
                votes: None,
                budget: None
            }
        );
        assert_eq!(c.analyst.rounds(), 2);
        assert_eq!(c.n, SampleSize::Fixed(50));
    }

    fn key_of(text: &str) -> String {
        match ExperimentConfig::parse(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_names_are_reported_by_key() {
        assert_eq!(key_of(&SQ.replace("\"sq\"", "\"magic\"")), "mechanism.kind");
        assert_eq!(key_of(&SQ.replace("\"bernoulli\"", "\"poisson\"")), "population.kind");
        assert_eq!(key_of(&SQ.replace("p = 0.3", "p = 0.3\nq = 1")), "population");
        assert!(key_of(&SQ.replace("seed = 1", "seed = 1\nextra = 2")).starts_with("<line"));
    }

    #[test]
    fn cross_checks() {
        assert_eq!(key_of(&SQ.replace("trials = 2", "trials = 0")), "trials");
        assert_eq!(key_of(&SQ.replace("tau = 0.1", "tau = 1.0")), "analyst.tau");
        assert_eq!(
            key_of(&SQ.replace("{ kind = \"indicator\", value = 1 }", "{ kind = \"coordinate\", index = 0 }")),
            "analyst.queries"
        );
        let attack = SQ
            .replace("kind = \"fixed\"", "kind = \"random_correlation\"\nrounds = 5")
            .replace("queries = [{ kind = \"indicator\", value = 1 }, { kind = \"constant\", value = 0.5 }]", "")
            .replace("kind = \"bernoulli\"\np = 0.3", "kind = \"uniform_pm1_cube\"\ndim = 4");
        assert_eq!(key_of(&attack), "population.dim");
        assert!(ExperimentConfig::parse(&attack.replace("dim = 4", "dim = 5")).is_ok());
    }

    #[test]
    fn advisory_sample_size() {
        let c = ExperimentConfig::parse(&SQ.replace("n = 50", "n = { advisory_factor = 2.0 }")).unwrap();
        assert_eq!(c.n, SampleSize::Advisory { advisory_factor: 2.0 });
    }
}
